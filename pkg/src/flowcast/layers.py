"""Attention mechanisms and series-structure blocks for the forecasters.

Everything here operates on :class:`~flowcast.autodiff.Tensor` values so
gradients flow end to end; a few utilities (positional encoding, masks,
FFT autocorrelation) are plain numpy because they enter the graph as
constants or run outside it.

Conventions: batched sequences are (batch, length, dim); per-head
attention tensors are (batch, heads, length, head_dim); the time axis of
a sequence tensor is axis -2.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

__all__ = [
    "positional_encoding",
    "causal_mask",
    "self_attention",
    "probsparse_attention",
    "probsparse_budget",
    "Linear",
    "MultiHeadAttention",
    "FeedForward",
    "DistillLayer",
    "AutoCorrelationAttention",
    "moving_average_matrix",
    "series_decomposition",
    "autocorrelation",
    "autocorrelation_bruteforce",
    "time_delay_aggregation",
    "autocorr_top_k",
]


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position table: PE[p, 2i] = sin(p / 10000^(2i/dim)),
    PE[p, 2i+1] = cos of the same argument."""
    if length < 1 or dim < 1:
        raise ShapeError(f"positional_encoding: length/dim must be >= 1, got {length}, {dim}")
    if dim % 2 != 0:
        raise ShapeError(f"positional_encoding: dim must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.empty((length, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def causal_mask(length: int) -> np.ndarray:
    """Additive mask: 0 at or below the diagonal, -inf strictly above."""
    mask = np.zeros((length, length), dtype=np.float64)
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


def _swap_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return ad.transpose(t, axes)


def _check_qkv(q: Tensor, k: Tensor, v: Tensor, op: str) -> int:
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeError(f"{op}: Q/K/V must be >= 2-d")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(
            f"{op}: query dim {q.shape[-1]} != key dim {k.shape[-1]} "
            f"(Q {q.shape}, K {k.shape})"
        )
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"{op}: key rows {k.shape[-2]} != value rows {v.shape[-2]}"
        )
    return q.shape[-1]


def self_attention(q, k, v, mask=None, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d) + mask) V; masked entries get -inf pre-softmax."""
    q, k, v = (x if isinstance(x, Tensor) else ad.constant(x) for x in (q, k, v))
    d = _check_qkv(q, k, v, "self_attention")
    scores = ad.scale(ad.matmul(q, _swap_last(k)), 1.0 / math.sqrt(d))
    if mask is not None:
        scores = ad.add(scores, ad.constant(mask))
    weights = ad.softmax(scores, axis=-1)
    out = ad.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def probsparse_budget(n_queries: int, c: float) -> int:
    """Number of queries kept active: min(L, ceil(c * ln L))."""
    if n_queries <= 0:
        raise ShapeError("probsparse_budget: need at least one query")
    return min(n_queries, math.ceil(c * math.log(n_queries)))


def probsparse_attention(q, k, v, c: float = 5.0):
    """Sparse attention: queries ranked by max-minus-mean of their score
    row; the top ``min(L, ceil(c ln L))`` get full softmax attention and
    the rest fall back to the mean of the value rows.

    Scores are computed on the full Q K^T (no key sampling). Ties in the
    ranking break toward lower query indices.
    """
    q, k, v = (x if isinstance(x, Tensor) else ad.constant(x) for x in (q, k, v))
    if c < 1:
        raise ShapeError(f"probsparse_attention: c must be >= 1, got {c}")
    d = _check_qkv(q, k, v, "probsparse_attention")
    n_q = q.shape[-2]
    u = probsparse_budget(n_q, c)

    scores = ad.scale(ad.matmul(q, _swap_last(k)), 1.0 / math.sqrt(d))
    sparsity = scores.data.max(axis=-1) - scores.data.mean(axis=-1)
    order = np.argsort(-sparsity, axis=-1, kind="stable")
    active = np.zeros(sparsity.shape + (1,), dtype=np.float64)
    if u > 0:
        np.put_along_axis(active, order[..., :u, None], 1.0, axis=-2)

    full = ad.matmul(ad.softmax(scores, axis=-1), v)
    lazy = ad.mean(v, axis=-2, keepdims=True)
    gate = ad.constant(active)
    return ad.add(ad.mul(gate, full), ad.mul(ad.constant(1.0 - active), lazy))


class Linear:
    """Affine map registered into a shared parameter dict."""

    def __init__(self, rng, params: dict, name: str, d_in: int, d_out: int):
        self.w = ad.uniform_param(rng, (d_in, d_out), d_in)
        self.b = ad.uniform_param(rng, (d_out,), d_in)
        params[f"{name}.w"] = self.w
        params[f"{name}.b"] = self.b

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, length, dim = x.shape
    return ad.transpose(ad.reshape(x, (b, length, heads, dim // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, heads, length, hd = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, length, heads * hd))


class MultiHeadAttention:
    """Per-head projected attention, concatenated and output-projected.

    ``mechanism`` selects full softmax attention or the sparse variant.
    """

    def __init__(
        self,
        rng,
        params: dict,
        name: str,
        model_dim: int,
        heads: int,
        mechanism: str = "full",
        probsparse_c: float = 5.0,
    ):
        if model_dim % heads != 0:
            raise ShapeError(
                f"{name}: model_dim {model_dim} not divisible by heads {heads}"
            )
        self.heads = heads
        self.mechanism = mechanism
        self.c = probsparse_c
        self.wq = Linear(rng, params, f"{name}.q", model_dim, model_dim)
        self.wk = Linear(rng, params, f"{name}.k", model_dim, model_dim)
        self.wv = Linear(rng, params, f"{name}.v", model_dim, model_dim)
        self.wo = Linear(rng, params, f"{name}.out", model_dim, model_dim)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask=None) -> Tensor:
        q = split_heads(self.wq(x_q), self.heads)
        k = split_heads(self.wk(x_kv), self.heads)
        v = split_heads(self.wv(x_kv), self.heads)
        if self.mechanism == "probsparse":
            out = probsparse_attention(q, k, v, self.c)
        else:
            out = self_attention(q, k, v, mask)
        return self.wo(merge_heads(out))


class FeedForward:
    """Position-wise two-layer network with ReLU."""

    def __init__(self, rng, params: dict, name: str, model_dim: int, ffn_dim: int):
        self.lin1 = Linear(rng, params, f"{name}.ff1", model_dim, ffn_dim)
        self.lin2 = Linear(rng, params, f"{name}.ff2", ffn_dim, model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.relu(self.lin1(x)))


class DistillLayer:
    """Pointwise transform + ReLU, then stride-2 width-3 max pooling.

    Halves the sequence length (to ceil(L/2)) while keeping the
    dominant activations.
    """

    def __init__(self, rng, params: dict, name: str, model_dim: int):
        self.lin = Linear(rng, params, f"{name}.pw", model_dim, model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] < 2:
            raise ShapeError(
                f"distill: sequence length must be >= 2, got {x.shape[-2]}"
            )
        return ad.max_pool1d(ad.relu(self.lin(x)), axis=-2)


# ---------------------------------------------------------------------------
# Series decomposition and autocorrelation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Centered moving-average operator with replicated-edge padding."""
    half = kernel // 2
    a = np.zeros((length, length), dtype=np.float64)
    for t in range(length):
        for j in range(t - half, t + half + 1):
            a[t, min(max(j, 0), length - 1)] += 1.0 / kernel
    a.flags.writeable = False
    return a


def series_decomposition(x, kernel: int):
    """Split into (seasonal, trend): trend is a centered moving average
    with replicated edges, seasonal the exact remainder (x = s + t).

    Accepts a 1-d array/Tensor or a batched (..., L, D) Tensor whose time
    axis is -2. Returns the same container kind as the input.
    """
    if kernel % 2 == 0:
        raise ConfigError(f"decomposition kernel must be odd, got {kernel}")
    if kernel < 1:
        raise ConfigError(f"decomposition kernel must be >= 1, got {kernel}")
    if isinstance(x, Tensor):
        one_d = x.ndim == 1
        xt = ad.reshape(x, (x.shape[0], 1)) if one_d else x
        a = ad.constant(moving_average_matrix(xt.shape[-2], kernel))
        trend = ad.matmul(a, xt)
        seasonal = ad.sub(xt, trend)
        if one_d:
            trend = ad.reshape(trend, (x.shape[0],))
            seasonal = ad.reshape(seasonal, (x.shape[0],))
        return seasonal, trend
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError("series_decomposition: numpy input must be 1-d")
    trend = moving_average_matrix(arr.size, kernel) @ arr
    return arr - trend, trend


def autocorrelation(x) -> np.ndarray:
    """Circular autocorrelation for every lag, normalized to 1 at lag 0.

    Computed in the frequency domain (inverse FFT of the power spectrum),
    which matches the O(L^2) direct sum to rounding error.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ShapeError("autocorrelation: need a 1-d series of length >= 2")
    spectrum = np.fft.rfft(arr)
    r = np.fft.irfft(spectrum * np.conj(spectrum), n=arr.size)
    if r[0] == 0.0:
        out = np.zeros(arr.size)
        out[0] = 1.0
        return out
    return r / r[0]


def autocorrelation_bruteforce(x) -> np.ndarray:
    """Direct O(L^2) circular autocorrelation (reference implementation)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ShapeError("autocorrelation: need a 1-d series of length >= 2")
    length = arr.size
    r = np.array(
        [np.dot(arr, np.roll(arr, -lag)) for lag in range(length)], dtype=np.float64
    )
    if r[0] == 0.0:
        out = np.zeros(length)
        out[0] = 1.0
        return out
    return r / r[0]


def autocorr_top_k(length: int, factor: float = 1.0) -> int:
    """Lag budget for delay aggregation: max(1, floor(factor * ln L))."""
    return max(1, math.floor(factor * math.log(length)))


def _select_lags(score_data: np.ndarray, k: int) -> list[int]:
    """Top-k lags of the leading-dim-averaged scores; ties pick lower lags."""
    flat = score_data.reshape(-1, score_data.shape[-1]).mean(axis=0)
    if k > flat.size:
        raise ShapeError(f"time_delay_aggregation: k={k} exceeds {flat.size} lags")
    order = np.argsort(-flat, kind="stable")
    return [int(i) for i in order[:k]]


def time_delay_aggregation(v, scores, k: int):
    """Blend circularly shifted copies of V at the top-k scoring lags.

    The lag set is chosen from the scores averaged over leading dims
    (shared across a batch); the blend weights are the softmax of each
    row's own scores at those lags. Position t of the output reads
    position (t + lag) mod L of V.
    """
    v = v if isinstance(v, Tensor) else ad.constant(v)
    scores = scores if isinstance(scores, Tensor) else ad.constant(scores)
    one_d = v.ndim == 1
    if one_d:
        v = ad.reshape(v, (v.shape[0], 1))
    if scores.shape[-1] != v.shape[-2]:
        raise ShapeError(
            f"time_delay_aggregation: {scores.shape[-1]} lag scores for "
            f"sequence length {v.shape[-2]}"
        )
    lags = _select_lags(scores.data, k)
    selected = ad.take_lags(scores, lags)
    weights = ad.softmax(selected, axis=-1)
    out = None
    w_shape = tuple(weights.shape[:-1]) + (1, 1)
    for i, lag in enumerate(lags):
        w_i = ad.reshape(ad.narrow(weights, weights.ndim - 1, i, 1), w_shape)
        shifted = ad.roll(v, -lag, axis=-2)
        term = ad.mul(w_i, shifted)
        out = term if out is None else ad.add(out, term)
    if one_d:
        out = ad.reshape(out, (out.shape[-2],))
    return out


class AutoCorrelationAttention:
    """Attention that scores query/key alignment per circular lag and
    aggregates value copies shifted by the best lags.

    When query and key lengths differ, keys/values are zero-padded or
    truncated to the query length so lags align.
    """

    def __init__(
        self,
        rng,
        params: dict,
        name: str,
        model_dim: int,
        heads: int,
        top_k: int | None = None,
        factor: float = 1.0,
    ):
        if model_dim % heads != 0:
            raise ShapeError(
                f"{name}: model_dim {model_dim} not divisible by heads {heads}"
            )
        self.heads = heads
        self.top_k = top_k
        self.factor = factor
        self.wq = Linear(rng, params, f"{name}.q", model_dim, model_dim)
        self.wk = Linear(rng, params, f"{name}.k", model_dim, model_dim)
        self.wv = Linear(rng, params, f"{name}.v", model_dim, model_dim)
        self.wo = Linear(rng, params, f"{name}.out", model_dim, model_dim)

    def _resize(self, t: Tensor, length: int) -> Tensor:
        cur = t.shape[-2]
        if cur == length:
            return t
        if cur > length:
            return ad.narrow(t, t.ndim - 2, 0, length)
        pad_shape = t.shape[:-2] + (length - cur,) + t.shape[-1:]
        return ad.concat([t, ad.constant(np.zeros(pad_shape))], axis=t.ndim - 2)

    def __call__(self, x_q: Tensor, x_kv: Tensor) -> Tensor:
        length = x_q.shape[-2]
        q = split_heads(self.wq(x_q), self.heads)
        k = self._resize(split_heads(self.wk(x_kv), self.heads), length)
        v = self._resize(split_heads(self.wv(x_kv), self.heads), length)
        head_dim = q.shape[-1]
        scores = ad.scale(ad.circ_diag_mean(ad.matmul(q, _swap_last(k))), 1.0 / head_dim)
        k_lags = self.top_k if self.top_k is not None else autocorr_top_k(length, self.factor)
        out = time_delay_aggregation(v, scores, k_lags)
        return self.wo(merge_heads(out))
