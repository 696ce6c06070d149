"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Float64 only, dynamic graphs, CPU numpy buffers. Each operation records
its parents and a closure that routes the incoming gradient to them;
``backward`` walks the graph once in reverse topological order.
Broadcasting follows numpy rules with gradients summed back over
broadcast axes. Distinct graphs may run on distinct threads; a single
graph is not thread-safe.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "uniform_param",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "roll",
    "relu",
    "softmax",
    "layer_norm",
    "mean",
    "tsum",
    "mse_loss",
    "max_pool1d",
    "circ_diag_mean",
    "take_lags",
    "Adam",
    "save_params",
    "load_params",
    "load_checkpoint",
]


class Tensor:
    """A dense float64 array that can participate in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def constant(data) -> Tensor:
    """A graph leaf that never receives gradient."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """A trainable graph leaf."""
    return Tensor(data, requires_grad=True)


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Seeded init: every entry uniform in +/- 1/sqrt(fan_in)."""
    limit = 1.0 / np.sqrt(float(fan_in))
    return parameter(rng.uniform(-limit, limit, size=shape))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back over axes that numpy broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every reachable tensor with requires_grad.

    The loss must be scalar. Gradients accumulate across repeated calls
    until ``zero_grad``; every interior node is visited exactly once per
    call, in reverse topological order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node._accumulate(g)
        if node._backward_fn is not None:
            for parent, pg in node._backward_fn(g):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = np.array(pg, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# Elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _node(data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _node(data, (a, b), bwd, "sub")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: ((a, -g),), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _node(data, (a, b), bwd, "mul")


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _node(a.data * s, (a,), lambda g: ((a, g * s),), "scale")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims do not broadcast, {a.shape} @ {b.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _node(data, (a, b), bwd, "matmul")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return ((a, np.transpose(g, inverse)),)

    return _node(np.transpose(a.data, axes), (a,), bwd, "transpose")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bwd(g):
        return ((a, g.reshape(a.shape)),)

    return _node(data, (a,), bwd, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return tuple(out)

    return _node(data, tuple(tensors), bwd, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    dim = a.shape[axis]
    if start < 0 or length < 0 or start + length > dim:
        raise ShapeError(
            f"narrow: [{start}, {start + length}) outside axis {axis} of size {dim}"
        )
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return ((a, full),)

    return _node(a.data[sl], (a,), bwd, "narrow")


def roll(a, shift: int, axis: int) -> Tensor:
    """Circular shift; element i of the output is input (i - shift) mod L."""
    a = _as_tensor(a)

    def bwd(g):
        return ((a, np.roll(g, -shift, axis=axis)),)

    return _node(np.roll(a.data, shift, axis=axis), (a,), bwd, "roll")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return ((a, g * mask),)

    return _node(np.where(mask, a.data, 0.0), (a,), bwd, "relu")


# ---------------------------------------------------------------------------
# Reductions and normalizations
# ---------------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def bwd(g):
        return ((a, _expand_reduced(g, a.shape, axis, keepdims) / count),)

    return _node(data, (a,), bwd, "mean")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        return ((a, np.array(_expand_reduced(g, a.shape, axis, keepdims))),)

    return _node(data, (a,), bwd, "sum")


def softmax(a, axis: int = -1) -> Tensor:
    """Stabilized softmax; -inf entries get exactly zero weight."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return _node(y, (a,), bwd, "softmax")


def layer_norm(a, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean/unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    n = a.shape[-1]

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - gm - xhat * gx)),)

    return _node(xhat, (a,), bwd, "layer_norm")


def mse_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bwd(g):
        base = (2.0 / n) * diff * g
        return ((pred, base), (target, -base))

    return _node(np.array(np.mean(diff**2)), (pred, target), bwd, "mse_loss")


# ---------------------------------------------------------------------------
# Sequence-model specific ops
# ---------------------------------------------------------------------------


def max_pool1d(a, axis: int = -2) -> Tensor:
    """Width-3, stride-2 max pool with edge replication ("same" padding).

    Output length is ceil(L/2); window centers sit at even input indices.
    """
    a = _as_tensor(a)
    length = a.shape[axis]
    if length < 2:
        raise ShapeError(f"max_pool1d: axis length must be >= 2, got {length}")
    centers = np.arange(0, length, 2)
    windows = np.clip(centers[:, None] + np.array([-1, 0, 1]), 0, length - 1)

    moved = np.moveaxis(a.data, axis, -1)
    gathered = moved[..., windows]  # (..., L_out, 3)
    arg = gathered.argmax(axis=-1)
    pooled = np.take_along_axis(gathered, arg[..., None], axis=-1)[..., 0]
    absidx = windows[np.arange(len(centers)), arg]  # (..., L_out) absolute index
    data = np.moveaxis(pooled, -1, axis)

    def bwd(g):
        gm = np.moveaxis(g, axis, -1)
        flat_g = gm.reshape(-1, gm.shape[-1])
        flat_idx = absidx.reshape(-1, gm.shape[-1])
        out = np.zeros((flat_g.shape[0], length))
        np.add.at(out, (np.arange(flat_g.shape[0])[:, None], flat_idx), flat_g)
        out = out.reshape(moved.shape)
        return ((a, np.moveaxis(out, -1, axis)),)

    return _node(data, (a,), bwd, "max_pool1d")


def circ_diag_mean(s) -> Tensor:
    """Mean over t of S[..., t, (t+lag) % L] for every lag; output (..., L).

    This turns a query-key score matrix into per-lag circular correlation
    scores.
    """
    s = _as_tensor(s)
    if s.ndim < 2 or s.shape[-1] != s.shape[-2]:
        raise ShapeError(f"circ_diag_mean: last two dims must be square, got {s.shape}")
    length = s.shape[-1]
    rows = np.arange(length)[:, None]
    cols = (np.arange(length)[None, :] + rows) % length  # cols[t, lag]
    diag_form = s.data[..., rows, cols]  # (..., t, lag)
    data = diag_form.mean(axis=-2)
    # inverse map: lag index contributing to S[..., t, j] is (j - t) mod L
    inv = (np.arange(length)[None, :] - np.arange(length)[:, None]) % length

    def bwd(g):
        return ((s, g[..., inv] / length),)

    return _node(data, (s,), bwd, "circ_diag_mean")


def take_lags(scores, lags) -> Tensor:
    """Gather score entries at distinct lag positions along the last axis."""
    scores = _as_tensor(scores)
    lags = tuple(int(l) for l in lags)
    if len(set(lags)) != len(lags):
        raise ShapeError(f"take_lags: lags must be distinct, got {lags}")
    idx = np.array(lags)

    def bwd(g):
        full = np.zeros_like(scores.data)
        full[..., idx] = g
        return ((scores, full),)

    return _node(scores.data[..., idx], (scores,), bwd, "take_lags")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"adam: grad shape {g.shape} != param shape {p.data.shape} for {name}"
                )
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

_MAGIC = b"FWCKPT1\n"


def save_params(path, params: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 buffers with shape headers.

    Layout: magic line, 8-byte big-endian JSON header length, JSON header
    (names, shapes, dtype, optional meta), then each buffer's raw C-order
    float64 bytes in name order. Output bytes are deterministic for
    identical content (names sorted, no timestamps).
    """
    names = sorted(params)
    header = {
        "names": names,
        "shapes": {
            k: list(np.asarray(getattr(params[k], "data", params[k])).shape)
            for k in names
        },
        "dtype": "float64",
    }
    if meta is not None:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(">Q", len(blob)))
        fh.write(blob)
        for k in names:
            arr = np.ascontiguousarray(
                getattr(params[k], "data", params[k]), dtype=np.float64
            )
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Bit-exact inverse of :func:`save_params`, including the meta block."""
    with Path(path).open("rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (hlen,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        out = {}
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            out[name] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return out, header.get("meta")


def load_params(path) -> dict[str, np.ndarray]:
    """Load just the named buffers from a checkpoint."""
    return load_checkpoint(path)[0]
