"""Encoder-decoder forecasters mapping a monthly context window to a
12-month forecast, with a scikit-learn estimator surface.

All three variants share the layout: value embedding, a stack of encoder
layers over the context, and a one-shot (non-autoregressive) decoder
whose input is the last 12 context months followed by zero placeholders.
They differ in the attention mechanism and, for the decomposition
variant, in how a trend stream is carried through the decoder.

Contexts are standardized per window before entering the network and
forecasts are mapped back to hundreds of persons/month on the way out;
negative outputs are allowed here and clipped only in report layers.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from . import layers as ly
from .autodiff import Adam, Tensor
from .errors import ConfigError, ShapeError

__all__ = [
    "ModelConfig",
    "BaseForecaster",
    "TransformerForecaster",
    "InformerForecaster",
    "AutoformerForecaster",
    "NaiveForecaster",
    "VARIANTS",
    "make_forecaster",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by the three variants."""

    encoder_layers: int = 4
    decoder_layers: int = 4
    model_dim: int = 32
    heads: int = 4
    ffn_dim: int = 64
    probsparse_factor: float = 5.0
    decomposition_kernel: int = 25
    autocorr_top_k: int | None = None
    autocorr_factor: float = 1.0
    dropout: float = 0.0
    horizon_months: int = 12
    start_token_months: int = 12

    def __post_init__(self):
        if self.model_dim < 1 or self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} must be a positive multiple of "
                f"heads {self.heads}"
            )
        if self.decomposition_kernel % 2 == 0 or self.decomposition_kernel < 1:
            raise ConfigError(
                f"decomposition_kernel must be odd, got {self.decomposition_kernel}"
            )
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("encoder_layers and decoder_layers must be >= 1")
        if self.dropout != 0.0:
            raise ConfigError("dropout is fixed at 0 (disabled) in this build")
        if self.horizon_months < 1 or self.start_token_months < 1:
            raise ConfigError("horizon/start-token lengths must be >= 1")
        if self.probsparse_factor < 1:
            raise ConfigError("probsparse_factor must be >= 1")


def _row_standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    loc = x.mean(axis=1, keepdims=True)
    scl = np.maximum(x.std(axis=1, keepdims=True), 1e-8)
    return (x - loc) / scl, loc, scl


class _NetBase:
    """Shared plumbing: embeddings, decoder input, output head."""

    def __init__(self, cfg: ModelConfig, context_months: int, rng: np.random.Generator):
        if context_months < cfg.start_token_months:
            raise ShapeError(
                f"context length {context_months} shorter than start token "
                f"({cfg.start_token_months})"
            )
        self.cfg = cfg
        self.context_months = context_months
        self.dec_len = cfg.start_token_months + cfg.horizon_months
        self.params: dict[str, Tensor] = {}
        self.enc_embed = ly.Linear(rng, self.params, "enc_embed", 1, cfg.model_dim)
        self.dec_embed = ly.Linear(rng, self.params, "dec_embed", 1, cfg.model_dim)
        self.head = ly.Linear(rng, self.params, "head", cfg.model_dim, 1)

    def _check_context(self, ctx: np.ndarray) -> np.ndarray:
        ctx = np.asarray(ctx, dtype=np.float64)
        if ctx.ndim != 2 or ctx.shape[1] != self.context_months:
            raise ShapeError(
                f"expected context shape (batch, {self.context_months}), got {ctx.shape}"
            )
        return ctx

    def _decoder_values(self, ctx: np.ndarray) -> np.ndarray:
        start = ctx[:, -self.cfg.start_token_months :]
        zeros = np.zeros((ctx.shape[0], self.cfg.horizon_months))
        return np.concatenate([start, zeros], axis=1)

    def _finish(self, decoded: Tensor) -> Tensor:
        out = ad.narrow(decoded, 1, self.cfg.start_token_months, self.cfg.horizon_months)
        return ad.reshape(out, (out.shape[0], self.cfg.horizon_months))


class _TransformerNet(_NetBase):
    def __init__(self, cfg, context_months, rng):
        super().__init__(cfg, context_months, rng)
        d, h, f = cfg.model_dim, cfg.heads, cfg.ffn_dim
        self.enc_pe = ly.positional_encoding(context_months, d)
        self.dec_pe = ly.positional_encoding(self.dec_len, d)
        self.mask = ly.causal_mask(self.dec_len)
        self.enc_layers = [
            (
                ly.MultiHeadAttention(rng, self.params, f"enc{i}.attn", d, h),
                ly.FeedForward(rng, self.params, f"enc{i}", d, f),
            )
            for i in range(cfg.encoder_layers)
        ]
        self.dec_layers = [
            (
                ly.MultiHeadAttention(rng, self.params, f"dec{i}.self", d, h),
                ly.MultiHeadAttention(rng, self.params, f"dec{i}.cross", d, h),
                ly.FeedForward(rng, self.params, f"dec{i}", d, f),
            )
            for i in range(cfg.decoder_layers)
        ]

    def forward(self, ctx: np.ndarray) -> Tensor:
        ctx = self._check_context(ctx)
        x = ad.add(self.enc_embed(ad.constant(ctx[..., None])), ad.constant(self.enc_pe))
        for attn, ffn in self.enc_layers:
            x = ad.layer_norm(ad.add(x, attn(x, x)))
            x = ad.layer_norm(ad.add(x, ffn(x)))
        memory = x
        dec_vals = self._decoder_values(ctx)[..., None]
        y = ad.add(self.dec_embed(ad.constant(dec_vals)), ad.constant(self.dec_pe))
        for self_attn, cross_attn, ffn in self.dec_layers:
            y = ad.layer_norm(ad.add(y, self_attn(y, y, self.mask)))
            y = ad.layer_norm(ad.add(y, cross_attn(y, memory)))
            y = ad.layer_norm(ad.add(y, ffn(y)))
        return self._finish(self.head(y))


class _InformerNet(_NetBase):
    """Sparse-attention encoder with distilling between layers; the
    decoder is the standard masked stack (one-shot output)."""

    def __init__(self, cfg, context_months, rng):
        super().__init__(cfg, context_months, rng)
        d, h, f = cfg.model_dim, cfg.heads, cfg.ffn_dim
        self.enc_pe = ly.positional_encoding(context_months, d)
        self.dec_pe = ly.positional_encoding(self.dec_len, d)
        self.mask = ly.causal_mask(self.dec_len)
        self.enc_layers = [
            (
                ly.MultiHeadAttention(
                    rng, self.params, f"enc{i}.attn", d, h,
                    mechanism="probsparse", probsparse_c=cfg.probsparse_factor,
                ),
                ly.FeedForward(rng, self.params, f"enc{i}", d, f),
            )
            for i in range(cfg.encoder_layers)
        ]
        self.distill = [
            ly.DistillLayer(rng, self.params, f"enc{i}.distill", d)
            for i in range(cfg.encoder_layers - 1)
        ]
        self.dec_layers = [
            (
                ly.MultiHeadAttention(rng, self.params, f"dec{i}.self", d, h),
                ly.MultiHeadAttention(rng, self.params, f"dec{i}.cross", d, h),
                ly.FeedForward(rng, self.params, f"dec{i}", d, f),
            )
            for i in range(cfg.decoder_layers)
        ]

    def forward(self, ctx: np.ndarray) -> Tensor:
        ctx = self._check_context(ctx)
        x = ad.add(self.enc_embed(ad.constant(ctx[..., None])), ad.constant(self.enc_pe))
        for i, (attn, ffn) in enumerate(self.enc_layers):
            x = ad.layer_norm(ad.add(x, attn(x, x)))
            x = ad.layer_norm(ad.add(x, ffn(x)))
            if i < len(self.distill):
                x = self.distill[i](x)
        memory = x
        dec_vals = self._decoder_values(ctx)[..., None]
        y = ad.add(self.dec_embed(ad.constant(dec_vals)), ad.constant(self.dec_pe))
        for self_attn, cross_attn, ffn in self.dec_layers:
            y = ad.layer_norm(ad.add(y, self_attn(y, y, self.mask)))
            y = ad.layer_norm(ad.add(y, cross_attn(y, memory)))
            y = ad.layer_norm(ad.add(y, ffn(y)))
        return self._finish(self.head(y))


class _AutoformerNet(_NetBase):
    """Decomposition variant: layers repeatedly split hidden states into
    seasonal/trend parts, attention works per circular lag, and the
    decoder accumulates projected trends into a value-space stream."""

    def __init__(self, cfg, context_months, rng):
        super().__init__(cfg, context_months, rng)
        d, h, f, kern = cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.decomposition_kernel
        self.kernel = kern
        self.enc_layers = [
            (
                ly.AutoCorrelationAttention(
                    rng, self.params, f"enc{i}.attn", d, h,
                    top_k=cfg.autocorr_top_k, factor=cfg.autocorr_factor,
                ),
                ly.FeedForward(rng, self.params, f"enc{i}", d, f),
            )
            for i in range(cfg.encoder_layers)
        ]
        self.dec_layers = [
            (
                ly.AutoCorrelationAttention(
                    rng, self.params, f"dec{i}.self", d, h,
                    top_k=cfg.autocorr_top_k, factor=cfg.autocorr_factor,
                ),
                ly.AutoCorrelationAttention(
                    rng, self.params, f"dec{i}.cross", d, h,
                    top_k=cfg.autocorr_top_k, factor=cfg.autocorr_factor,
                ),
                ly.FeedForward(rng, self.params, f"dec{i}", d, f),
                ly.Linear(rng, self.params, f"dec{i}.trend", d, 1),
            )
            for i in range(cfg.decoder_layers)
        ]

    def forward(self, ctx: np.ndarray) -> Tensor:
        ctx = self._check_context(ctx)
        b = ctx.shape[0]
        st, hz = self.cfg.start_token_months, self.cfg.horizon_months

        x = self.enc_embed(ad.constant(ctx[..., None]))
        for attn, ffn in self.enc_layers:
            x = ad.add(x, attn(x, x))
            x, _ = ly.series_decomposition(x, self.kernel)
            x = ad.add(x, ffn(x))
            x, _ = ly.series_decomposition(x, self.kernel)
        memory = x

        # decoder init: decompose the raw context, keep its tail, pad the
        # horizon with zeros (seasonal) and the context mean (trend)
        avg = ly.moving_average_matrix(ctx.shape[1], self.kernel)
        trend_ctx = ctx @ avg.T
        seasonal_ctx = ctx - trend_ctx
        seasonal_init = np.concatenate(
            [seasonal_ctx[:, -st:], np.zeros((b, hz))], axis=1
        )
        trend_init = np.concatenate(
            [trend_ctx[:, -st:], np.repeat(ctx.mean(axis=1, keepdims=True), hz, axis=1)],
            axis=1,
        )

        y = self.dec_embed(ad.constant(seasonal_init[..., None]))
        trend_acc = ad.constant(trend_init[..., None])
        for self_attn, cross_attn, ffn, trend_proj in self.dec_layers:
            y = ad.add(y, self_attn(y, y))
            y, t1 = ly.series_decomposition(y, self.kernel)
            y = ad.add(y, cross_attn(y, memory))
            y, t2 = ly.series_decomposition(y, self.kernel)
            y = ad.add(y, ffn(y))
            y, t3 = ly.series_decomposition(y, self.kernel)
            trend_acc = ad.add(trend_acc, trend_proj(ad.add(ad.add(t1, t2), t3)))
        return self._finish(ad.add(self.head(y), trend_acc))


class BaseForecaster(BaseEstimator, RegressorMixin):
    """Common fit/predict machinery; subclasses choose the network."""

    variant = "base"

    def __init__(
        self,
        encoder_layers: int = 4,
        decoder_layers: int = 4,
        model_dim: int = 32,
        heads: int = 4,
        ffn_dim: int = 64,
        dropout: float = 0.0,
        horizon_months: int = 12,
        epochs: int = 25,
        learning_rate: float = 3e-3,
        batch_size: int = 64,
        seed: int = 0,
    ):
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.model_dim = model_dim
        self.heads = heads
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.horizon_months = horizon_months
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    # -- subclass hooks -----------------------------------------------------
    def _config_kwargs(self) -> dict:
        return dict(
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            model_dim=self.model_dim,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            horizon_months=self.horizon_months,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self._config_kwargs())

    def _net_class(self):
        raise NotImplementedError

    # -- estimator API -------------------------------------------------------
    def fit(self, X, y):
        """Train on (context, target) windows; rows are windows.

        Targets are standardized with their own context's location/scale
        and the loss is mean squared error on that scale. The per-epoch
        loss trace lands in ``loss_trace_``.
        """
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[0] == 0:
            raise ConfigError("training dataset is empty")
        if y.shape != (X.shape[0], self.horizon_months):
            raise ShapeError(
                f"targets must be (n, {self.horizon_months}), got {y.shape}"
            )
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

        init_ss, shuffle_ss = np.random.SeedSequence(self.seed).spawn(2)
        net = self._net_class()(
            self.model_config(), X.shape[1], np.random.default_rng(init_ss)
        )
        shuffle_rng = np.random.default_rng(shuffle_ss)

        x_scaled, loc, scl = _row_standardize(X)
        y_scaled = (y - loc) / scl

        opt = Adam(net.params, lr=self.learning_rate)
        n = X.shape[0]
        bs = max(1, min(self.batch_size, n))
        trace = []
        for _ in range(self.epochs):
            perm = shuffle_rng.permutation(n)
            total = 0.0
            for lo in range(0, n, bs):
                idx = perm[lo : lo + bs]
                loss = ad.mse_loss(
                    net.forward(x_scaled[idx]), ad.constant(y_scaled[idx])
                )
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                total += float(loss.data) * len(idx)
            trace.append(total / n)

        self._net = net
        self.params_ = net.params
        self.loss_trace_ = np.array(trace)
        self.context_months_ = X.shape[1]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        """Forecast 12 months per context row, in original units."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.context_months_:
            raise ShapeError(
                f"context length {X.shape[1]} != fitted length {self.context_months_}"
            )
        x_scaled, loc, scl = _row_standardize(X)
        out = self._net.forward(x_scaled)
        return out.data * scl + loc

    # -- checkpointing --------------------------------------------------------
    def save_checkpoint(self, path) -> None:
        check_is_fitted(self, "params_")
        meta = {
            "variant": self.variant,
            "estimator": self.get_params(),
            "context_months": int(self.context_months_),
            "loss_trace": [float(v) for v in self.loss_trace_],
        }
        ad.save_params(path, self.params_, meta=meta)

    @classmethod
    def load_checkpoint(cls, path) -> "BaseForecaster":
        arrays, meta = ad.load_checkpoint(path)
        if meta is None or "variant" not in meta:
            raise ConfigError(f"{path}: checkpoint lacks estimator metadata")
        est = make_forecaster(meta["variant"], **meta["estimator"])
        net = est._net_class()(
            est.model_config(),
            meta["context_months"],
            np.random.default_rng(0),
        )
        for name, tensor in net.params.items():
            if name not in arrays:
                raise ConfigError(f"{path}: checkpoint missing parameter {name}")
            if arrays[name].shape != tensor.data.shape:
                raise ShapeError(
                    f"{path}: parameter {name} has shape {arrays[name].shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data = arrays[name]
        est._net = net
        est.params_ = net.params
        est.loss_trace_ = np.array(meta.get("loss_trace", []))
        est.context_months_ = meta["context_months"]
        est.n_features_in_ = meta["context_months"]
        return est


class TransformerForecaster(BaseForecaster):
    """Classic full-attention encoder-decoder."""

    variant = "transformer"

    def _net_class(self):
        return _TransformerNet


class InformerForecaster(BaseForecaster):
    """Sparse-query attention with encoder distilling."""

    variant = "informer"

    def __init__(
        self,
        encoder_layers: int = 4,
        decoder_layers: int = 4,
        model_dim: int = 32,
        heads: int = 4,
        ffn_dim: int = 64,
        dropout: float = 0.0,
        horizon_months: int = 12,
        epochs: int = 25,
        learning_rate: float = 3e-3,
        batch_size: int = 64,
        seed: int = 0,
        probsparse_factor: float = 5.0,
    ):
        super().__init__(
            encoder_layers=encoder_layers,
            decoder_layers=decoder_layers,
            model_dim=model_dim,
            heads=heads,
            ffn_dim=ffn_dim,
            dropout=dropout,
            horizon_months=horizon_months,
            epochs=epochs,
            learning_rate=learning_rate,
            batch_size=batch_size,
            seed=seed,
        )
        self.probsparse_factor = probsparse_factor

    def _config_kwargs(self):
        kw = super()._config_kwargs()
        kw["probsparse_factor"] = self.probsparse_factor
        return kw

    def _net_class(self):
        return _InformerNet


class AutoformerForecaster(BaseForecaster):
    """Series-decomposition variant with lag-correlation attention."""

    variant = "autoformer"

    def __init__(
        self,
        encoder_layers: int = 4,
        decoder_layers: int = 4,
        model_dim: int = 32,
        heads: int = 4,
        ffn_dim: int = 64,
        dropout: float = 0.0,
        horizon_months: int = 12,
        epochs: int = 25,
        learning_rate: float = 3e-3,
        batch_size: int = 64,
        seed: int = 0,
        decomposition_kernel: int = 25,
        autocorr_top_k: int | None = None,
        autocorr_factor: float = 1.0,
    ):
        super().__init__(
            encoder_layers=encoder_layers,
            decoder_layers=decoder_layers,
            model_dim=model_dim,
            heads=heads,
            ffn_dim=ffn_dim,
            dropout=dropout,
            horizon_months=horizon_months,
            epochs=epochs,
            learning_rate=learning_rate,
            batch_size=batch_size,
            seed=seed,
        )
        self.decomposition_kernel = decomposition_kernel
        self.autocorr_top_k = autocorr_top_k
        self.autocorr_factor = autocorr_factor

    def _config_kwargs(self):
        kw = super()._config_kwargs()
        kw["decomposition_kernel"] = self.decomposition_kernel
        kw["autocorr_top_k"] = self.autocorr_top_k
        kw["autocorr_factor"] = self.autocorr_factor
        return kw

    def _net_class(self):
        return _AutoformerNet


class NaiveForecaster(BaseEstimator, RegressorMixin):
    """Repeats the last context value across the horizon (baseline)."""

    variant = "naive"

    def __init__(self, horizon_months: int = 12, seed: int = 0):
        self.horizon_months = horizon_months
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.context_months_ = X.shape[1]
        self.n_features_in_ = X.shape[1]
        self.loss_trace_ = np.array([])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "context_months_")
        X = check_array(X, dtype=np.float64)
        return np.repeat(X[:, -1:], self.horizon_months, axis=1)


VARIANTS = {
    "transformer": TransformerForecaster,
    "informer": InformerForecaster,
    "autoformer": AutoformerForecaster,
    "naive": NaiveForecaster,
}


def make_forecaster(variant: str, **kwargs) -> BaseEstimator:
    """Instantiate a forecaster by variant name, dropping kwargs the
    variant does not accept (the naive baseline ignores training knobs)."""
    try:
        cls = VARIANTS[variant.lower()]
    except KeyError:
        raise ConfigError(
            f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}"
        ) from None
    valid = set(inspect.signature(cls.__init__).parameters) - {"self"}
    return cls(**{k: v for k, v in kwargs.items() if k in valid})
