"""Forecast accuracy metrics and the variant x context-length grid.

Two MASE denominators are supported because the printed scaling formula
and its usual prose description disagree:

* ``as-printed`` (default): sum over t>=2 of |y_t - y'_{t-1}| — the
  actual at t against the *prediction* one step earlier.
* ``naive-actuals``: sum over t>=2 of |y_t - y_{t-1}| — the classic
  one-step naive forecast of the actuals.

sMAPE is reported as a fraction in [0, 2]; a term with both values zero
contributes 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import MonthlySeries, Stream, WindowSpec, split_window
from .errors import ConfigError, DegenerateDenominatorError, RangeError
from .forecasters import make_forecaster

__all__ = [
    "MASE_MODES",
    "mase",
    "smape",
    "EvalRecord",
    "eval_grid",
    "grid_to_csv",
    "grid_to_table",
    "total_series",
    "training_windows",
    "latest_contexts",
    "DEFAULT_VARIANTS",
]

MASE_MODES = ("as-printed", "naive-actuals")
DEFAULT_VARIANTS = ("autoformer", "transformer", "informer")


def _pair(y, y_pred, min_len: int):
    a = np.asarray(y, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} actuals vs {b.size} predictions")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} points, got {a.size}")
    return a, b


def mase(y, y_pred, denominator: str = "as-printed") -> float:
    """Mean absolute scaled error over the test window.

    Numerator: (1/T) sum |y_t - y'_t|. Denominator: (1/(T-1)) of the
    selected lagged differences (see module docstring). A denominator of
    exactly zero raises :class:`DegenerateDenominatorError` rather than
    returning infinity.
    """
    a, b = _pair(y, y_pred, 2)
    if denominator not in MASE_MODES:
        raise ConfigError(
            f"unknown MASE denominator mode {denominator!r}; options: {MASE_MODES}"
        )
    num = np.abs(a - b).mean()
    if denominator == "as-printed":
        den = np.abs(a[1:] - b[:-1]).mean()
    else:
        den = np.abs(a[1:] - a[:-1]).mean()
    if den == 0.0:
        raise DegenerateDenominatorError(
            f"MASE denominator ({denominator}) is exactly zero"
        )
    return float(num / den)


def smape(y, y_pred) -> float:
    """Symmetric mean absolute percentage error as a fraction in [0, 2]."""
    a, b = _pair(y, y_pred, 1)
    denom = np.abs(a) + np.abs(b)
    terms = np.zeros_like(denom)
    nz = denom > 0
    terms[nz] = 2.0 * np.abs(a - b)[nz] / denom[nz]
    return float(terms.mean())


@dataclass(frozen=True)
class EvalRecord:
    """One grid cell: a variant evaluated at one context length."""

    variant: str
    context_years: int
    mase: float
    smape: float
    degenerate: bool = False


def total_series(data: list[MonthlySeries]) -> list[MonthlySeries]:
    """The per-province Total series, which the grid trains and scores."""
    totals = [s for s in data if s.stream is Stream.TOTAL]
    if not totals:
        raise ConfigError("dataset has no Total series to evaluate")
    return totals


def _training_splits(series: MonthlySeries, spec: WindowSpec, last_target_end, cap: int, stride: int):
    """Split months whose windows end by ``last_target_end``,
    newest-first capped then restored to ascending order."""
    earliest = series.start + spec.context_months
    latest = last_target_end + (-spec.horizon_months)
    splits = []
    m = latest
    while m >= earliest and len(splits) < cap:
        splits.append(m)
        m = m + (-stride)
    return list(reversed(splits))


def training_windows(
    totals: list[MonthlySeries],
    context_years: int,
    horizon_months: int = 12,
    holdout_months: int = 0,
    max_windows_per_series: int = 12,
    window_stride: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack (context, target) training windows across series, using only
    targets that end at least ``holdout_months`` before each series ends."""
    spec = WindowSpec(context_years, horizon_months)
    xs, ys = [], []
    for s in totals:
        cutoff = s.end + (-holdout_months)
        for m in _training_splits(s, spec, cutoff, max_windows_per_series, window_stride):
            ctx, tgt = split_window(s, spec, m)
            xs.append(ctx)
            ys.append(tgt)
    if not xs:
        raise RangeError(
            f"no training window fits: a {context_years}-year context plus "
            f"{horizon_months}-month horizon does not fit the data span"
        )
    return np.array(xs), np.array(ys)


def latest_contexts(
    totals: list[MonthlySeries], context_years: int
) -> tuple[np.ndarray, list[MonthlySeries]]:
    """The final context window of each series (for forecasting past the
    end of the data)."""
    months = 12 * context_years
    xs = []
    for s in totals:
        xs.append(s.window(s.end + (-months), s.end))
    return np.array(xs), totals


def eval_grid(
    data: list[MonthlySeries],
    variants=DEFAULT_VARIANTS,
    years=tuple(range(1, 10)),
    seed: int = 0,
    mase_mode: str = "as-printed",
    horizon_months: int = 12,
    max_windows_per_series: int = 12,
    window_stride: int = 3,
    train_params: dict | None = None,
) -> list[EvalRecord]:
    """Train each variant at each context length and score the held-out
    final year, averaging both metrics across provinces.

    Every requested cell must be feasible: the data must cover the
    context plus horizon and leave at least one training window before
    the held-out year, otherwise :class:`RangeError` is raised up front.
    A degenerate MASE denominator flags the cell instead of crashing.
    """
    totals = total_series(data)
    train_params = dict(train_params or {})
    years = tuple(int(y) for y in years)

    for year in years:
        spec = WindowSpec(year, horizon_months)
        for s in totals:
            eval_split = s.end + (-horizon_months)
            if eval_split + (-spec.context_months) < s.start:
                raise RangeError(
                    f"({s.province.value}, Total) has {len(s)} months; a "
                    f"{year}-year context plus the held-out final year needs "
                    f"{spec.context_months + 2 * horizon_months} (training "
                    "window included)"
                )
            if not _training_splits(s, spec, eval_split, 1, 1):
                raise RangeError(
                    f"({s.province.value}, Total): no training window fits "
                    f"before the held-out year at a {year}-year context"
                )

    records = []
    variant_list = list(variants)
    for vi, variant in enumerate(variant_list):
        for year in years:
            spec = WindowSpec(year, horizon_months)
            x_train, y_train, x_eval, y_eval = [], [], [], []
            for s in totals:
                eval_split = s.end + (-horizon_months)
                ectx, etgt = split_window(s, spec, eval_split)
                x_eval.append(ectx)
                y_eval.append(etgt)
                for m in _training_splits(
                    s, spec, eval_split, max_windows_per_series, window_stride
                ):
                    ctx, tgt = split_window(s, spec, m)
                    x_train.append(ctx)
                    y_train.append(tgt)
            cell_seed = seed * 10007 + vi * 101 + year
            model = make_forecaster(
                variant, seed=cell_seed, horizon_months=horizon_months, **train_params
            )
            model.fit(np.array(x_train), np.array(y_train))
            preds = model.predict(np.array(x_eval))

            mases, smapes, degenerate = [], [], False
            for i in range(len(x_eval)):
                smapes.append(smape(y_eval[i], preds[i]))
                try:
                    mases.append(mase(y_eval[i], preds[i], mase_mode))
                except DegenerateDenominatorError:
                    degenerate = True
            records.append(
                EvalRecord(
                    variant=variant,
                    context_years=year,
                    mase=float(np.mean(mases)) if not degenerate else math.nan,
                    smape=float(np.mean(smapes)),
                    degenerate=degenerate,
                )
            )
    return records


def _fmt(value: float, degenerate: bool) -> str:
    return "deg" if degenerate else f"{value:.4f}"


def grid_to_csv(records: list[EvalRecord]) -> str:
    lines = ["variant,context_years,mase,smape"]
    for r in records:
        lines.append(
            f"{r.variant},{r.context_years},{_fmt(r.mase, r.degenerate)},{r.smape:.4f}"
        )
    return "\n".join(lines) + "\n"


def grid_to_table(records: list[EvalRecord]) -> str:
    """Fixed-width table (years down, variants across) with the single
    best value per metric wrapped in asterisks."""
    variants = []
    for r in records:
        if r.variant not in variants:
            variants.append(r.variant)
    years = sorted({r.context_years for r in records})
    cell = {(r.variant, r.context_years): r for r in records}

    best_mase = min(
        (r.mase for r in records if not r.degenerate), default=math.nan
    )
    best_smape = min(r.smape for r in records)
    marked_mase = marked_smape = False

    width = 12
    header1 = "(yr)".ljust(6) + "".join(v.center(2 * width) for v in variants)
    header2 = "".ljust(6) + "".join(
        "MASE".rjust(width) + "sMAPE".rjust(width) for _ in variants
    )
    lines = [header1, header2]
    for year in years:
        row = [str(year).ljust(6)]
        for v in variants:
            r = cell[(v, year)]
            mtxt = _fmt(r.mase, r.degenerate)
            stxt = f"{r.smape:.4f}"
            if not marked_mase and not r.degenerate and r.mase == best_mase:
                mtxt = f"*{mtxt}*"
                marked_mase = True
            if not marked_smape and r.smape == best_smape:
                stxt = f"*{stxt}*"
                marked_smape = True
            row.append(mtxt.rjust(width) + stxt.rjust(width))
        lines.append("".join(row))
    return "\n".join(lines) + "\n"
