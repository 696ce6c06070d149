"""Presentation helpers: sum-preserving rounding, probability tables,
mixture summaries, and plot-ready density grids.

Computation never truncates probability mass; only these display
routines do, and the default threshold (0.1%) applies to mixture
component listings, not to the inference itself.
"""

from __future__ import annotations

import math

import numpy as np

from .causal import GaussianMixture

__all__ = [
    "round_preserving_sum",
    "province_table",
    "mixture_table",
    "density_grid",
    "density_csv",
]


def round_preserving_sum(values, decimals: int = 2, target: float = 100.0) -> list[float]:
    """Largest-remainder rounding so the rounded values sum exactly to
    ``target`` at the given number of decimals."""
    vals = np.asarray(values, dtype=np.float64)
    scale = 10.0**decimals
    raw = vals * scale
    floors = np.floor(raw)
    short = int(round(target * scale - floors.sum()))
    if short > 0:
        order = np.argsort(-(raw - floors), kind="stable")
        floors[order[:short]] += 1.0
    return [float(v) / scale for v in floors]


def province_table(posterior: dict, decimals: int = 2) -> list[str]:
    """All ten provinces with percentages that re-sum to exactly 100."""
    names = [p.value for p in posterior]
    pcts = round_preserving_sum(
        [100.0 * float(w) for w in posterior.values()], decimals, target=100.0
    )
    width = decimals + 4
    return [f"  {n:<4} {pct:>{width}.{decimals}f}%" for n, pct in zip(names, pcts)]


def mixture_table(
    mix: GaussianMixture, threshold: float = 0.001, decimals: int = 2
) -> list[str]:
    """Component listing (weight, mu, sigma); components whose weight
    falls below the display threshold are summarized, not shown."""
    lines = []
    hidden = 0
    hidden_mass = 0.0
    labels = mix.labels or [f"#{i}" for i in range(len(mix.components))]
    for label, (w, mu, sigma) in zip(labels, mix.components):
        if w < threshold:
            hidden += 1
            hidden_mass += w
            continue
        lines.append(
            f"  {label:<12} w={100 * w:6.{decimals}f}%  "
            f"mu={mu:10.{decimals}f}  sigma={sigma:9.{decimals}f}"
        )
    if hidden:
        lines.append(
            f"  ({hidden} components below {100 * threshold:g}% display "
            f"threshold, total mass {100 * hidden_mass:.3f}%)"
        )
    lines.append(
        f"  mixture mean={mix.mean():.{decimals}f}  std={mix.std():.{decimals}f}"
    )
    return lines


def density_grid(mix: GaussianMixture, max_points: int = 40001) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation grid wide and fine enough that the trapezoid integral
    of the density lands within 1e-3 of 1."""
    lo = min(mu - 8.0 * sigma for _, mu, sigma in mix.components)
    hi = max(mu + 8.0 * sigma for _, mu, sigma in mix.components)
    step = min(sigma for _, _, sigma in mix.components) / 4.0
    n = int(math.ceil((hi - lo) / step)) + 1
    n = max(801, min(n, max_points))
    xs = np.linspace(lo, hi, n)
    return xs, mix.pdf(xs)


def density_csv(mix: GaussianMixture, node_name: str) -> str:
    xs, pdf = density_grid(mix)
    lines = [f"{node_name},density"]
    for x, d in zip(xs, pdf):
        lines.append(f"{x:.6f},{d:.10e}")
    return "\n".join(lines) + "\n"
