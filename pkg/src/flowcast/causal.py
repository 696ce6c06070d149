"""Diamond-shaped conditional-Gaussian network over migration streams.

Structure: a discrete Province root, Gaussian Sponsor/Refugee/Economic
children (conditionally independent given province), and a Total node
that is either the exact structural sum of the three components
(``STRUCTURAL``) or its own fitted Gaussian per province (``FITTED``).
An optional latent crisis switch scales Refugee/Economic means.

Soft evidence is a Normal virtual finding N(m, s) on a continuous node,
combined by density product. Inference is exact: per discrete context
(province, and crisis state when present) the component vector is
jointly Gaussian, each finding is a linear-Gaussian observation of it,
and findings are folded in by sequential conditioning. Posteriors over
continuous nodes are therefore Gaussian mixtures weighted by the
discrete posterior.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .data import COMPONENT_STREAMS, MonthlySeries, Province, Stream
from .errors import (
    ConfigError,
    FitError,
    InconsistentEvidenceError,
    ModeError,
)

__all__ = [
    "TotalMode",
    "GaussianParams",
    "CrisisSpec",
    "CGNetwork",
    "HardProvince",
    "SoftGaussian",
    "Evidence",
    "GaussianMixture",
    "fit_parameters",
    "province_conditional",
    "soft_evidence_likelihood",
    "posterior_province",
    "posterior_node",
    "decompose_total",
    "apply_crisis",
    "paper_snapshot_path",
    "load_network",
    "save_network",
]

SIGMA_FLOOR = 1e-6


class TotalMode:
    STRUCTURAL = "structural"
    FITTED = "fitted"
    ALL = (STRUCTURAL, FITTED)


@dataclass(frozen=True)
class GaussianParams:
    """Mean and standard deviation, in hundreds of persons/month."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class CrisisSpec:
    """Latent binary disruption: with probability ``probability`` the
    Refugee/Economic means are multiplied by their factors."""

    probability: float
    refugee_factor: float = 1.0
    economic_factor: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("crisis probability must be in [0, 1]")
        if self.refugee_factor <= 0 or self.economic_factor <= 0:
            raise ConfigError("crisis factors must be > 0")


@dataclass(frozen=True)
class HardProvince:
    province: Province


@dataclass(frozen=True)
class SoftGaussian:
    """Virtual finding: the node was observed through N(mean, std)."""

    node: Stream
    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise ConfigError(f"soft evidence std must be > 0, got {self.std}")


class Evidence:
    """Zero or more findings, at most one per node."""

    def __init__(self, *findings):
        seen = set()
        hard = None
        soft = []
        for f in findings:
            if isinstance(f, HardProvince):
                key = "province"
            elif isinstance(f, SoftGaussian):
                key = f.node
            else:
                raise ConfigError(f"unsupported finding type {type(f).__name__}")
            if key in seen:
                raise ConfigError(f"more than one finding on node {key}")
            seen.add(key)
            if isinstance(f, HardProvince):
                hard = f
            else:
                soft.append(f)
        self.hard_province = hard
        # canonical node order keeps sequential updates deterministic
        order = list(Stream)
        self.soft = tuple(sorted(soft, key=lambda f: order.index(f.node)))

    def __iter__(self):
        if self.hard_province is not None:
            yield self.hard_province
        yield from self.soft

    def __len__(self):
        return len(self.soft) + (self.hard_province is not None)

    def soft_on(self, node: Stream):
        for f in self.soft:
            if f.node is node:
                return f
        return None

    def __repr__(self):
        return f"Evidence({', '.join(map(repr, self))})"


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted Gaussian components; the exact posterior family for a
    continuous node under a discrete root."""

    components: tuple[tuple[float, float, float], ...]  # (weight, mu, sigma)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        w = np.array([c[0] for c in self.components], dtype=np.float64)
        if len(self.components) == 0:
            raise ConfigError("mixture needs at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must be >= 0 and sum to 1")
        for _, _, sigma in self.components:
            if not (sigma > 0):
                raise ConfigError("mixture component sigma must be > 0")
        if self.labels is not None and len(self.labels) != len(self.components):
            raise ConfigError("labels must match components")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    def mean(self) -> float:
        return float(sum(w * mu for w, mu, _ in self.components))

    def variance(self) -> float:
        m = self.mean()
        return float(
            sum(w * (sigma**2 + (mu - m) ** 2) for w, mu, sigma in self.components)
        )

    def std(self) -> float:
        return math.sqrt(self.variance())

    def pdf(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        out = np.zeros_like(xs)
        for w, mu, sigma in self.components:
            z = (xs - mu) / sigma
            out += w * np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
        return out


@dataclass(frozen=True)
class CGNetwork:
    """Immutable network parameters.

    ``stream_params`` maps (province, component stream) to Gaussians;
    ``total_params`` exists only in FITTED mode. ``metadata`` is an
    opaque block (provenance notes, reference annotations) round-tripped
    by the serializer and ignored by inference.
    """

    prior: dict[Province, float]
    stream_params: dict[tuple[Province, Stream], GaussianParams]
    total_mode: str = TotalMode.STRUCTURAL
    total_params: dict[Province, GaussianParams] | None = None
    crisis: CrisisSpec | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.total_mode not in TotalMode.ALL:
            raise ConfigError(f"unknown total mode {self.total_mode!r}")
        missing = [p for p in Province if p not in self.prior]
        if missing:
            raise ConfigError(f"prior missing provinces: {[p.value for p in missing]}")
        vec = np.array([self.prior[p] for p in Province], dtype=np.float64)
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-12:
            raise ConfigError("prior must be non-negative and sum to 1 (within 1e-12)")
        for p in Province:
            for st in COMPONENT_STREAMS:
                if (p, st) not in self.stream_params:
                    raise ConfigError(
                        f"missing stream parameters for ({p.value}, {st.value})"
                    )
        if self.total_mode == TotalMode.STRUCTURAL:
            if self.total_params is not None:
                raise ConfigError("structural mode derives Total; do not store it")
        else:
            if self.total_params is None or any(
                p not in self.total_params for p in Province
            ):
                raise ConfigError("fitted mode requires Total parameters per province")

    def prior_vector(self) -> np.ndarray:
        return np.array([self.prior[p] for p in Province], dtype=np.float64)


def paper_snapshot_path() -> Path:
    """The packaged reference parameter snapshot."""
    return Path(str(resources.files("flowcast.data_files") / "paper_params.json"))


# ---------------------------------------------------------------------------
# Fitting and (de)serialization
# ---------------------------------------------------------------------------


def fit_parameters(data: list[MonthlySeries], total_mode: str = "auto") -> CGNetwork:
    """Per province/stream: mu = sample mean, sigma = unbiased sample std
    (floored at 1e-6 with a warning). The prior is uniform. With
    ``total_mode='auto'`` the result is FITTED when Total series are
    present for every province and STRUCTURAL when none are; partial
    Total coverage is a :class:`FitError`.
    """
    by_key: dict[tuple[Province, Stream], MonthlySeries] = {}
    for s in data:
        by_key[(s.province, s.stream)] = s

    def summarize(series: MonthlySeries) -> GaussianParams:
        if len(series) < 2:
            raise FitError(
                f"({series.province.value}, {series.stream.value}) needs >= 2 "
                f"months to fit, has {len(series)}"
            )
        mu = float(series.values.mean())
        sigma = float(series.values.std(ddof=1))
        if sigma < SIGMA_FLOOR:
            warnings.warn(
                f"({series.province.value}, {series.stream.value}) has ~zero "
                f"variance; sigma floored at {SIGMA_FLOOR}",
                stacklevel=2,
            )
            sigma = SIGMA_FLOOR
        return GaussianParams(mu, sigma)

    stream_params = {}
    for p in Province:
        for st in COMPONENT_STREAMS:
            series = by_key.get((p, st))
            if series is None:
                raise FitError(f"no data for ({p.value}, {st.value})")
            stream_params[(p, st)] = summarize(series)

    have_total = [p for p in Province if (p, Stream.TOTAL) in by_key]
    if total_mode == "auto":
        if len(have_total) == len(list(Province)):
            total_mode = TotalMode.FITTED
        elif not have_total:
            total_mode = TotalMode.STRUCTURAL
        else:
            missing = [p.value for p in Province if p not in have_total]
            raise FitError(f"Total series present for some provinces but not {missing}")
    if total_mode not in TotalMode.ALL:
        raise ConfigError(f"unknown total mode {total_mode!r}")

    total_params = None
    if total_mode == TotalMode.FITTED:
        total_params = {}
        for p in Province:
            series = by_key.get((p, Stream.TOTAL))
            if series is None:
                raise FitError(f"no Total data for {p.value} (fitted mode)")
            total_params[p] = summarize(series)

    uniform = 1.0 / len(list(Province))
    return CGNetwork(
        prior={p: uniform for p in Province},
        stream_params=stream_params,
        total_mode=total_mode,
        total_params=total_params,
    )


def save_network(net: CGNetwork, path) -> None:
    payload = {
        "format": "flowcast-network-v1",
        "mode": net.total_mode,
        "prior": {p.value: net.prior[p] for p in Province},
        "streams": {
            p.value: {
                st.value: {
                    "mu": net.stream_params[(p, st)].mu,
                    "sigma": net.stream_params[(p, st)].sigma,
                }
                for st in COMPONENT_STREAMS
            }
            for p in Province
        },
    }
    if net.total_params is not None:
        payload["total"] = {
            p.value: {"mu": net.total_params[p].mu, "sigma": net.total_params[p].sigma}
            for p in Province
        }
    if net.crisis is not None:
        payload["crisis"] = {
            "probability": net.crisis.probability,
            "refugee_factor": net.crisis.refugee_factor,
            "economic_factor": net.crisis.economic_factor,
        }
    if net.metadata:
        payload["metadata"] = net.metadata
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_network(path) -> CGNetwork:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw.get("format") != "flowcast-network-v1":
        raise ConfigError(f"{path}: not a network parameter file")
    prior = {Province(p): float(v) for p, v in raw["prior"].items()}
    stream_params = {}
    for pname, streams in raw["streams"].items():
        p = Province(pname)
        for sname, entry in streams.items():
            stream_params[(p, Stream(sname))] = GaussianParams(
                float(entry["mu"]), float(entry["sigma"])
            )
    total_params = None
    if "total" in raw:
        total_params = {
            Province(p): GaussianParams(float(e["mu"]), float(e["sigma"]))
            for p, e in raw["total"].items()
        }
    crisis = None
    if raw.get("crisis"):
        c = raw["crisis"]
        crisis = CrisisSpec(
            float(c["probability"]),
            float(c.get("refugee_factor", 1.0)),
            float(c.get("economic_factor", 1.0)),
        )
    return CGNetwork(
        prior=prior,
        stream_params=stream_params,
        total_mode=raw["mode"],
        total_params=total_params,
        crisis=crisis,
        metadata=raw.get("metadata", {}),
    )


# ---------------------------------------------------------------------------
# Exact inference
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    """One discrete configuration: province (and crisis state), holding
    the joint Gaussian over the continuous state vector."""

    province: Province
    crisis_active: bool
    log_weight: float
    mean: np.ndarray  # state vector mean
    cov: np.ndarray  # state covariance (starts diagonal)
    obs_map: dict[Stream, np.ndarray]  # node -> linear observation vector


def _component_params(net: CGNetwork, province: Province, crisis_active: bool):
    out = []
    for st in COMPONENT_STREAMS:
        g = net.stream_params[(province, st)]
        mu = g.mu
        if crisis_active and net.crisis is not None:
            if st is Stream.REFUGEE:
                mu *= net.crisis.refugee_factor
            elif st is Stream.ECONOMIC:
                mu *= net.crisis.economic_factor
        out.append((mu, g.sigma))
    return out


def _contexts(net: CGNetwork, evidence: Evidence | None = None) -> list[_Context]:
    evidence = evidence if evidence is not None else Evidence()
    states = [(False, 1.0)]
    if net.crisis is not None and net.crisis.probability > 0.0:
        pi = net.crisis.probability
        states = [(False, 1.0 - pi), (True, pi)] if pi < 1.0 else [(True, 1.0)]

    hard = evidence.hard_province
    contexts = []
    for p in Province:
        prior_p = net.prior[p]
        if hard is not None and p is not hard.province:
            continue
        if hard is None and prior_p == 0.0:
            continue
        if hard is not None and prior_p == 0.0:
            raise InconsistentEvidenceError(
                f"hard evidence on {p.value}, but its prior probability is 0"
            )
        for active, weight in states:
            if weight == 0.0:
                continue
            comps = _component_params(net, p, active)
            if net.total_mode == TotalMode.STRUCTURAL:
                mean = np.array([mu for mu, _ in comps])
                cov = np.diag([sg**2 for _, sg in comps])
                obs = {
                    Stream.SPONSOR: np.array([1.0, 0.0, 0.0]),
                    Stream.REFUGEE: np.array([0.0, 1.0, 0.0]),
                    Stream.ECONOMIC: np.array([0.0, 0.0, 1.0]),
                    Stream.TOTAL: np.array([1.0, 1.0, 1.0]),
                }
            else:
                tot = net.total_params[p]
                mean = np.array([mu for mu, _ in comps] + [tot.mu])
                cov = np.diag([sg**2 for _, sg in comps] + [tot.sigma**2])
                obs = {
                    Stream.SPONSOR: np.array([1.0, 0.0, 0.0, 0.0]),
                    Stream.REFUGEE: np.array([0.0, 1.0, 0.0, 0.0]),
                    Stream.ECONOMIC: np.array([0.0, 0.0, 1.0, 0.0]),
                    Stream.TOTAL: np.array([0.0, 0.0, 0.0, 1.0]),
                }
            log_w = math.log(weight)
            if hard is None:
                log_w += math.log(prior_p)
            contexts.append(_Context(p, active, log_w, mean, cov, obs))
    return contexts


def _log_normal_pdf(x: float, mu: float, var: float) -> float:
    z2 = (x - mu) ** 2 / var
    return -0.5 * (z2 + math.log(2.0 * math.pi * var))


def _condition(ctx: _Context, findings) -> float:
    """Fold soft findings into the context's Gaussian; returns the
    accumulated log marginal likelihood (exact, via the chain rule)."""
    loglik = 0.0
    for f in findings:
        a = ctx.obs_map[f.node]
        pred_mean = float(a @ ctx.mean)
        pred_var = float(a @ ctx.cov @ a) + f.std**2
        loglik += _log_normal_pdf(f.mean, pred_mean, pred_var)
        gain = (ctx.cov @ a) / pred_var
        ctx.mean = ctx.mean + gain * (f.mean - pred_mean)
        ctx.cov = ctx.cov - np.outer(gain, a @ ctx.cov)
    return loglik


def _posterior_contexts(net: CGNetwork, evidence: Evidence):
    contexts = _contexts(net, evidence)
    logs = np.array(
        [ctx.log_weight + _condition(ctx, evidence.soft) for ctx in contexts]
    )
    finite = np.isfinite(logs)
    if not finite.any():
        raise InconsistentEvidenceError(
            "evidence leaves zero likelihood mass on every province"
        )
    top = logs[finite].max()
    weights = np.where(finite, np.exp(np.clip(logs - top, -745.0, 0.0)), 0.0)
    total = weights.sum()
    if total == 0.0:
        raise InconsistentEvidenceError(
            "evidence leaves zero likelihood mass on every province"
        )
    return contexts, weights / total


def posterior_province(net: CGNetwork, evidence: Evidence | None = None) -> dict[Province, float]:
    """Posterior over provinces given the evidence (sums to 1)."""
    evidence = evidence if evidence is not None else Evidence()
    contexts, weights = _posterior_contexts(net, evidence)
    out = {p: 0.0 for p in Province}
    for ctx, w in zip(contexts, weights):
        out[ctx.province] += float(w)
    return out


def province_conditional(net: CGNetwork, province: Province, node: Stream) -> GaussianParams:
    """The node's Gaussian given the province, with no other evidence and
    the crisis (if configured) inactive. Structural Total is the derived
    sum: mean of means, variance of summed variances."""
    if node is Stream.TOTAL:
        if net.total_mode == TotalMode.FITTED:
            return net.total_params[province]
        comps = [net.stream_params[(province, st)] for st in COMPONENT_STREAMS]
        return GaussianParams(
            sum(c.mu for c in comps),
            math.sqrt(sum(c.sigma**2 for c in comps)),
        )
    return net.stream_params[(province, node)]


def soft_evidence_likelihood(net: CGNetwork, province: Province, finding: SoftGaussian) -> float:
    """Marginal likelihood of one finding given a province: the Normal
    density of its mean under N(mu_node, sqrt(s^2 + sigma_node^2))."""
    g = province_conditional(net, province, finding.node)
    var = finding.std**2 + g.sigma**2
    return math.exp(_log_normal_pdf(finding.mean, g.mu, var))


def posterior_node(net: CGNetwork, node: Stream, evidence: Evidence | None = None) -> GaussianMixture:
    """Exact posterior of a continuous node as a Gaussian mixture whose
    weights are the discrete posterior; zero-weight contexts are dropped."""
    evidence = evidence if evidence is not None else Evidence()
    contexts, weights = _posterior_contexts(net, evidence)
    comps, labels = [], []
    for ctx, w in zip(contexts, weights):
        if w == 0.0:
            continue
        a = ctx.obs_map[node]
        mu = float(a @ ctx.mean)
        sigma = math.sqrt(max(float(a @ ctx.cov @ a), SIGMA_FLOOR**2))
        comps.append((float(w), mu, sigma))
        label = ctx.province.value + (" (crisis)" if ctx.crisis_active else "")
        labels.append(label)
    return GaussianMixture(tuple(comps), tuple(labels))


def decompose_total(net: CGNetwork, evidence: Evidence) -> dict[Stream, float]:
    """Posterior mean of each component (and of Total) given evidence
    that includes a Total finding; structural mode only.

    By linearity of conditioning the three component means always sum to
    the Total mean.
    """
    if net.total_mode != TotalMode.STRUCTURAL:
        raise ModeError(
            "decompose_total requires a structural-mode network; refit or "
            "convert with total_mode='structural'"
        )
    if evidence.soft_on(Stream.TOTAL) is None:
        raise ConfigError("decompose_total needs a soft finding on Total")
    contexts, weights = _posterior_contexts(net, evidence)
    means = {st: 0.0 for st in COMPONENT_STREAMS}
    total = 0.0
    for ctx, w in zip(contexts, weights):
        for i, st in enumerate(COMPONENT_STREAMS):
            means[st] += float(w) * float(ctx.mean[i])
        total += float(w) * float(ctx.mean.sum())
    means[Stream.TOTAL] = total
    return means


def apply_crisis(net: CGNetwork, active: bool) -> CGNetwork:
    """Materialize the crisis state: active scales the Refugee/Economic
    means by the configured factors, inactive returns the baseline. The
    result has no crisis node left to marginalize."""
    if net.crisis is None:
        raise ConfigError("network has no crisis specification")
    stream_params = {}
    for (p, st), g in net.stream_params.items():
        mu = g.mu
        if active:
            if st is Stream.REFUGEE:
                mu *= net.crisis.refugee_factor
            elif st is Stream.ECONOMIC:
                mu *= net.crisis.economic_factor
        stream_params[(p, st)] = GaussianParams(mu, g.sigma)
    return CGNetwork(
        prior=dict(net.prior),
        stream_params=stream_params,
        total_mode=net.total_mode,
        total_params=None if net.total_params is None else dict(net.total_params),
        crisis=None,
        metadata=dict(net.metadata),
    )
