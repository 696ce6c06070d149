import numpy as np
import pytest

from flowcast.causal import CGNetwork, CrisisSpec, GaussianParams, TotalMode
from flowcast.data import COMPONENT_STREAMS, Province, Stream


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_network(
    active=("ON", "AB"),
    params=None,
    total_mode=TotalMode.STRUCTURAL,
    total=None,
    crisis=None,
    prior=None,
):
    """Small-network builder: provinces outside ``active`` get zero prior
    (inference then never touches their placeholder parameters)."""
    active = [Province(a) for a in active]
    if prior is None:
        prior = {p: (1.0 / len(active) if p in active else 0.0) for p in Province}
    else:
        prior = {Province(k): v for k, v in prior.items()}
        for p in Province:
            prior.setdefault(p, 0.0)
    stream_params = {}
    for p in Province:
        for st in COMPONENT_STREAMS:
            stream_params[(p, st)] = GaussianParams(1.0, 1.0)
    if params:
        for (pname, sname), (mu, sigma) in params.items():
            stream_params[(Province(pname), Stream(sname))] = GaussianParams(mu, sigma)
    total_params = None
    if total_mode == TotalMode.FITTED:
        total_params = {p: GaussianParams(3.0, 1.5) for p in Province}
        if total:
            for pname, (mu, sigma) in total.items():
                total_params[Province(pname)] = GaussianParams(mu, sigma)
    return CGNetwork(
        prior=prior,
        stream_params=stream_params,
        total_mode=total_mode,
        total_params=total_params,
        crisis=crisis,
    )


def random_network(rng, max_provinces=3, allow_fitted=True, allow_crisis=True):
    """Randomized small network for oracle-equivalence sweeps."""
    k = int(rng.integers(1, max_provinces + 1))
    chosen = list(rng.choice([p.value for p in Province], size=k, replace=False))
    raw = rng.uniform(0.2, 1.0, size=k)
    weights = raw / raw.sum()
    prior = dict(zip(chosen, weights))
    params = {}
    for pname in chosen:
        for st in COMPONENT_STREAMS:
            mu = float(rng.uniform(2.0, 50.0))
            sigma = float(rng.uniform(0.5, 10.0))
            params[(pname, st.value)] = (mu, sigma)
    total_mode = (
        TotalMode.FITTED
        if (allow_fitted and rng.random() < 0.4)
        else TotalMode.STRUCTURAL
    )
    total = None
    if total_mode == TotalMode.FITTED:
        total = {
            pname: (float(rng.uniform(10.0, 120.0)), float(rng.uniform(1.0, 20.0)))
            for pname in chosen
        }
    crisis = None
    if allow_crisis and rng.random() < 0.3:
        crisis = CrisisSpec(
            probability=float(rng.uniform(0.1, 0.9)),
            refugee_factor=float(rng.uniform(0.5, 2.0)),
            economic_factor=float(rng.uniform(0.5, 2.0)),
        )
    return make_network(
        active=chosen,
        params=params,
        total_mode=total_mode,
        total=total,
        crisis=crisis,
        prior=prior,
    )


def random_evidence(rng, net):
    """Random evidence matching the spec grammar: optional hard province
    plus soft findings on distinct nodes, centered near plausible values."""
    from flowcast.causal import Evidence, HardProvince, SoftGaussian
    from flowcast.causal import province_conditional

    findings = []
    active = [p for p in Province if net.prior[p] > 0]
    if rng.random() < 0.2:
        findings.append(HardProvince(active[int(rng.integers(len(active)))]))
    nodes = [Stream.SPONSOR, Stream.REFUGEE, Stream.ECONOMIC, Stream.TOTAL]
    n_soft = int(rng.integers(1, 3))
    for node in rng.choice(len(nodes), size=n_soft, replace=False):
        node = nodes[int(node)]
        anchor = province_conditional(net, active[int(rng.integers(len(active)))], node)
        m = float(anchor.mu + rng.uniform(-2.0, 2.0) * anchor.sigma)
        s = float(anchor.sigma * rng.uniform(0.3, 2.5))
        findings.append(SoftGaussian(node, m, s))
    return Evidence(*findings)
