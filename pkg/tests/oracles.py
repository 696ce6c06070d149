"""Independent reference implementations used to cross-check the library.

Everything here deliberately avoids the code paths under test: gradients
come from central finite differences, Bayesian posteriors from
Gauss-Hermite quadrature over the raw generative parameters and from
weighted forward sampling. These stay brute-force and simple on purpose.
"""

from __future__ import annotations

import math

import numpy as np

from flowcast.autodiff import backward, mse_loss, constant
from flowcast.causal import CGNetwork, Evidence, TotalMode
from flowcast.data import COMPONENT_STREAMS, Province, Stream

# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(
    loss_fn,
    params: dict,
    rng: np.random.Generator,
    eps: float = 1e-4,
    coords_per_tensor: int = 5,
    rel_tol: float = 1e-3,
    abs_floor: float = 1e-6,
):
    """Compare analytic gradients with central differences.

    ``loss_fn`` rebuilds the forward graph and returns a scalar Tensor.
    Each parameter tensor gets ``coords_per_tensor`` random coordinates
    probed (all coordinates if the tensor is small). A coordinate passes
    when |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) or
    both are below the absolute floor.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss)

    failures = []
    for name, p in params.items():
        flat = p.data.ravel()
        grad = (
            p.grad.ravel()
            if p.grad is not None
            else np.zeros_like(flat)
        )
        if flat.size <= coords_per_tensor:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = float(loss_fn().data.item())
            flat[idx] = orig - eps
            lm = float(loss_fn().data.item())
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = grad[idx]
            err = abs(analytic - numeric)
            if err <= rel_tol * max(abs(analytic), abs(numeric)):
                continue
            if abs(analytic) < abs_floor and abs(numeric) < abs_floor:
                continue
            failures.append((name, int(idx), analytic, numeric, err))
    return failures


def model_loss_fn(net, ctx: np.ndarray, tgt: np.ndarray):
    def fn():
        return mse_loss(net.forward(ctx), constant(tgt))

    return fn


# ---------------------------------------------------------------------------
# Bayesian-network oracles (independent of flowcast.causal internals)
# ---------------------------------------------------------------------------


def _net_contexts(net: CGNetwork):
    """Enumerate (province, crisis_active, weight) with raw parameters."""
    states = [(False, 1.0)]
    if net.crisis is not None and net.crisis.probability > 0:
        pi = net.crisis.probability
        states = [(False, 1.0 - pi), (True, pi)]
    for p in Province:
        if net.prior[p] == 0.0:
            continue
        for active, w in states:
            if w == 0.0:
                continue
            mus, sds = [], []
            for st in COMPONENT_STREAMS:
                g = net.stream_params[(p, st)]
                mu = g.mu
                if active:
                    if st is Stream.REFUGEE:
                        mu *= net.crisis.refugee_factor
                    elif st is Stream.ECONOMIC:
                        mu *= net.crisis.economic_factor
                mus.append(mu)
                sds.append(g.sigma)
            if net.total_mode == TotalMode.FITTED:
                mus.append(net.total_params[p].mu)
                sds.append(net.total_params[p].sigma)
            yield p, active, net.prior[p] * w, np.array(mus), np.array(sds)


def _node_value(net: CGNetwork, node: Stream, grid_cols):
    """Value of a node as a function of the state columns."""
    if node is Stream.TOTAL and net.total_mode == TotalMode.STRUCTURAL:
        return grid_cols[0] + grid_cols[1] + grid_cols[2]
    index = {
        Stream.SPONSOR: 0,
        Stream.REFUGEE: 1,
        Stream.ECONOMIC: 2,
        Stream.TOTAL: 3,
    }[node]
    return grid_cols[index]


def quad_posterior(net: CGNetwork, evidence: Evidence, node: Stream | None = None, n_nodes: int = 64):
    """Gauss-Hermite tensor-grid posterior.

    Returns (province posterior dict, node mean, node variance); the node
    stats are None when ``node`` is None. Hard province evidence simply
    restricts the enumeration.
    """
    xs, ws = np.polynomial.hermite.hermgauss(n_nodes)
    dims = 3 if net.total_mode == TotalMode.STRUCTURAL else 4
    hard = evidence.hard_province

    grids = np.meshgrid(*([xs] * dims), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for g in np.meshgrid(*([ws] * dims), indexing="ij"):
        wgrid = wgrid * g

    prov_mass = {p: 0.0 for p in Province}
    node_sum = 0.0
    node_sq = 0.0
    for p, active, weight, mus, sds in _net_contexts(net):
        if hard is not None:
            if p is not hard.province:
                continue
            weight = weight / net.prior[p]
        cols = [mus[i] + math.sqrt(2.0) * sds[i] * grids[i] for i in range(dims)]
        like = np.ones_like(grids[0])
        for f in evidence.soft:
            val = _node_value(net, f.node, cols)
            like = like * np.exp(-0.5 * ((f.mean - val) / f.std) ** 2) / (
                f.std * math.sqrt(2.0 * math.pi)
            )
        mass = weight * float((wgrid * like).sum()) / math.pi ** (dims / 2.0)
        prov_mass[p] += mass
        if node is not None:
            val = _node_value(net, node, cols)
            node_sum += weight * float((wgrid * like * val).sum()) / math.pi ** (dims / 2.0)
            node_sq += weight * float((wgrid * like * val * val).sum()) / math.pi ** (
                dims / 2.0
            )
    total = sum(prov_mass.values())
    post = {p: m / total for p, m in prov_mass.items()}
    if node is None:
        return post, None, None
    mean = node_sum / total
    var = node_sq / total - mean * mean
    return post, mean, var


def mc_posterior(
    net: CGNetwork,
    evidence: Evidence,
    node: Stream,
    n: int = 1_000_000,
    seed: int = 0,
):
    """Weighted forward sampling of the generative model.

    Returns (province posterior array with standard errors, node mean
    with standard error, node variance estimate).
    """
    rng = np.random.default_rng(seed)
    provs = list(Province)
    prior = np.array([net.prior[p] for p in provs])
    hard = evidence.hard_province
    if hard is not None:
        prior = np.zeros_like(prior)
        prior[provs.index(hard.province)] = 1.0
    pidx = rng.choice(len(provs), size=n, p=prior)

    crisis = np.zeros(n, dtype=bool)
    if net.crisis is not None and net.crisis.probability > 0:
        crisis = rng.random(n) < net.crisis.probability

    comp_mu = np.zeros((len(provs), 3))
    comp_sd = np.zeros((len(provs), 3))
    for i, p in enumerate(provs):
        for j, st in enumerate(COMPONENT_STREAMS):
            comp_mu[i, j] = net.stream_params[(p, st)].mu
            comp_sd[i, j] = net.stream_params[(p, st)].sigma
    mus = comp_mu[pidx]
    if net.crisis is not None:
        mus = mus.copy()
        mus[crisis, 1] *= net.crisis.refugee_factor
        mus[crisis, 2] *= net.crisis.economic_factor
    comps = rng.normal(mus, comp_sd[pidx])

    if net.total_mode == TotalMode.STRUCTURAL:
        total_vals = comps.sum(axis=1)
    else:
        tot_mu = np.array([net.total_params[p].mu for p in provs])
        tot_sd = np.array([net.total_params[p].sigma for p in provs])
        total_vals = rng.normal(tot_mu[pidx], tot_sd[pidx])

    values = {
        Stream.SPONSOR: comps[:, 0],
        Stream.REFUGEE: comps[:, 1],
        Stream.ECONOMIC: comps[:, 2],
        Stream.TOTAL: total_vals,
    }

    logw = np.zeros(n)
    for f in evidence.soft:
        logw += -0.5 * ((values[f.node] - f.mean) / f.std) ** 2
    w = np.exp(logw - logw.max())
    wsum = w.sum()

    post = np.zeros(len(provs))
    post_se = np.zeros(len(provs))
    for i in range(len(provs)):
        ind = (pidx == i).astype(float)
        post[i] = float((w * ind).sum() / wsum)
        # delta-method standard error of a ratio estimator
        resid = w * (ind - post[i])
        post_se[i] = float(np.sqrt((resid**2).sum()) / wsum)

    x = values[node]
    mean = float((w * x).sum() / wsum)
    resid = w * (x - mean)
    mean_se = float(np.sqrt((resid**2).sum()) / wsum)
    var = float((w * (x - mean) ** 2).sum() / wsum)
    return (post, post_se), (mean, mean_se), var
