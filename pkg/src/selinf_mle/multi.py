"""Inference after several independently randomized queries.

Every query contributes its own implied parameters and barrier program.
The programs separate, so each is solved on its own and the pieces are
summed in query order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._accel import n_threads
from .exceptions import EmptySelection, SelinfError, SolverError
from .queries import (Dataset, build_target, lasso_kkt, ms_kkt, slope_kkt,
                      solve_marginal_screening, solve_randomized_lasso,
                      solve_randomized_slope)
from .selective_mle import (BarrierSpec, MleResult, _approx_loglik_blocks,
                            _curvature_term, _info_from_terms, implied_params,
                            inference_from, log_partition_grad, solve_barrier)

__all__ = [
    "QuerySpec",
    "MultiQuerySetup",
    "multi_implied_params",
    "multi_solve_barriers",
    "multi_selective_mle",
    "multi_fisher_info",
    "multi_approx_loglik",
    "multi_infer",
    "monolithic_selective_mle",
    "union_target",
    "two_lasso_pipeline",
    "ms_then_slope_pipeline",
]


@dataclass
class QuerySpec:
    kkt: object
    spec: BarrierSpec
    Sigma_W: np.ndarray


@dataclass
class MultiQuerySetup:
    queries: list
    target: object

    def __post_init__(self):
        if not self.queries:
            raise SelinfError("a multi-query setup needs at least one query")
        d = self.target.d
        for i, q in enumerate(self.queries):
            if q.kkt.P.shape[1] != d:
                raise SelinfError(f"query {i} has target dimension {q.kkt.P.shape[1]}, expected {d}")

    @property
    def L(self):
        return len(self.queries)

    @classmethod
    def from_kkts(cls, kkts, Sigma_Ws, target):
        qs = [QuerySpec(k, BarrierSpec.from_kkt(k), np.asarray(W, dtype=float))
              for k, W in zip(kkts, Sigma_Ws)]
        return cls(qs, target)


def multi_implied_params(setup):
    return [implied_params(q.kkt, q.Sigma_W) for q in setup.queries]


def _map(fn, items):
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves input order, so the later reduction is deterministic
        return list(pool.map(fn, items))


def multi_solve_barriers(setup, ips, beta_hat=None):
    beta_hat = setup.target.beta_hat if beta_hat is None else beta_hat

    def one(i):
        q = setup.queries[i]
        try:
            return solve_barrier(ips[i], beta_hat, q.spec, q.kkt.o1)
        except SelinfError as exc:
            raise SolverError(f"query {i}: {exc}",
                              residual=getattr(exc, "residual", None),
                              iterations=getattr(exc, "iterations", None)) from exc

    return _map(one, list(range(setup.L)))


def _combine_mle(beta_hat, Sigma_S, ips, o_stars):
    acc = np.zeros_like(beta_hat)
    for ip, o in zip(ips, o_stars):
        acc = acc + ip.A.T @ (ip.prec @ (ip.mean(beta_hat) - o))
    return beta_hat + Sigma_S @ acc


def multi_selective_mle(setup, beta_hat=None, Sigma_S=None):
    t = setup.target
    beta_hat = t.beta_hat if beta_hat is None else np.asarray(beta_hat, dtype=float)
    Sigma_S = t.Sigma_S if Sigma_S is None else Sigma_S
    ips = multi_implied_params(setup)
    o_stars = multi_solve_barriers(setup, ips, beta_hat)
    return _combine_mle(beta_hat, Sigma_S, ips, o_stars)


def multi_fisher_info(setup, Sigma_S, o1_stars, ips=None):
    """Observed Fisher information summed over queries, and its inverse."""
    ips = multi_implied_params(setup) if ips is None else ips
    terms = [_curvature_term(ip, o, q.spec)
             for ip, o, q in zip(ips, o1_stars, setup.queries)]
    return _info_from_terms(Sigma_S, terms)


def _blocks(setup, ips):
    return [(ip, q.spec, q.kkt.o1) for ip, q in zip(ips, setup.queries)]


def multi_approx_loglik(setup, breve_beta, ips=None):
    ips = multi_implied_params(setup) if ips is None else ips
    t = setup.target
    return _approx_loglik_blocks(t.beta_hat, breve_beta, t.Sigma_S, _blocks(setup, ips))


def monolithic_selective_mle(setup, x0=None, tol=1e-12):
    """Joint-likelihood maximizer found without using separability.

    Solves ``grad alpha(beta) = beta_hat`` where the gradient of the
    approximate log-partition comes from one dense Newton solve over the
    target and every query's optimization variables at once.
    """
    t = setup.target
    ips = multi_implied_params(setup)
    blocks = _blocks(setup, ips)
    x0 = t.beta_hat if x0 is None else x0
    res = optimize.root(
        lambda b: log_partition_grad(b, t.Sigma_S, blocks) - t.beta_hat,
        x0, method="hybr", tol=tol)
    if not res.success:
        raise SolverError(f"monolithic solve failed: {res.message}")
    return res.x


def multi_infer(setup, q=0.10):
    t = setup.target
    if t is None or t.d == 0:
        return MleResult.empty(1.0 - q)
    ips = multi_implied_params(setup)
    o_stars = multi_solve_barriers(setup, ips)
    mle = _combine_mle(t.beta_hat, t.Sigma_S, ips, o_stars)
    _, info_inv = multi_fisher_info(setup, t.Sigma_S, o_stars, ips)
    pvalues, intervals = inference_from(mle, info_inv, q)
    return MleResult(np.asarray(t.E), mle, info_inv, pvalues, intervals, 1.0 - q,
                     {"o1_star": o_stars})


def union_target(data, outcomes, kind="partial"):
    sets = [np.asarray(o.E, dtype=int) for o in outcomes]
    E = np.unique(np.concatenate(sets)) if sets else np.zeros(0, int)
    if E.size == 0:
        raise EmptySelection("every query selected nothing")
    return build_target(data, E, kind)


def two_lasso_pipeline(data, rands, lam, epsilon=None, rng=None, kind="partial"):
    """Two randomized lasso fits on the same data; target on the union of supports."""
    rng = np.random.default_rng(rng)
    eps = 1.0 / np.sqrt(data.n) if epsilon is None else epsilon
    lams = lam if np.ndim(lam) else [lam] * len(rands)
    outs = []
    for rand, lam_l in zip(rands, lams):
        try:
            outs.append(solve_randomized_lasso(data, rand, lam_l, eps, rng=rng))
        except EmptySelection:
            outs.append(None)
    live = [o for o in outs if o is not None]
    target = union_target(data, live, kind)
    kkts, Ws = [], []
    for rand, lam_l, o in zip(rands, lams, outs):
        if o is not None:
            kkts.append(lasso_kkt(data, o, lam_l, eps, target))
            Ws.append(rand.cov)
    return MultiQuerySetup.from_kkts(kkts, Ws, target), outs


def ms_then_slope_pipeline(data, rands, alpha, lam, rng=None, kind="partial"):
    """Marginal screening, then SLOPE on the screened columns.

    ``lam`` is either an array of length ``|E1|`` or a callable mapping the
    screened dimension to such an array.  The target is indexed by the
    original columns ``E1[E2]``.
    """
    rng = np.random.default_rng(rng)
    rand1, rand2 = rands
    out1 = solve_marginal_screening(data, rand1, alpha, rng=rng)
    E1 = out1.E
    if rand2.dim != E1.size:
        rand2 = type(rand2)(rand2.cov[np.ix_(E1, E1)]) if rand2.dim == data.p else rand2
    stage2 = Dataset(data.X[:, E1], data.y, data.sigma2)
    lam2 = lam(E1.size) if callable(lam) else np.asarray(lam, dtype=float)
    out2 = solve_randomized_slope(stage2, rand2, lam2, rng=rng)
    E = E1[out2.E]
    target = build_target(data, E, kind)
    kkts = [ms_kkt(data, out1, target), slope_kkt(stage2, out2, lam2, target)]
    return MultiQuerySetup.from_kkts(kkts, [rand1.cov, rand2.cov], target), (out1, out2)
