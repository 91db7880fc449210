"""Simulation harness: designs, signals, tuning schemes and metric aggregation."""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import io
import json
import math

import numpy as np
from scipy.stats import norm as ndist

from ._accel import n_threads
from .exceptions import EmptySelection, SelinfError
from .kernels import lasso_cd
from .multi import ms_then_slope_pipeline, multi_infer, two_lasso_pipeline
from .queries import (Dataset, RandomizationSpec, build_target, lasso_kkt,
                      ols_sigma2, solve_randomized_lasso)
from .selective_mle import infer

__all__ = [
    "ar1_cov",
    "gen_design",
    "beta_type4",
    "beta_flat",
    "snr_to_sigma2",
    "lambda_theory",
    "cross_validate_lambda",
    "relative_risk",
    "randomization_variance",
    "ExperimentConfig",
    "ReplicationSummary",
    "Summary",
    "run_replication",
    "aggregate",
    "run_experiment",
]


# ---------------------------------------------------------------------------
# data generation

def ar1_cov(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_design(n, p, rho, rng):
    """Rows i.i.d. ``N(0, Sigma)`` with ``Sigma_ij = rho**|i-j|``.

    Columns are generated by the AR(1) recursion
    ``x_j = rho x_{j-1} + sqrt(1 - rho**2) e_j``.
    """
    if not abs(rho) < 1:
        raise SelinfError("rho must satisfy |rho| < 1")
    rng = np.random.default_rng(rng)
    E = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = E[:, 0]
    s = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + s * E[:, j]
    return X


def beta_type4(p):
    """Six nonzero entries ``-10, -6, -2, 2, 6, 10`` at equally spaced positions."""
    if p < 6:
        raise SelinfError("beta-type 4 needs p >= 6")
    beta = np.zeros(p)
    beta[np.round(np.linspace(0, p - 1, 6)).astype(int)] = [-10., -6., -2., 2., 6., 10.]
    return beta


def beta_flat(p, s, amplitude=1.0):
    """``s`` entries equal to ``amplitude`` at equally spaced positions."""
    if not 0 < s <= p:
        raise SelinfError("need 0 < s <= p")
    beta = np.zeros(p)
    beta[np.round(np.linspace(0, p - 1, s)).astype(int)] = amplitude
    return beta


def snr_to_sigma2(beta, Sigma, snr):
    if not snr > 0:
        raise SelinfError("snr must be positive")
    return float(beta @ Sigma @ beta) / snr


def lambda_theory(X, sigma2, draws=500, rng=None):
    """Monte-Carlo mean of ``||X' Psi||_inf`` with ``Psi ~ N(0, sigma2 I)``."""
    rng = np.random.default_rng(rng)
    Psi = rng.standard_normal((X.shape[0], draws))
    return float(math.sqrt(sigma2) * np.abs(X.T @ Psi).max(axis=0).mean())


def randomization_variance(data, ratio):
    """Isotropic variance ``ratio * sigma2 * mean(diag(X'X))``.

    The randomization is added to ``X'y``, whose per-coordinate noise
    variance is ``sigma2 * diag(X'X)``, so ``ratio`` is measured on that scale.
    """
    return ratio * data.sigma2 * float(np.mean(np.einsum("ij,ij->j", data.X, data.X)))


def _lasso_path(G, c, lams, tol=1e-9, max_sweeps=100_000):
    p = G.shape[0]
    out = np.zeros((lams.size, p))
    o = np.zeros(p)
    for k, lam in enumerate(lams):
        o, _, _ = lasso_cd(G, c, float(lam), 0.0, o, tol, max_sweeps)
        out[k] = o
    return out


def cross_validate_lambda(X, y, folds=10, rng=None, n_lambda=100, decades=4.0):
    """K-fold CV over a log grid; returns ``(cv_min, cv_1se)`` for ``||y - Xb||^2 / 2``.

    Fits use the per-observation loss, so a fold's penalty is rescaled by
    the full sample size when reported.
    """
    if folds < 2:
        raise SelinfError("need at least two folds")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if folds > n:
        raise SelinfError("more folds than observations")
    rng = np.random.default_rng(rng)
    fold = np.empty(n, dtype=int)
    fold[rng.permutation(n)] = np.arange(n) % folds
    lam_max = float(np.max(np.abs(X.T @ y))) / n
    grid = lam_max * np.logspace(0.0, -decades, n_lambda)
    errs = np.empty((folds, n_lambda))
    for k in range(folds):
        tr, te = fold != k, fold == k
        Xt, yt = X[tr], y[tr]
        m = Xt.shape[0]
        path = _lasso_path(Xt.T @ Xt / m, Xt.T @ yt / m, grid)
        resid = y[te][:, None] - X[te] @ path.T
        errs[k] = np.mean(resid ** 2, axis=0)
    cv = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / math.sqrt(folds)
    k_min = int(np.argmin(cv))
    ok = np.flatnonzero(cv <= cv[k_min] + se[k_min])
    k_1se = int(ok.min())  # grid is decreasing, so the smallest index is the largest lambda
    return n * grid[k_min], n * grid[k_1se]


def relative_risk(estimate, beta, Sigma):
    d = np.asarray(estimate, dtype=float) - beta
    return float(d @ Sigma @ d) / float(beta @ Sigma @ beta)


# ---------------------------------------------------------------------------
# experiment configuration and per-replication records

@dataclass
class ExperimentConfig:
    n: int = 200
    p: int = 50
    rho: float = 0.35
    signal: str = "type4"          # "type4" or "flat"
    flat_s: int = 20
    flat_amplitude: float = 1.0
    snr_grid: tuple = (0.31, 1.22)
    lambda_scheme: str = "theory"  # theory | cv_min | cv_1se
    lambda_draws: int = 500
    rand_ratio: float = 0.5
    reps: int = 500
    seed: int = 0
    targets: tuple = ("partial", "full")
    query: str = "lasso"           # lasso | lasso2 | ms-slope
    q: float = 0.10
    ms_alpha: float = 0.2
    slope_ramp: float = 0.5
    method: str = "mle"

    def __post_init__(self):
        self.snr_grid = tuple(float(s) for s in self.snr_grid)
        self.targets = tuple(self.targets)
        if not 0 <= self.rho < 1:
            raise SelinfError("rho must lie in [0, 1)")
        if not self.snr_grid or any(s <= 0 for s in self.snr_grid):
            raise SelinfError("snr values must be positive")
        if self.reps < 1:
            raise SelinfError("reps must be at least 1")
        if self.signal not in ("type4", "flat"):
            raise SelinfError(f"unknown signal {self.signal!r}")
        if self.lambda_scheme not in ("theory", "cv_min", "cv_1se"):
            raise SelinfError(f"unknown lambda scheme {self.lambda_scheme!r}")
        if self.query not in ("lasso", "lasso2", "ms-slope"):
            raise SelinfError(f"unknown query {self.query!r}")
        if not set(self.targets) <= {"partial", "full"} or not self.targets:
            raise SelinfError("targets must be drawn from partial, full")

    def signal_vector(self):
        if self.signal == "type4":
            return beta_type4(self.p)
        return beta_flat(self.p, self.flat_s, self.flat_amplitude)

    def to_dict(self):
        d = asdict(self)
        d["snr_grid"] = list(self.snr_grid)
        d["targets"] = list(self.targets)
        return d


@dataclass
class ReplicationSummary:
    """Raw material for one replication and one target."""

    empty: bool
    covered: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    detected: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    true_signal: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    naive_covered: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    naive_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    risks: dict = field(default_factory=dict)


def _embed(values, E, p):
    out = np.zeros(p)
    out[E] = values
    return out


def _lambda(cfg, data, rng):
    if cfg.lambda_scheme == "theory":
        return lambda_theory(data.X, data.sigma2, cfg.lambda_draws, rng)
    cv_min, cv_1se = cross_validate_lambda(data.X, data.y, rng=rng)
    return cv_min if cfg.lambda_scheme == "cv_min" else cv_1se


def _summarize(res, target, truth_mean, beta, q):
    zq = ndist.isf(q / 2.0)
    theta = target.L @ truth_mean
    lo, hi = res.intervals[:, 0], res.intervals[:, 1]
    naive_half = zq * target.sd
    return ReplicationSummary(
        empty=False,
        covered=(lo <= theta) & (theta <= hi),
        lengths=hi - lo,
        detected=res.pvalues < q,
        true_signal=beta[target.E] != 0,
        naive_covered=np.abs(target.beta_hat - theta) <= naive_half,
        naive_lengths=2.0 * naive_half,
    )


def run_replication(cfg, snr, rng):
    """Simulate one data set and run the configured query and inference."""
    rng = np.random.default_rng(rng)
    Sigma = ar1_cov(cfg.p, cfg.rho)
    beta = cfg.signal_vector()
    sigma2 = snr_to_sigma2(beta, Sigma, snr)
    X = gen_design(cfg.n, cfg.p, cfg.rho, rng)
    mean = X @ beta
    y = mean + math.sqrt(sigma2) * rng.standard_normal(cfg.n)
    data = Dataset(X, y, ols_sigma2(X, y))
    lam = _lambda(cfg, data, rng)
    rand = RandomizationSpec.isotropic(randomization_variance(data, cfg.rand_ratio), cfg.p)
    eps = 1.0 / math.sqrt(cfg.n)
    out = {}
    if cfg.query == "lasso":
        try:
            sel = solve_randomized_lasso(data, rand, lam, eps, rng=rng)
        except EmptySelection:
            return {k: ReplicationSummary(empty=True) for k in cfg.targets}
        G = X.T @ X
        canon, _, _ = lasso_cd(G, X.T @ y, lam, 0.0, np.zeros(cfg.p), 1e-10, 100_000)
        for kind in cfg.targets:
            target = build_target(data, sel.E, kind)
            kkt = lasso_kkt(data, sel, lam, eps, target)
            res = infer(target, kkt, rand.cov, cfg.q)
            rs = _summarize(res, target, mean, beta, cfg.q)
            rs.risks = {
                "mle": relative_risk(_embed(res.mle, sel.E, cfg.p), beta, Sigma),
                "randomized_lasso": relative_risk(sel.soln, beta, Sigma),
                "lasso": relative_risk(canon, beta, Sigma),
            }
            out[kind] = rs
        return out
    seed = int(rng.integers(2**63))
    for kind in cfg.targets:
        stage_rng = np.random.default_rng(seed)  # same selection for every target
        try:
            if cfg.query == "lasso2":
                setup, _ = two_lasso_pipeline(data, [rand, rand], lam, eps, stage_rng, kind)
            else:
                ramp = lambda m: lam * np.linspace(1.0, cfg.slope_ramp, m)  # noqa: E731
                setup, _ = ms_then_slope_pipeline(data, [rand, rand], cfg.ms_alpha,
                                                  ramp, stage_rng, kind)
        except EmptySelection:
            out[kind] = ReplicationSummary(empty=True)
            continue
        res = multi_infer(setup, cfg.q)
        rs = _summarize(res, setup.target, mean, beta, cfg.q)
        rs.risks = {"mle": relative_risk(_embed(res.mle, setup.target.E, cfg.p), beta, Sigma)}
        out[kind] = rs
    return out


# ---------------------------------------------------------------------------
# aggregation

def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def aggregate(reps, q=0.10):
    """Reduce a list of :class:`ReplicationSummary` to scalar metrics.

    Coverage and length are averaged over the selected coordinates of each
    replication, then over replications.  Empty replications are skipped;
    metrics with no contributing replication are ``None``.
    """
    live = [r for r in reps if not r.empty]
    per = dict(coverage=[], length=[], naive_coverage=[], naive_length=[],
               power=[], fdp=[], selected=[])
    risks = {}
    for r in live:
        per["coverage"].append(r.covered.mean())
        per["length"].append(r.lengths.mean())
        per["naive_coverage"].append(r.naive_covered.mean())
        per["naive_length"].append(r.naive_lengths.mean())
        per["selected"].append(r.covered.size)
        n_true = int(r.true_signal.sum())
        if n_true:
            per["power"].append((r.detected & r.true_signal).sum() / n_true)
        n_det = int(r.detected.sum())
        per["fdp"].append((r.detected & ~r.true_signal).sum() / n_det if n_det else 0.0)
        for k, v in r.risks.items():
            risks.setdefault(k, []).append(v)
    out = {k: _mean_or_none(v) for k, v in per.items()}
    out["empty_rate"] = 1.0 - len(live) / len(reps) if reps else None
    out["risk"] = {k: _mean_or_none(v) for k, v in sorted(risks.items())}
    return out


@dataclass
class Summary:
    config: dict
    cells: list  # one dict per (snr, target) with aggregated metrics

    def records(self):
        """Long-format rows ``(snr, metric, method, target, value)``."""
        rows = []
        method = self.config.get("method", "mle")
        for cell in self.cells:
            snr, tgt, m = cell["snr"], cell["target"], cell["metrics"]
            for metric in ("coverage", "length", "power", "fdp", "selected", "empty_rate"):
                rows.append((snr, metric, method, tgt, m[metric]))
            rows.append((snr, "coverage", "naive", tgt, m["naive_coverage"]))
            rows.append((snr, "length", "naive", tgt, m["naive_length"]))
            for est, val in m["risk"].items():
                rows.append((snr, "risk", est, tgt, val))
        return rows

    def to_dict(self):
        return {"config": self.config, "cells": self.cells}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr", "metric", "method", "target", "value"])
        for snr, metric, method, tgt, val in self.records():
            w.writerow([repr(snr), metric, method, tgt, "NA" if val is None else repr(val)])
        return buf.getvalue()


def _run_task(args):
    cfg, snr, seed = args
    return run_replication(cfg, snr, np.random.default_rng(seed))


def run_experiment(cfg, workers=None):
    """Run every replication at every SNR and aggregate per ``(snr, target)``.

    Replication ``r`` at grid position ``i`` uses child ``i * reps + r`` of the
    master seed, so results do not depend on how work is scheduled.
    """
    children = np.random.SeedSequence(cfg.seed).spawn(len(cfg.snr_grid) * cfg.reps)
    tasks = [(cfg, snr, children[i * cfg.reps + r])
             for i, snr in enumerate(cfg.snr_grid) for r in range(cfg.reps)]
    workers = n_threads() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=8))
    else:
        results = [_run_task(t) for t in tasks]
    cells = []
    for i, snr in enumerate(cfg.snr_grid):
        block = results[i * cfg.reps:(i + 1) * cfg.reps]
        for kind in cfg.targets:
            cells.append(dict(snr=snr, target=kind,
                              metrics=aggregate([b[kind] for b in block], cfg.q)))
    return Summary(cfg.to_dict(), cells)
