"""Univariate file-drawer problem.

We observe ``Y ~ N(beta, 1)`` and report it only when ``Y + W > tau`` for an
independent randomization ``W ~ N(0, eta2)``.  Conditioning on that event
turns the Gaussian likelihood of ``Y`` into a soft-truncated one whose
log-partition function is

    alpha(beta) = beta**2 / 2 + log Phibar((tau - beta) / sqrt(1 + eta2)).

The selective MLE solves ``alpha'(beta) = y``.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import log_ndtr, ndtr
from scipy.stats import norm as ndist

from .exceptions import DegenerateSelection, DomainError, SolverError
from .kernels import fd_mle_kernel, mills

__all__ = [
    "FileDrawerProblem",
    "FileDrawerFit",
    "threshold_from_level",
    "grad_alpha",
    "hess_alpha",
    "soft_trunc_loglik",
    "solve_mle_1d",
    "fisher_info_1d",
    "fit_1d",
    "pivot_1d",
    "pvalue_1d",
    "exact_mle_density",
    "sample_selected",
    "conditioned_pivots",
    "MseBoundReport",
    "mse_bound_check",
    "rescaled_study",
]

MLE_TOL = 1e-10
_KERNEL_TOL = 1e-12
MAX_ATTEMPTS = 10**7


def threshold_from_level(q, eta2):
    """Threshold ``sqrt(1 + eta2) * z_{1-q}``.

    ``eta2 = 0`` is allowed here and gives the non-randomized threshold.
    """
    if not 0.0 < q < 1.0:
        raise DomainError(f"level q must lie in (0, 1), got {q!r}")
    if not eta2 >= 0.0:
        raise DomainError(f"eta2 must be nonnegative, got {eta2!r}")
    return math.sqrt(1.0 + eta2) * ndist.isf(q)


@dataclass(frozen=True)
class FileDrawerProblem:
    tau: float
    eta2: float
    q: float | None = None

    def __post_init__(self):
        if not self.eta2 > 0.0:
            raise DomainError(f"eta2 must be positive, got {self.eta2!r}")
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie in (0, 1), got {self.q!r}")
        if not math.isfinite(self.tau):
            raise DomainError("tau must be finite")

    @classmethod
    def from_level(cls, q, eta2):
        return cls(tau=threshold_from_level(q, eta2), eta2=eta2, q=q)

    @property
    def scale(self):
        """Standard deviation of ``Y + W``."""
        return math.sqrt(1.0 + self.eta2)

    @property
    def eta(self):
        return math.sqrt(self.eta2)


def grad_alpha(beta, prob):
    c = prob.scale
    return beta + mills((prob.tau - np.asarray(beta, dtype=float)) / c) / c


def hess_alpha(beta, prob):
    c = prob.scale
    u = (prob.tau - np.asarray(beta, dtype=float)) / c
    m = mills(u)
    return 1.0 - m * (m - u) / c**2


def soft_trunc_loglik(y, beta, prob):
    """Log of the soft-truncated likelihood of ``y`` at ``beta``."""
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    out = (y * beta - 0.5 * beta**2
           - log_ndtr((beta - prob.tau) / prob.scale)
           - 0.5 * y**2 + log_ndtr((y - prob.tau) / prob.eta))
    return out[()] if out.ndim == 0 else out


def solve_mle_1d(y, prob, max_iter=100):
    """Selective MLE for one or many observations ``y``.

    Safeguarded Newton on the estimating equation; the bracket starts at
    ``[y - 10 sqrt(1 + eta2), y]`` and is widened downward if needed.
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y_arr)):
        raise DomainError("y must be finite")
    beta, resid, _ = fd_mle_kernel(y_arr, float(prob.tau), prob.scale,
                                   _KERNEL_TOL, max_iter)
    # recheck with the scipy-backed score so both kernel paths are held to
    # the same residual definition
    resid = np.abs(grad_alpha(beta, prob) - y_arr)
    worst = float(resid.max()) if resid.size else 0.0
    if worst >= MLE_TOL:
        raise SolverError(
            f"file-drawer MLE did not converge (residual {worst:.3e})",
            residual=worst, iterations=max_iter)
    return beta if np.ndim(y) else float(beta[0])


def fisher_info_1d(beta_mle, prob):
    out = hess_alpha(beta_mle, prob)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class FileDrawerFit:
    y: float
    beta_mle: float
    fisher_info: float
    problem: FileDrawerProblem = field(repr=False)

    def pivot_at(self, beta):
        return float(ndist.sf(math.sqrt(self.fisher_info) * (self.beta_mle - beta)))

    def pvalue(self, beta=0.0):
        z = math.sqrt(self.fisher_info) * (self.beta_mle - beta)
        return float(2.0 * ndist.sf(abs(z)))

    def interval(self, level=0.90):
        half = ndist.isf((1.0 - level) / 2.0) / math.sqrt(self.fisher_info)
        return self.beta_mle - half, self.beta_mle + half


def fit_1d(y, prob):
    b = solve_mle_1d(float(y), prob)
    return FileDrawerFit(float(y), b, fisher_info_1d(b, prob), prob)


def pivot_1d(y, beta, prob):
    """One-sided pivot ``Phibar(sqrt(I) (mle - beta))``; vectorized in ``y``."""
    m = solve_mle_1d(y, prob)
    info = hess_alpha(m, prob)
    out = ndist.sf(np.sqrt(info) * (m - beta))
    return out if np.ndim(out) else float(out)


def pvalue_1d(y, beta, prob):
    """Two-sided version of :func:`pivot_1d`; the reporting default."""
    p = np.asarray(pivot_1d(y, beta, prob))
    out = 2.0 * np.minimum(p, 1.0 - p)
    return out if out.ndim else float(out)


def exact_mle_density(m, beta, prob):
    """Unnormalized density of the selective MLE at ``m`` (validation only)."""
    g = grad_alpha(m, prob)
    out = (np.abs(hess_alpha(m, prob)) * np.exp(-0.5 * (g - beta) ** 2)
           * ndtr((g - prob.tau) / prob.eta))
    return out if np.ndim(out) else float(out)


def sample_selected(beta, prob, size, rng, method="exact",
                    max_attempts=MAX_ATTEMPTS):
    """Draw ``Y`` conditional on ``Y + W > tau``.

    ``method="exact"`` samples ``S = Y + W`` from its truncated normal law and
    then ``Y | S``; ``method="rejection"`` draws ``(Y, W)`` pairs and keeps the
    selected ones, giving up after ``max_attempts`` pairs.
    """
    rng = np.random.default_rng(rng)
    if method == "exact":
        c2 = 1.0 + prob.eta2
        a = (prob.tau - beta) / math.sqrt(c2)
        if ndist.logsf(a) == -np.inf:
            raise DegenerateSelection(f"selection probability underflows at beta={beta}")
        # inverse-cdf sampling in the upper tail, computed on the log scale
        u = rng.uniform(size=size)
        log_sf = ndist.logsf(a) + np.log1p(-u)
        s = beta + math.sqrt(c2) * ndist.isf(np.exp(log_sf))
        bad = ~np.isfinite(s)
        if bad.any():
            s[bad] = beta + math.sqrt(c2) * np.sqrt(-2.0 * log_sf[bad])
        mean = beta + (s - beta) / c2
        return mean + math.sqrt(prob.eta2 / c2) * rng.standard_normal(size)
    if method != "rejection":
        raise DomainError(f"unknown sampling method {method!r}")
    kept = []
    n_kept = 0
    tried = 0
    batch = max(4 * size, 1000)
    while n_kept < size:
        if tried >= max_attempts:
            if n_kept == 0:
                raise DegenerateSelection(
                    f"no selected draws in {tried} attempts at beta={beta}")
            raise DegenerateSelection(
                f"only {n_kept} of {size} selected draws in {tried} attempts")
        m = min(batch, max_attempts - tried)
        y = beta + rng.standard_normal(m)
        w = prob.eta * rng.standard_normal(m)
        sel = y[y + w > prob.tau]
        kept.append(sel)
        n_kept += sel.size
        tried += m
        batch = min(4 * batch, 10**6)
    return np.concatenate(kept)[:size]


def conditioned_pivots(beta, prob, draws, rng, method="exact"):
    y = sample_selected(beta, prob, draws, rng, method=method)
    return np.asarray(pivot_1d(y, beta, prob))


@dataclass(frozen=True)
class MseBoundReport:
    mse: float
    bound: float
    se: float
    draws: int
    holds: bool


def mse_bound_check(beta, prob, reps, seed):
    """Monte-Carlo check of ``E[(mle - beta)^2 | sel] <= Var(Y | sel) / B``.

    ``B = eta2**2 / (1 + eta2)**2``.  The check passes when the MSE is below
    the bound plus three Monte-Carlo standard errors of the difference.
    """
    if reps < 1000:
        raise DomainError("reps must be at least 1000")
    rng = np.random.default_rng(seed)
    y = sample_selected(beta, prob, reps, rng)
    if y.size == 0:
        raise DegenerateSelection("no accepted draws")
    m = solve_mle_1d(y, prob)
    B = prob.eta2**2 / (1.0 + prob.eta2) ** 2
    sq = (m - beta) ** 2
    dev = (y - y.mean()) ** 2 / B
    diff = sq - dev * y.size / (y.size - 1)
    se = float(diff.std(ddof=1) / math.sqrt(y.size))
    mse = float(sq.mean())
    bound = float(y.var(ddof=1) / B)
    return MseBoundReport(mse, bound, se, int(y.size), mse <= bound + 3.0 * se)


def rescaled_study(beta0, ns, prob, draws, seed):
    """Conditional behaviour of the MLE and of ``Y`` as the sample size grows.

    For each ``n`` the data are ``sqrt(n) * Ybar`` with mean ``sqrt(n) * beta0``.
    Returns a list of dicts with the MSE of ``mle / sqrt(n)`` around ``beta0``
    and the bias of ``Ybar``.
    """
    ss = np.random.SeedSequence(seed)
    out = []
    for n, child in zip(ns, ss.spawn(len(ns))):
        rng = np.random.default_rng(child)
        root_n = math.sqrt(n)
        y = sample_selected(root_n * beta0, prob, draws, rng)
        m = solve_mle_1d(y, prob) / root_n
        ybar = y / root_n
        out.append(dict(n=int(n),
                        mle_mse=float(np.mean((m - beta0) ** 2)),
                        mle_bias=float(np.mean(m) - beta0),
                        ls_mse=float(np.mean((ybar - beta0) ** 2)),
                        ls_bias=float(np.mean(ybar) - beta0)))
    return out
