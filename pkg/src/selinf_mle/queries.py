"""Randomized selection queries and their affine KKT maps.

Every query below is summarized by an identity of the form

    omega = M y + Q o1 + t,       U o1 <= v,

where ``M`` is a fixed linear map of the response, ``o1`` are the active
optimization variables and ``t`` collects the observed penalty subgradient.
:func:`decompose_data_term` splits ``M y`` into a part that is linear in the
target statistic and a part independent of it, which yields the ``(P, r)``
pair used downstream.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import linalg
from scipy.stats import norm as ndist

from .exceptions import DomainError, EmptySelection, InconsistentKKT, SolverError
from .kernels import lasso_cd, slope_prox_kernel

__all__ = [
    "Dataset",
    "RandomizationSpec",
    "SelectionOutcome",
    "KktAffine",
    "TargetModel",
    "ols_sigma2",
    "solve_randomized_lasso",
    "lasso_kkt",
    "screening_thresholds",
    "solve_marginal_screening",
    "ms_kkt",
    "slope_prox",
    "sorted_l1_subgradient_ok",
    "solve_randomized_slope",
    "slope_kkt",
    "decompose_data_term",
    "build_target",
]

ACTIVE_TOL = 1e-10
CD_TOL = 1e-12
KKT_TOL = 1e-8
TIE_TOL = 1e-9


def ols_sigma2(X, y):
    """Residual variance ``||(I - H) y||^2 / (n - p)`` of the full OLS fit."""
    n, p = X.shape
    if n <= p:
        raise DomainError(f"OLS noise estimate needs n > p (n={n}, p={p})")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    s2 = float(resid @ resid / (n - p))
    if not s2 > 0:
        raise DomainError("OLS residual variance is zero")
    return s2


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    sigma2: float

    @classmethod
    def from_arrays(cls, X, y, sigma2=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0] or min(X.shape) < 1:
            raise DomainError(f"incompatible shapes X{X.shape}, y{y.shape}")
        if sigma2 is None:
            sigma2 = ols_sigma2(X, y)
        if not sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        return cls(X, y, float(sigma2))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass
class RandomizationSpec:
    """Gaussian randomization ``W ~ N(0, cov)``."""

    cov: np.ndarray
    seed: int | None = None
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if not np.allclose(self.cov, self.cov.T):
            raise DomainError("randomization covariance must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise DomainError("randomization covariance must be positive definite") from None

    @classmethod
    def isotropic(cls, eta2, p, seed=None):
        if not eta2 > 0:
            raise DomainError("eta2 must be positive")
        return cls(eta2 * np.eye(p), seed)

    @property
    def dim(self):
        return self.cov.shape[0]

    def draw(self, rng=None):
        rng = np.random.default_rng(self.seed if rng is None else rng)
        return self._chol @ rng.standard_normal(self.dim)


@dataclass
class SelectionOutcome:
    E: np.ndarray
    z_E: np.ndarray
    o1: np.ndarray
    o2: np.ndarray
    query_kind: str
    omega: np.ndarray
    soln: np.ndarray
    subgrad: np.ndarray
    clusters: list | None = None
    params: dict = field(default_factory=dict)

    @property
    def inactive(self):
        mask = np.ones(self.soln.shape[0], bool)
        mask[self.E] = False
        return np.flatnonzero(mask)


@dataclass
class TargetModel:
    beta_hat: np.ndarray
    Sigma_S: np.ndarray
    kind: str
    L: np.ndarray
    E: np.ndarray
    sigma2: float

    @property
    def d(self):
        return self.beta_hat.shape[0]

    @property
    def sd(self):
        return np.sqrt(np.diag(self.Sigma_S))


@dataclass
class KktAffine:
    """``omega = P beta_hat + Q o1 + r`` with ``U o1 <= v``."""

    P: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    U: np.ndarray
    v: np.ndarray
    o1: np.ndarray
    omega: np.ndarray

    @property
    def d(self):
        return self.P.shape[1]

    def reconstruction_residual(self, beta_hat):
        pred = self.P @ beta_hat + self.Q @ self.o1 + self.r
        return float(np.max(np.abs(self.omega - pred)))


# ---------------------------------------------------------------------------
# targets and the data-term decomposition

def build_target(data, E, kind="partial"):
    E = np.asarray(E, dtype=int)
    if E.size == 0:
        raise EmptySelection("target needs a nonempty selected set")
    X = data.X
    if kind == "partial":
        XE = X[:, E]
        gram = XE.T @ XE
        try:
            cf = linalg.cho_factor(gram)
        except linalg.LinAlgError:
            raise DomainError("selected Gram matrix is singular") from None
        L = linalg.cho_solve(cf, XE.T)
    elif kind == "full":
        n, p = X.shape
        if n < p:
            raise DomainError("full target requires n >= p")
        try:
            cf = linalg.cho_factor(X.T @ X)
        except linalg.LinAlgError:
            raise DomainError("Gram matrix is singular") from None
        L = linalg.cho_solve(cf, X.T)[E]
    else:
        raise DomainError(f"unknown target kind {kind!r}")
    Sigma = data.sigma2 * (L @ L.T)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return TargetModel(L @ data.y, Sigma, kind, L, E, data.sigma2)


def decompose_data_term(M, t, target, cov_y, y):
    """Split ``M y + t`` into ``P beta_hat + r``.

    ``P = M cov_y L' Sigma_S^{-1}`` so that ``M y - P beta_hat`` is
    uncorrelated with ``beta_hat = L y``.  Returns ``(P, r)`` with ``r``
    evaluated at the observed ``y``.  A scalar ``cov_y`` means ``cov_y * I``.
    """
    if np.ndim(cov_y) == 0:
        C = float(cov_y) * (M @ target.L.T)
    else:
        C = M @ cov_y @ target.L.T
    try:
        cf = linalg.cho_factor(target.Sigma_S)
    except linalg.LinAlgError:
        raise DomainError("target covariance is singular") from None
    P = linalg.cho_solve(cf, C.T).T
    r = M @ y + t - P @ target.beta_hat
    return P, r


def _assemble(data, target, M, Q, t, U, v, o1, omega):
    P, r = decompose_data_term(M, t, target, data.sigma2, data.y)
    kkt = KktAffine(P, Q, r, U, v, np.asarray(o1, float), omega)
    res = kkt.reconstruction_residual(target.beta_hat)
    scale = max(1.0, float(np.max(np.abs(omega))))
    if not res < KKT_TOL * scale:
        raise InconsistentKKT(f"KKT reconstruction residual {res:.3e}")
    return kkt


def _sign_constraints(z):
    return -np.diag(np.asarray(z, dtype=float)), np.zeros(len(z))


def _draw(rand, rng, omega, p):
    if omega is None:
        omega = rand.draw(rng)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (p,):
        raise DomainError(f"randomization has shape {omega.shape}, expected ({p},)")
    return omega


# ---------------------------------------------------------------------------
# randomized lasso

def _lasso_polish(G, c, lam, eps, o):
    """Re-solve the active block exactly; returns ``None`` if signs flip."""
    E = np.flatnonzero(np.abs(o) > ACTIVE_TOL)
    out = np.zeros_like(o)
    if E.size:
        z = np.sign(o[E])
        A = G[np.ix_(E, E)] + eps * np.eye(E.size)
        out[E] = np.linalg.solve(A, c[E] - lam * z)
        if np.any(np.sign(out[E]) != z) or np.any(np.abs(out[E]) <= ACTIVE_TOL):
            return None
    g = c - G @ out - eps * out
    inact = np.ones(o.shape[0], bool)
    inact[E] = False
    if np.any(np.abs(g[inact]) >= lam):
        return None
    return out


def solve_randomized_lasso(data, rand, lam, epsilon=None, rng=None, omega=None,
                           max_sweeps=100_000):
    """Minimize ``||y - Xo||^2/2 + lam ||o||_1 + eps ||o||^2/2 - omega'o``."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if epsilon is None:
        epsilon = 1.0 / math.sqrt(data.n)
    if not epsilon >= 0:
        raise DomainError("epsilon must be nonnegative")
    X, y = data.X, data.y
    p = data.p
    omega = _draw(rand, rng, omega, p)
    G = X.T @ X
    c = X.T @ y + omega
    o, sweeps, dmax = lasso_cd(G, c, float(lam), float(epsilon), np.zeros(p),
                               CD_TOL, max_sweeps)
    if not dmax < CD_TOL:
        raise SolverError("coordinate descent did not converge",
                          residual=float(dmax), iterations=int(sweeps))
    polished = _lasso_polish(G, c, lam, epsilon, o)
    if polished is not None:
        o = polished
    o[np.abs(o) <= ACTIVE_TOL] = 0.0
    g = c - G @ o - epsilon * o
    E = np.flatnonzero(o)
    if E.size == 0:
        raise EmptySelection("randomized lasso selected no variables")
    out = SelectionOutcome(
        E=E, z_E=np.sign(o[E]), o1=o[E].copy(), o2=None, query_kind="lasso",
        omega=omega, soln=o, subgrad=g,
        params=dict(lam=float(lam), epsilon=float(epsilon)))
    out.o2 = g[out.inactive]
    if np.any(np.abs(out.o2) >= lam):
        raise SolverError("inactive subgradient violates the lasso bound")
    return out


def lasso_kkt(data, outcome, lam, epsilon, target):
    if outcome.query_kind != "lasso":
        raise DomainError("lasso_kkt needs a lasso outcome")
    X = data.X
    E = outcome.E
    Q = X.T @ X[:, E]
    Q[E, np.arange(E.size)] += epsilon
    t = outcome.subgrad.copy()
    t[E] = lam * outcome.z_E
    U, v = _sign_constraints(outcome.z_E)
    return _assemble(data, target, -X.T, Q, t, U, v, outcome.o1, outcome.omega)


# ---------------------------------------------------------------------------
# marginal screening

def screening_thresholds(data, rand, alpha):
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    X = data.X
    var = data.sigma2 * np.einsum("ij,ij->j", X, X) + np.diag(rand.cov)
    return ndist.isf(alpha / 2.0) * np.sqrt(var)


def solve_marginal_screening(data, rand, alpha, rng=None, omega=None):
    """Keep ``j`` when ``|X_j'y + omega_j| >= zeta_j``."""
    zeta = screening_thresholds(data, rand, alpha)
    omega = _draw(rand, rng, omega, data.p)
    stat = data.X.T @ data.y + omega
    E = np.flatnonzero(np.abs(stat) >= zeta)
    if E.size == 0:
        raise EmptySelection("marginal screening selected no variables")
    z = np.sign(stat[E])
    soln = np.clip(stat, -zeta, zeta)
    subgrad = stat - soln
    out = SelectionOutcome(
        E=E, z_E=z, o1=subgrad[E].copy(), o2=None, query_kind="screening",
        omega=omega, soln=soln, subgrad=subgrad,
        params=dict(alpha=float(alpha), zeta=zeta))
    out.o2 = stat[out.inactive]
    return out


def ms_kkt(data, outcome, target):
    if outcome.query_kind != "screening":
        raise DomainError("ms_kkt needs a screening outcome")
    E = outcome.E
    p = data.p
    Q = np.zeros((p, E.size))
    Q[E, np.arange(E.size)] = 1.0
    t = np.empty(p)
    t[E] = outcome.z_E * outcome.params["zeta"][E]
    t[outcome.inactive] = outcome.o2
    U, v = _sign_constraints(outcome.z_E)
    return _assemble(data, target, -data.X.T, Q, t, U, v, outcome.o1, outcome.omega)


# ---------------------------------------------------------------------------
# SLOPE

def _check_lam(lam, n, strict=False):
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (n,):
        raise DomainError(f"lambda sequence has shape {lam.shape}, expected ({n},)")
    if np.any(lam <= 0):
        raise DomainError("lambda sequence must be positive")
    d = np.diff(lam)
    if np.any(d > 0) or (strict and np.any(d >= 0)):
        raise DomainError("lambda sequence must be decreasing")
    return lam


def slope_prox(u, lam):
    """Proximal map of ``b -> sum_j lam_j |b|_(j)`` evaluated at ``u``."""
    u = np.asarray(u, dtype=float)
    lam = _check_lam(lam, u.shape[0])
    return slope_prox_kernel(u, lam)


def sorted_l1_subgradient_ok(g, b, lam, tol=1e-8):
    """Is ``g`` in the subdifferential of the sorted-l1 norm at ``b``?"""
    clusters, _ = _slope_clusters(b)
    offset = 0
    for idx in clusters:
        m = idx.size
        vals = np.sort(np.sign(b[idx]) * g[idx])[::-1]
        cap = lam[offset:offset + m]
        if np.any(np.cumsum(vals) > np.cumsum(cap) + tol):
            return False
        if abs(vals.sum() - cap.sum()) > tol:
            return False
        offset += m
    rest = np.flatnonzero(b == 0)
    vals = np.sort(np.abs(g[rest]))[::-1]
    return not np.any(np.cumsum(vals) > np.cumsum(lam[offset:]) + tol)


def _slope_clusters(b):
    a = np.abs(b)
    nz = np.flatnonzero(a > 0)
    order = nz[np.argsort(-a[nz], kind="stable")]
    clusters = []
    for j in order:
        if clusters and abs(a[clusters[-1][0]] - a[j]) <= TIE_TOL * max(1.0, a[j]):
            clusters[-1].append(j)
        else:
            clusters.append([j])
    clusters = [np.sort(np.asarray(c, dtype=int)) for c in clusters]
    z = np.array([np.sign(b[c[0]]) for c in clusters])
    return clusters, z


def _slope_design(clusters, z, b, p):
    D = np.zeros((p, len(clusters)))
    for k, idx in enumerate(clusters):
        D[idx, k] = np.sign(b[idx]) * z[k]
    return D


def _slope_polish(G, c, lam, b):
    """Exact solution for the cluster pattern of ``b``, or ``None``."""
    p = b.shape[0]
    b = np.where(np.abs(b) > ACTIVE_TOL, b, 0.0)
    clusters, z = _slope_clusters(b)
    if not clusters:
        return None
    D = _slope_design(clusters, z, b, p)
    sizes = np.array([c.size for c in clusters])
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    lam_sum = np.array([lam[bounds[k]:bounds[k + 1]].sum() for k in range(len(clusters))])
    o1 = np.linalg.solve(D.T @ G @ D, D.T @ c - z * lam_sum)
    mags = z * o1
    if np.any(mags <= ACTIVE_TOL) or np.any(np.diff(mags) >= 0):
        return None
    out = D @ o1
    g = c - G @ out
    if not sorted_l1_subgradient_ok(g, out, lam, tol=1e-9 * max(1.0, lam[0])):
        return None
    return out


def solve_randomized_slope(data, rand, lam, rng=None, omega=None,
                           tol=1e-13, max_iter=200_000):
    """Minimize ``||y - Xb||^2/2 + sum_j lam_j |b|_(j) - omega'b``.

    Accelerated proximal gradient with restarts, followed by an exact solve
    on the detected cluster pattern.
    """
    p = data.p
    lam = _check_lam(lam, p, strict=True)
    omega = _draw(rand, rng, omega, p)
    X = data.X
    G = X.T @ X
    c = X.T @ data.y + omega
    step = 1.0 / np.linalg.eigvalsh(G)[-1]

    def objective(b):
        return 0.5 * b @ G @ b - c @ b + np.sort(np.abs(b))[::-1] @ lam

    b = np.zeros(p)
    w = b.copy()
    t = 1.0
    f_old = objective(b)
    soln = None
    for it in range(1, max_iter + 1):
        b_new = slope_prox_kernel(w - step * (G @ w - c), lam * step)
        f_new = objective(b_new)
        if f_new > f_old and t > 1.0:
            # restart momentum; a plain step from b is a descent step up to
            # rounding, so it is never rejected
            w = b.copy()
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        w = b_new + ((t - 1.0) / t_new) * (b_new - b)
        move = float(np.max(np.abs(b_new - b)))
        b, t, f_old = b_new, t_new, f_new
        if it % 25 == 0 or move < tol:
            soln = _slope_polish(G, c, lam, b)
            if soln is not None:
                break
    if soln is None:
        raise SolverError("SLOPE solver did not reach an exact KKT point",
                          iterations=max_iter)
    clusters, z = _slope_clusters(soln)
    E = np.sort(np.concatenate(clusters))
    if E.size == 0:
        raise EmptySelection("SLOPE selected no variables")
    g = c - G @ soln
    o1 = np.array([z[k] * abs(soln[idx[0]]) for k, idx in enumerate(clusters)])
    out = SelectionOutcome(
        E=E, z_E=np.sign(soln[E]), o1=o1, o2=None, query_kind="slope",
        omega=omega, soln=soln, subgrad=g, clusters=clusters,
        params=dict(lam=lam, cluster_signs=z))
    out.o2 = g[out.inactive]
    return out


def slope_kkt(data, outcome, lam, target):
    if outcome.query_kind != "slope":
        raise DomainError("slope_kkt needs a SLOPE outcome")
    X = data.X
    p = data.p
    clusters = outcome.clusters
    z = outcome.params["cluster_signs"]
    K = len(clusters)
    D = _slope_design(clusters, z, outcome.soln, p)
    Q = X.T @ (X @ D)
    U = np.zeros((2 * K - 1, K))
    U[np.arange(K), np.arange(K)] = -z
    for k in range(K - 1):
        # |o1|_(k+1) - |o1|_(k) <= 0
        U[K + k, k + 1] = z[k + 1]
        U[K + k, k] = -z[k]
    v = np.zeros(2 * K - 1)
    return _assemble(data, target, -X.T, Q, outcome.subgrad.copy(), U, v,
                     outcome.o1, outcome.omega)
