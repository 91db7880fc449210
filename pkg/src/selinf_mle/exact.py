"""Exact selective MLE for one or two sign-constrained active coordinates.

Used only to validate the barrier approximation.  The selection probability
``Z(beta) = P(U o <= v)`` for ``o ~ N(A beta + b, Sigma_bar + A Sigma_S A')``
is integrated numerically with adaptive Gauss-Kronrod quadrature, and the
exact log-likelihood

    beta_hat' Sigma_S^{-1} beta - beta' Sigma_S^{-1} beta / 2 - log Z(beta)

is maximized by a grid search followed by a local refinement.
"""
import math

import numpy as np
from scipy import integrate, optimize
from scipy.stats import norm as ndist

from .exceptions import DomainError, NumericalError
from .selective_mle import BarrierSpec, implied_params

__all__ = ["selection_probability", "exact_loglik", "exact_small_dim_oracle"]

_QUAD = dict(epsabs=0.0, epsrel=1e-12, limit=200)


def _oriented(ip, Sigma_S, spec, beta):
    """Mean and covariance of ``z * o`` whose positive orthant is the selection event."""
    z = spec.z
    mu = z * (ip.A @ beta + ip.b)
    cov = ip.Sigma_bar + ip.A @ Sigma_S @ ip.A.T
    return mu, cov * np.outer(z, z)


def _orthant_1d(m, s):
    lo, hi = max(0.0, m - 10.0 * s), m + 10.0 * s
    if hi <= 0.0:
        return 0.0
    val, _ = integrate.quad(lambda u: ndist.pdf(u, m, s), lo, hi, **_QUAD)
    return val


def _orthant_2d(mu, cov):
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    rho = cov[0, 1] / (s1 * s2)
    det = 1.0 - rho * rho
    norm_c = 1.0 / (2.0 * math.pi * s1 * s2 * math.sqrt(det))

    def dens(u2, u1):
        a = (u1 - mu[0]) / s1
        c = (u2 - mu[1]) / s2
        return norm_c * math.exp(-(a * a - 2.0 * rho * a * c + c * c) / (2.0 * det))

    lo1, hi1 = max(0.0, mu[0] - 10.0 * s1), mu[0] + 10.0 * s1
    lo2, hi2 = max(0.0, mu[1] - 10.0 * s2), mu[1] + 10.0 * s2
    if hi1 <= 0.0 or hi2 <= 0.0:
        return 0.0
    val, _ = integrate.dblquad(dens, lo1, hi1, lo2, hi2, epsabs=1e-14, epsrel=1e-11)
    return val


def selection_probability(ip, Sigma_S, spec, beta):
    """``P(z * o > 0)`` marginally over the target statistic at parameter ``beta``."""
    mu, cov = _oriented(ip, Sigma_S, spec, np.atleast_1d(beta))
    if mu.size == 1:
        return _orthant_1d(mu[0], math.sqrt(cov[0, 0]))
    return _orthant_2d(mu, cov)


def exact_loglik(beta, beta_hat, Sigma_S, ip, spec):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Z = selection_probability(ip, Sigma_S, spec, beta)
    if not Z > 0.0:
        return -np.inf
    Sinv_b = np.linalg.solve(Sigma_S, beta)
    return float(beta_hat @ Sinv_b - 0.5 * beta @ Sinv_b - math.log(Z))


def exact_small_dim_oracle(target, kkt, Sigma_W, grid=81, width=8.0):
    """Exact selective MLE of the target, for ``d <= 2`` sign-constrained queries."""
    spec = BarrierSpec.from_kkt(kkt)
    if spec.kind != "sign":
        raise DomainError("the exact oracle handles sign constraints only")
    if target.d > 2 or kkt.U.shape[1] > 2:
        raise DomainError("the exact oracle handles at most two coordinates")
    ip = implied_params(kkt, Sigma_W)
    bh = np.asarray(target.beta_hat, dtype=float)
    S = np.atleast_2d(target.Sigma_S)
    sd = np.sqrt(np.diag(S))

    def nll(b):
        return -exact_loglik(b, bh, S, ip, spec)

    axes = [np.linspace(bh[i] - width * sd[i], bh[i] + width * sd[i], grid)
            for i in range(target.d)]
    if target.d == 1:
        vals = np.array([nll(np.array([g])) for g in axes[0]])
        k = int(np.argmin(vals))
        if k in (0, grid - 1):
            raise NumericalError("exact MLE lies outside the search grid")
        step = axes[0][1] - axes[0][0]
        res = optimize.minimize_scalar(lambda t: nll(np.array([t])), method="bounded",
                                       bounds=(axes[0][k] - step, axes[0][k] + step),
                                       options=dict(xatol=1e-11))
        return np.array([res.x])
    coarse = axes[0][:: 4], axes[1][:: 4]
    best, arg = np.inf, None
    for g0 in coarse[0]:
        for g1 in coarse[1]:
            v = nll(np.array([g0, g1]))
            if v < best:
                best, arg = v, np.array([g0, g1])
    res = optimize.minimize(nll, arg, method="Nelder-Mead",
                            options=dict(xatol=1e-9, fatol=1e-13, maxiter=4000))
    if not res.success:
        raise NumericalError(f"exact maximization failed: {res.message}")
    return res.x
