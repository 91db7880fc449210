"""Hot numeric kernels with a numba path and a pure-numpy path.

Each kernel exists twice: ``*_nb`` is compiled with ``numba.njit`` and
``*_np`` is written with numpy only.  The public names at the bottom of
the module dispatch on :data:`selinf_mle._accel.USE_NUMBA`.
"""
import math

import numpy as np
from scipy.special import log_ndtr

from ._accel import USE_NUMBA, njit

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# inverse Mills ratio phi(x) / (1 - Phi(x))

@njit
def _mills_scalar(x):
    if x < 5.0:
        sf = 0.5 * math.erfc(x / _SQRT2)
        return math.exp(-0.5 * x * x - _LOG_SQRT_2PI) / sf
    # Laplace continued fraction for (1 - Phi)/phi, accurate for x >= 5
    t = x
    for k in range(60, 0, -1):
        t = x + k / t
    return t


def mills_np(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI - log_ndtr(-x))


@njit
def _mills_vec_nb(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = _mills_scalar(x[i])
    return out


# ---------------------------------------------------------------------------
# lasso with ridge term, coordinate descent on the Gram matrix
#
#   minimize  0.5 o'Go - c'o + lam ||o||_1 + 0.5 eps ||o||^2
#
# with G = X'X and c = X'y + omega.

@njit
def _cd_sweep_nb(G, c, lam, eps, o, h, idx):
    dmax = 0.0
    for jj in range(idx.shape[0]):
        j = idx[jj]
        gjj = G[j, j]
        z = c[j] - h[j] + gjj * o[j]
        if z > lam:
            new = (z - lam) / (gjj + eps)
        elif z < -lam:
            new = (z + lam) / (gjj + eps)
        else:
            new = 0.0
        delta = new - o[j]
        if delta != 0.0:
            for k in range(h.shape[0]):
                h[k] += delta * G[k, j]
            o[j] = new
            ad = abs(delta)
            if ad > dmax:
                dmax = ad
    return dmax


@njit
def lasso_cd_nb(G, c, lam, eps, o0, tol, max_sweeps):
    p = G.shape[0]
    o = o0.copy()
    h = G @ o
    full = np.arange(p)
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = _cd_sweep_nb(G, c, lam, eps, o, h, full)
        sweeps += 1
        if dmax < tol:
            break
        active = np.nonzero(o)[0]
        while sweeps < max_sweeps:
            da = _cd_sweep_nb(G, c, lam, eps, o, h, active)
            sweeps += 1
            if da < tol:
                break
    return o, sweeps, dmax


def _cd_sweep_np(G, c, lam, eps, o, h, idx):
    dmax = 0.0
    for j in idx:
        gjj = G[j, j]
        z = c[j] - h[j] + gjj * o[j]
        new = np.sign(z) * max(abs(z) - lam, 0.0) / (gjj + eps)
        delta = new - o[j]
        if delta != 0.0:
            h += delta * G[:, j]
            o[j] = new
            dmax = max(dmax, abs(delta))
    return dmax


def lasso_cd_np(G, c, lam, eps, o0, tol, max_sweeps):
    p = G.shape[0]
    o = np.array(o0, dtype=float)
    h = G @ o
    full = np.arange(p)
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = _cd_sweep_np(G, c, lam, eps, o, h, full)
        sweeps += 1
        if dmax < tol:
            break
        active = np.flatnonzero(o)
        while sweeps < max_sweeps:
            da = _cd_sweep_np(G, c, lam, eps, o, h, active)
            sweeps += 1
            if da < tol:
                break
    return o, sweeps, dmax


# ---------------------------------------------------------------------------
# prox of the sorted-l1 norm, stack-based pool-adjacent-violators

@njit
def slope_prox_nb(u, lam):
    n = u.shape[0]
    a = np.abs(u)
    order = np.argsort(-a)
    w = a[order] - lam
    start = np.empty(n, dtype=np.int64)
    end = np.empty(n, dtype=np.int64)
    total = np.empty(n)
    value = np.empty(n)
    k = -1
    for i in range(n):
        k += 1
        start[k] = i
        end[k] = i
        total[k] = w[i]
        value[k] = w[i]
        while k > 0 and value[k - 1] <= value[k]:
            end[k - 1] = end[k]
            total[k - 1] += total[k]
            value[k - 1] = total[k - 1] / (end[k - 1] - start[k - 1] + 1)
            k -= 1
    xs = np.empty(n)
    for b in range(k + 1):
        v = value[b] if value[b] > 0.0 else 0.0
        for i in range(start[b], end[b] + 1):
            xs[i] = v
    out = np.empty(n)
    for i in range(n):
        j = order[i]
        out[j] = xs[i] if u[j] >= 0.0 else -xs[i]
    return out


def slope_prox_np(u, lam):
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    order = np.argsort(-a, kind="stable")
    w = a[order] - np.asarray(lam, dtype=float)
    blocks = []  # [start, end, total, value]
    for i, wi in enumerate(w):
        blocks.append([i, i, wi, wi])
        while len(blocks) > 1 and blocks[-2][3] <= blocks[-1][3]:
            s, e, t, _ = blocks.pop()
            prev = blocks[-1]
            prev[1] = e
            prev[2] += t
            prev[3] = prev[2] / (prev[1] - prev[0] + 1)
    xs = np.empty_like(w)
    for s, e, _, v in blocks:
        xs[s:e + 1] = max(v, 0.0)
    out = np.empty_like(u)
    out[order] = xs
    return np.where(u >= 0, out, -out)


# ---------------------------------------------------------------------------
# file-drawer estimating equation: beta + mills((tau - beta)/c)/c = y

@njit
def _fd_score(beta, y, tau, c):
    return (beta - y) + _mills_scalar((tau - beta) / c) / c


@njit
def _fd_curv(beta, tau, c):
    u = (tau - beta) / c
    m = _mills_scalar(u)
    return 1.0 - m * (m - u) / (c * c)


@njit
def fd_mle_nb(y, tau, c, tol, max_iter):
    n = y.shape[0]
    beta = np.empty(n)
    resid = np.empty(n)
    iters = np.zeros(n, dtype=np.int64)
    for i in range(n):
        yi = y[i]
        hi = yi
        step = 10.0 * c
        lo = yi - step
        while _fd_score(lo, yi, tau, c) > 0.0:
            step *= 2.0
            lo = yi - step
        b = 0.5 * (lo + hi)
        f = _fd_score(b, yi, tau, c)
        it = 0
        while abs(f) > tol and it < max_iter:
            if f > 0.0:
                hi = b
            else:
                lo = b
            nb = b - f / _fd_curv(b, tau, c)
            if not (lo < nb < hi):
                nb = 0.5 * (lo + hi)
            if nb == b:
                break
            b = nb
            f = _fd_score(b, yi, tau, c)
            it += 1
        beta[i] = b
        resid[i] = abs(f)
        iters[i] = it
    return beta, resid, iters


def fd_mle_np(y, tau, c, tol, max_iter):
    y = np.asarray(y, dtype=float)

    def score(b):
        return (b - y) + mills_np((tau - b) / c) / c

    hi = y.copy()
    step = np.full_like(y, 10.0 * c)
    lo = y - step
    bad = score(lo) > 0
    while bad.any():
        step[bad] *= 2.0
        lo[bad] = y[bad] - step[bad]
        bad = score(lo) > 0
    b = 0.5 * (lo + hi)
    f = score(b)
    iters = np.zeros(y.shape, dtype=np.int64)
    for _ in range(max_iter):
        live = np.abs(f) > tol
        if not live.any():
            break
        hi = np.where(live & (f > 0), b, hi)
        lo = np.where(live & (f <= 0), b, lo)
        u = (tau - b) / c
        m = mills_np(u)
        curv = 1.0 - m * (m - u) / c**2
        nb = b - f / curv
        nb = np.where((nb > lo) & (nb < hi), nb, 0.5 * (lo + hi))
        b = np.where(live, nb, b)
        f = score(b)
        iters += live
    return b, np.abs(f), iters


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    lasso_cd = lasso_cd_nb
    slope_prox_kernel = slope_prox_nb
    fd_mle_kernel = fd_mle_nb
else:
    lasso_cd = lasso_cd_np
    slope_prox_kernel = slope_prox_np
    fd_mle_kernel = fd_mle_np


def mills(x):
    """Inverse Mills ratio ``phi(x) / (1 - Phi(x))`` elementwise."""
    return mills_np(x)
