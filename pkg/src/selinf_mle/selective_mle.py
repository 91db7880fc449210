"""Approximate selective MLE and observed Fisher information.

Given the affine KKT map of a solved query, the active optimization
variables are Gaussian given the target statistic,

    o1 | beta_hat ~ N(A beta_hat + b, Sigma_bar),

and selection restricts them to ``{U o1 <= v}``.  Replacing the selection
probability by a barrier-penalized Gaussian quadratic gives a likelihood
whose maximizer and curvature have closed forms in terms of the solution
``o1*`` of a small convex program.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import linalg
from scipy.stats import norm as ndist

from .exceptions import DegenerateSelection, DomainError, NumericalError, SolverError

__all__ = [
    "ImpliedParams",
    "BarrierSpec",
    "MleResult",
    "implied_params",
    "barrier",
    "solve_barrier",
    "selective_mle",
    "fisher_info",
    "joint_inner_solve",
    "approx_loglik",
    "log_partition_grad",
    "inference_from",
    "infer",
    "MvBoundReport",
    "mse_bound_check_mv",
]

BARRIER_TOL = 1e-10
JOINT_TOL = 1e-10
MAX_NEWTON = 200


def _sym(M):
    return 0.5 * (M + M.T)


def _cho(M, what="matrix"):
    """Cholesky factor with one jittered retry; returns ``(cf, jitter)``."""
    M = _sym(np.atleast_2d(M))
    try:
        return linalg.cho_factor(M), 0.0
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(M) / M.shape[0]
        try:
            return linalg.cho_factor(M + jitter * np.eye(M.shape[0])), jitter
        except linalg.LinAlgError:
            raise NumericalError(f"{what} is not positive definite") from None


@dataclass
class ImpliedParams:
    Sigma_bar: np.ndarray
    A: np.ndarray
    b: np.ndarray
    prec: np.ndarray  # inverse of Sigma_bar

    def mean(self, beta_hat):
        return self.A @ beta_hat + self.b


def implied_params(kkt, Sigma_W):
    Q = np.atleast_2d(kkt.Q)
    if np.linalg.matrix_rank(Q) < Q.shape[1]:
        raise NumericalError("Q does not have full column rank")
    cfW, _ = _cho(Sigma_W, "randomization covariance")
    WiQ = linalg.cho_solve(cfW, Q)
    prec = _sym(Q.T @ WiQ)
    cf, _ = _cho(prec, "implied precision")
    Sigma_bar = _sym(linalg.cho_solve(cf, np.eye(Q.shape[1])))
    A = -linalg.cho_solve(cf, WiQ.T @ kkt.P)
    b = -linalg.cho_solve(cf, WiQ.T @ kkt.r)
    return ImpliedParams(Sigma_bar, A, b, prec)


# ---------------------------------------------------------------------------
# barrier  B(o) = sum_i log(1 + 1/(v_i - u_i'o))

@dataclass
class BarrierSpec:
    U: np.ndarray
    v: np.ndarray
    kind: str = field(default="")

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.v = np.asarray(self.v, dtype=float).ravel()
        if not self.kind:
            self.kind = "sign" if self._is_sign() else "affine"
        if self.kind == "sign":
            self.z = -np.diag(self.U).copy()

    def _is_sign(self):
        U = self.U
        return (U.shape[0] == U.shape[1] and np.all(self.v == 0)
                and np.all(U == np.diag(np.diag(U)))
                and np.all(np.abs(np.diag(U)) == 1))

    @classmethod
    def from_kkt(cls, kkt):
        return cls(kkt.U, kkt.v)

    def slack(self, o):
        return self.v - self.U @ o

    def feasible(self, o):
        return bool(np.all(self.slack(o) > 0))


def barrier(o, spec):
    """Value, gradient and Hessian of the barrier at a strictly feasible ``o``."""
    o = np.asarray(o, dtype=float)
    s = spec.slack(o)
    if not np.all(s > 0):
        raise DomainError("barrier evaluated outside the feasible region")
    value = float(np.sum(np.log1p(1.0 / s)))
    w = 1.0 / (s * (s + 1.0))
    h = (2.0 * s + 1.0) / (s * s * (s + 1.0) ** 2)
    if spec.kind == "sign":
        return value, -spec.z * w, np.diag(h)
    U = spec.U
    return value, U.T @ w, (U.T * h) @ U


def _feasible_start(init, spec):
    o = np.asarray(init, dtype=float).copy()
    if spec.feasible(o):
        return o
    if spec.kind == "sign":
        shifted = np.where(spec.z * o > 0, o, 0.1 * spec.z) + 0.1 * spec.z
        if spec.feasible(shifted):
            return shifted
    raise DomainError("barrier solver needs a strictly feasible starting point")


def _polish(fun, x, g, H, feasible, gnorm, steps=3):
    """Extra full Newton steps kept only while the gradient keeps shrinking."""
    for _ in range(steps):
        cf, _ = _cho(H, "Newton Hessian")
        xn = x - linalg.cho_solve(cf, g)
        if not feasible(xn):
            break
        _, gn, Hn, _ = fun(xn)
        gn_norm = float(np.max(np.abs(gn))) if gn.size else 0.0
        if not gn_norm < gnorm:
            break
        x, g, H, gnorm = xn, gn, Hn, gn_norm
    return x


def _newton(fun, x0, feasible, tol, max_iter, what):
    """Damped Newton for a smooth convex ``fun`` returning (f, g, H, gscale)."""
    x = x0
    f, g, H, gscale = fun(x)
    for it in range(max_iter):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= tol * gscale:
            return _polish(fun, x, g, H, feasible, gnorm), it, gnorm
        cf, _ = _cho(H, "Newton Hessian")
        step = linalg.cho_solve(cf, g)
        dec = float(g @ step)
        # below this decrement the change in f is lost to rounding, so the
        # Armijo test is meaningless; take plain Newton steps instead
        local = dec < 1e-10 * (1.0 + abs(f))
        t = 1.0
        while True:
            xn = x - t * step
            if feasible(xn):
                fn, gn, Hn, gsn = fun(xn)
                if local or fn <= f - 1e-4 * t * dec:
                    break
            t *= 0.5
            if t < 1e-20:
                raise SolverError(f"{what}: line search failed", residual=gnorm,
                                  iterations=it)
        x, f, g, H, gscale = xn, fn, gn, Hn, gsn
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if gnorm <= tol * gscale:
        return x, max_iter, gnorm
    raise SolverError(f"{what} did not converge in {max_iter} iterations",
                      residual=gnorm, iterations=max_iter)


def solve_barrier(ip, beta_hat, spec, init, tol=BARRIER_TOL, max_iter=MAX_NEWTON):
    """Minimize ``(o - mu)' Sigma_bar^{-1} (o - mu) / 2 + B(o)``, ``mu = A beta_hat + b``."""
    mu = ip.mean(np.asarray(beta_hat, dtype=float))
    prec = ip.prec

    def fun(o):
        val, gb, Hb = barrier(o, spec)
        q = prec @ (o - mu)
        f = 0.5 * float((o - mu) @ q) + val
        gscale = 1.0 + max(float(np.max(np.abs(q))), float(np.max(np.abs(gb))))
        return f, q + gb, prec + Hb, gscale

    o, _, _ = _newton(fun, _feasible_start(init, spec), spec.feasible, tol,
                      max_iter, "barrier program")
    return o


def selective_mle(beta_hat, Sigma_S, ip, o1_star):
    beta_hat = np.asarray(beta_hat, dtype=float)
    return beta_hat + Sigma_S @ (ip.A.T @ (ip.prec @ (ip.mean(beta_hat) - o1_star)))


def _curvature_term(ip, o1_star, spec):
    # Sigma_bar^{-1} - Sigma_bar^{-1}(Sigma_bar^{-1} + H)^{-1} Sigma_bar^{-1}
    # written as Sigma_bar^{-1}(Sigma_bar^{-1} + H)^{-1} H to avoid cancellation
    _, _, H = barrier(o1_star, spec)
    cf, _ = _cho(ip.prec + H, "barrier Hessian")
    T = _sym(ip.prec @ linalg.cho_solve(cf, H))
    return ip.A.T @ T @ ip.A


def _info_from_terms(Sigma_S, terms):
    cfS, _ = _cho(Sigma_S, "target covariance")
    K = linalg.cho_solve(cfS, np.eye(Sigma_S.shape[0]))
    for term in terms:
        K = K + term
    info_inv = _sym(Sigma_S @ K @ Sigma_S)
    try:
        cf = linalg.cho_factor(info_inv)
    except linalg.LinAlgError:
        cond = np.linalg.cond(info_inv)
        raise NumericalError(
            f"inverse Fisher information lost positive definiteness (cond {cond:.2e})"
        ) from None
    info = _sym(linalg.cho_solve(cf, np.eye(info_inv.shape[0])))
    return info, info_inv


def fisher_info(ip, Sigma_S, o1_star, spec):
    """Observed Fisher information at the MLE and its inverse."""
    return _info_from_terms(Sigma_S, [_curvature_term(ip, o1_star, spec)])


# ---------------------------------------------------------------------------
# the barrier-approximate likelihood itself

def joint_inner_solve(center, Sigma_S, blocks, tol=JOINT_TOL, max_iter=MAX_NEWTON):
    """Jointly minimize over ``beta'`` and every block's ``o``.

    Objective: ``(beta' - center)' Sigma_S^{-1} (beta' - center) / 2`` plus,
    for each ``(ip, spec, init)`` in ``blocks``,
    ``(o - A beta' - b)' Sigma_bar^{-1} (o - A beta' - b) / 2 + B(o)``.
    Dense Newton on the stacked variable.  Returns ``(value, beta', [o])``.
    """
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    cfS, _ = _cho(Sigma_S, "target covariance")
    Sinv = linalg.cho_solve(cfS, np.eye(d))
    sizes = [blk[0].A.shape[0] for blk in blocks]
    cuts = np.cumsum([d] + sizes)

    def split(x):
        return x[:d], [x[cuts[i]:cuts[i + 1]] for i in range(len(blocks))]

    def feasible(x):
        _, os_ = split(x)
        return all(blk[1].feasible(o) for blk, o in zip(blocks, os_))

    def fun(x):
        bp, os_ = split(x)
        db = bp - center
        qb = Sinv @ db
        f = 0.5 * float(db @ qb)
        g = np.zeros_like(x)
        H = np.zeros((x.size, x.size))
        g[:d] = qb
        H[:d, :d] = Sinv
        gscale = float(np.max(np.abs(qb))) if d else 0.0
        for i, ((ip, spec, _), o) in enumerate(zip(blocks, os_)):
            sl = slice(cuts[i], cuts[i + 1])
            res = o - ip.A @ bp - ip.b
            q = ip.prec @ res
            val, gb, Hb = barrier(o, spec)
            f += 0.5 * float(res @ q) + val
            g[:d] -= ip.A.T @ q
            g[sl] = q + gb
            PA = ip.prec @ ip.A
            H[:d, :d] += ip.A.T @ PA
            H[:d, sl] = -PA.T
            H[sl, :d] = -PA
            H[sl, sl] = ip.prec + Hb
            gscale = max(gscale, float(np.max(np.abs(q))), float(np.max(np.abs(gb))))
        return f, g, H, 1.0 + gscale

    x0 = np.concatenate([center] + [_feasible_start(blk[2], blk[1]) for blk in blocks])
    x, _, _ = _newton(fun, x0, feasible, tol, max_iter, "joint likelihood program")
    value = fun(x)[0]
    bp, os_ = split(x)
    return value, bp, os_


def approx_loglik(beta_hat, breve_beta, Sigma_S, ip, spec, init):
    """Barrier-approximate selective log-likelihood at parameter ``breve_beta``."""
    return _approx_loglik_blocks(beta_hat, breve_beta, Sigma_S, [(ip, spec, init)])


def _approx_loglik_blocks(beta_hat, breve_beta, Sigma_S, blocks):
    beta_hat = np.asarray(beta_hat, dtype=float)
    breve_beta = np.asarray(breve_beta, dtype=float)
    diff = beta_hat - breve_beta
    quad = float(diff @ np.linalg.solve(Sigma_S, diff))
    value, _, _ = joint_inner_solve(breve_beta, Sigma_S, blocks)
    return -0.5 * quad + value


def log_partition_grad(breve_beta, Sigma_S, blocks):
    """Gradient of the approximate log-partition in the natural parameter.

    Equals the inner minimizer ``beta'`` of :func:`joint_inner_solve`.
    """
    _, bp, _ = joint_inner_solve(breve_beta, Sigma_S, blocks)
    return bp


# ---------------------------------------------------------------------------
# reporting

@dataclass
class MleResult:
    E: np.ndarray
    mle: np.ndarray
    info_inverse: np.ndarray
    pvalues: np.ndarray
    intervals: np.ndarray
    level: float
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, level):
        return cls(np.zeros(0, int), np.zeros(0), np.zeros((0, 0)), np.zeros(0),
                   np.zeros((0, 2)), level, {"empty_selection": True})

    @property
    def is_empty(self):
        return self.mle.size == 0

    @property
    def se(self):
        return np.sqrt(np.diag(self.info_inverse))

    @property
    def lengths(self):
        return self.intervals[:, 1] - self.intervals[:, 0]

    def to_dict(self):
        return dict(
            selected=[int(j) for j in self.E],
            mle=self.mle.tolist(),
            se=self.se.tolist(),
            pvalues=self.pvalues.tolist(),
            intervals=self.intervals.tolist(),
            level=self.level,
        )


def inference_from(mle, info_inverse, q):
    """Two-sided p-values for zero and ``1 - q`` Wald intervals."""
    if not 0 < q < 1:
        raise DomainError("q must lie in (0, 1)")
    s = np.sqrt(np.diag(info_inverse))
    zs = mle / s
    pvalues = 2.0 * np.minimum(ndist.sf(zs), ndist.cdf(zs))
    half = ndist.isf(q / 2.0) * s
    intervals = np.column_stack([mle - half, mle + half])
    return pvalues, intervals


def infer(target, kkt, Sigma_W, q=0.10):
    """Approximate MLE-based inference after one randomized query."""
    if target is None or target.d == 0:
        return MleResult.empty(1.0 - q)
    ip = implied_params(kkt, Sigma_W)
    spec = BarrierSpec.from_kkt(kkt)
    o_star = solve_barrier(ip, target.beta_hat, spec, kkt.o1)
    mle = selective_mle(target.beta_hat, target.Sigma_S, ip, o_star)
    _, info_inv = fisher_info(ip, target.Sigma_S, o_star, spec)
    pvalues, intervals = inference_from(mle, info_inv, q)
    return MleResult(np.asarray(target.E), mle, info_inv, pvalues, intervals,
                     1.0 - q, {"o1_star": o_star})


# ---------------------------------------------------------------------------
# Monte-Carlo check of the MSE bound

@dataclass(frozen=True)
class MvBoundReport:
    mse: float
    bound: float
    se: float
    B: float
    eta0: float
    eta1: float
    accepted: int
    holds: bool


def sample_selected_mv(breve_beta, Sigma_S, ip, spec, size, rng,
                       max_attempts=10**7):
    """Draw ``(beta_hat, o1)`` jointly and keep draws with ``U o1 < v``."""
    rng = np.random.default_rng(rng)
    LS = np.linalg.cholesky(Sigma_S)
    LB = np.linalg.cholesky(ip.Sigma_bar)
    bh, os_ = [], []
    kept = tried = 0
    batch = max(4 * size, 1000)
    while kept < size:
        if tried >= max_attempts:
            raise DegenerateSelection(f"{kept} of {size} selected draws in {tried} attempts")
        m = min(batch, max_attempts - tried)
        B = breve_beta + rng.standard_normal((m, LS.shape[0])) @ LS.T
        O = B @ ip.A.T + ip.b + rng.standard_normal((m, LB.shape[0])) @ LB.T
        ok = np.all(O @ spec.U.T < spec.v, axis=1)
        bh.append(B[ok])
        os_.append(O[ok])
        kept += int(ok.sum())
        tried += m
        batch = min(4 * batch, 10**6)
    return np.concatenate(bh)[:size], np.concatenate(os_)[:size]


def mse_bound_check_mv(breve_beta, Sigma_S, ip, spec, init, draws=2000, seed=0):
    """Conditional MSE of the approximate MLE against its strong-convexity bound.

    ``B = (eta0 * eta1)**2`` where ``eta0`` is the smallest eigenvalue of
    ``(A' Sigma_bar^{-1} A + Sigma_S^{-1})^{-1}`` and ``eta1`` that of
    ``Sigma_S^{-1}``.
    """
    breve_beta = np.asarray(breve_beta, dtype=float)
    Sinv = np.linalg.inv(Sigma_S)
    eta0 = 1.0 / np.linalg.eigvalsh(ip.A.T @ ip.prec @ ip.A + Sinv)[-1]
    eta1 = 1.0 / np.linalg.eigvalsh(Sigma_S)[-1]
    B = (eta0 * eta1) ** 2
    center = log_partition_grad(breve_beta, Sigma_S, [(ip, spec, init)])
    bh, os_ = sample_selected_mv(breve_beta, Sigma_S, ip, spec, draws, seed)
    sq = np.empty(bh.shape[0])
    for i in range(bh.shape[0]):
        o_star = solve_barrier(ip, bh[i], spec, os_[i])
        m = selective_mle(bh[i], Sigma_S, ip, o_star)
        sq[i] = np.sum((m - breve_beta) ** 2)
    dev = np.sum((bh - center) ** 2, axis=1) / B
    diff = sq - dev
    se = float(diff.std(ddof=1) / math.sqrt(sq.size))
    mse = float(sq.mean())
    bound = float(dev.mean())
    return MvBoundReport(mse, bound, se, float(B), float(eta0), float(eta1),
                         int(sq.size), mse <= bound + 3.0 * se)
