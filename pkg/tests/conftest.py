import numpy as np
import pytest

from selinf_mle.queries import (Dataset, KktAffine, RandomizationSpec, TargetModel,
                                build_target, lasso_kkt, solve_randomized_lasso)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def filedrawer_kkt(y, w, tau=0.0, eta2=1.0):
    """File-drawer selection ``Y + W > tau`` written as a one-coordinate query."""
    kkt = KktAffine(P=np.array([[-1.0]]), Q=np.array([[1.0]]), r=np.array([tau]),
                    U=np.array([[-1.0]]), v=np.zeros(1), o1=np.array([y + w - tau]),
                    omega=np.array([w]))
    target = TargetModel(np.array([float(y)]), np.eye(1), "partial", np.ones((1, 1)),
                         np.array([0]), 1.0)
    return kkt, target, eta2 * np.eye(1)


def lasso_instance(seed, n=100, p=10, s=3, amp=0.4, lam_mult=1.5, ratio=0.5,
                   kind="partial", max_d=None):
    """Randomized lasso on Gaussian data; retries seeds until the selection fits."""
    k = 0
    while True:
        rng = np.random.default_rng([seed, k])
        k += 1
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[:s] = amp * rng.choice([-1.0, 1.0], s)
        mean = X @ beta
        y = mean + rng.standard_normal(n)
        data = Dataset(X, y, 1.0)
        rand = RandomizationSpec.isotropic(ratio * n, p)
        lam = lam_mult * np.sqrt(n)
        try:
            out = solve_randomized_lasso(data, rand, lam, rng=rng)
        except Exception:
            continue
        if max_d is not None and out.E.size > max_d:
            continue
        target = build_target(data, out.E, kind)
        kkt = lasso_kkt(data, out, lam, 1.0 / np.sqrt(n), target)
        return dict(data=data, rand=rand, lam=lam, out=out, target=target, kkt=kkt,
                    beta=beta, mean=mean)


@pytest.fixture
def fd_kkt():
    return filedrawer_kkt
