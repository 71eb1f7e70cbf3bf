import numpy as np
import pytest

from eknockoffs.knockoffs import GaussianModel


def ar1(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def linear_problem(n, p, k, amp=1.0, rho=0.3, seed=0):
    rng = np.random.default_rng(seed)
    cov = ar1(p, rho)
    X = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
    beta = np.zeros(p)
    beta[:k] = amp * np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    y = X @ beta + rng.standard_normal(n)
    return X, y, beta, GaussianModel.from_cov(cov)


@pytest.fixture
def small_problem():
    return linear_problem(120, 10, 3, amp=1.0, seed=11)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
