import numpy as np
import pytest

from skewlap import logistic as lg
from skewlap import multinomial as mn
from skewlap.laplace import find_mode, fit_laplace


def random_spd(rng, d, shift=1.0):
    A = rng.standard_normal((d, d))
    return A @ A.T + shift * np.eye(d)


def random_symmetric_tensor(rng, d):
    T = rng.standard_normal((d, d, d))
    return sum(T.transpose(p) for p in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6.0


def fitted(model, x0):
    res = find_mode(model, x0)
    assert res.converged
    return fit_laplace(model, res.mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logreg_d2():
    ds = lg.generate_data(40, 2, np.array([1.0, 0.0]), seed=3)
    post = lg.build_posterior(ds, 0.0)
    return post, fitted(post.model, np.zeros(2))


@pytest.fixture(scope="session")
def logreg_d5():
    ds = lg.generate_data(150, 5, np.eye(5)[0], seed=11)
    post = lg.build_posterior(ds, 0.5)
    return post, fitted(post.model, np.zeros(5))


@pytest.fixture(scope="session")
def dirichlet4():
    mp = mn.build([30, 40, 20, 10])
    return mp, fitted(mp.model, np.full(3, 0.25))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
