import numpy as np
import pytest

from focalbo.kernels import KernelParams
from focalbo.svgp import Layout, VariationalState


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def random_params(rng, d, noise=None):
    return KernelParams(rng.uniform(0.2, 0.7, d), rng.uniform(0.5, 2.0), noise or rng.uniform(0.05, 0.3))


def random_state(rng, m, d):
    Z = rng.random((m, d))
    L = np.tril(0.1 * rng.standard_normal((m, m)), -1) + np.diag(rng.uniform(0.3, 1.0, m))
    return VariationalState(Z, 0.5 * rng.standard_normal(m), L)


def random_theta(rng, d, m):
    layout = Layout(d, m)
    return layout, layout.pack(random_params(rng, d), random_state(rng, m, d))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
