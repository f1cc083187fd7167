import numpy as np
import pytest

from klshrink.model import make_model


@pytest.fixture
def fig1():
    """p = 5, v_x = 1, v_y = 0.2."""
    return make_model(5, 1.0, 0.2)


def e(i, p):
    out = np.zeros(p)
    out[i] = 1.0
    return out


def fd_gradient(f, z, h=1e-4):
    """Richardson-extrapolated central differences of a scalar function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for i in range(z.size):
        d = np.zeros_like(z)
        d[i] = 1.0
        c1 = (f(z + h * d) - f(z - h * d)) / (2 * h)
        c2 = (f(z + 0.5 * h * d) - f(z - 0.5 * h * d)) / h
        out[i] = (4 * c2 - c1) / 3
    return out


def fd_laplacian(f, z, h=1e-3):
    z = np.asarray(z, dtype=float)
    f0 = f(z)
    total = 0.0
    for i in range(z.size):
        d = np.zeros_like(z)
        d[i] = 1.0
        s1 = (f(z + h * d) - 2 * f0 + f(z - h * d)) / h**2
        s2 = (f(z + 0.5 * h * d) - 2 * f0 + f(z - 0.5 * h * d)) / (0.25 * h**2)
        total += (4 * s2 - s1) / 3
    return total


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
