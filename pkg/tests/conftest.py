import numpy as np
import pytest

from defreg.grid import VectorField, Volume

ACCEPTANCE_LINES = []


def rel_err(analytic, numeric):
    """Max absolute difference scaled by the larger gradient magnitude."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-30)
    return float(np.abs(a - n).max() / scale)


def fd_gradient(f, x, h=1e-4, indices=None):
    """Central differences of scalar ``f`` at ``x`` for the given flat indices."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_volume(rng, dims, lo=0.0, hi=1.0):
    return Volume(rng.uniform(lo, hi, dims))


def random_field(rng, dims, scale=1.0):
    return VectorField(scale * rng.standard_normal(tuple(dims) + (3,)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
