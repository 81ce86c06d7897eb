import numpy as np
import pytest
from hypothesis import settings

from tensordeli.tensor import CPDecomposition

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_cp(shape, r, seed=0, weights=None):
    rng = np.random.default_rng(seed)
    factors = [rng.standard_normal((n, r)) for n in shape]
    return CPDecomposition.from_factors(factors, weights)


def dense_oracle_of(dec):
    """Brute-force materialization by explicit loops over every index."""
    out = np.zeros(dec.shape)
    for idx in np.ndindex(*dec.shape):
        total = 0.0
        for l in range(dec.rank):
            term = dec.weights[l]
            for k, i in enumerate(idx):
                term *= dec.factors[k][i, l]
            total += term
        out[idx] = total
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
