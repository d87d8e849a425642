import pytest

from dialectfp4 import build_default_formatbook


@pytest.fixture(scope="session")
def fb():
    return build_default_formatbook()


@pytest.fixture(scope="session")
def both_backends():
    """Backends to exercise in parity tests; numba is a hard dependency here."""
    return ("numpy", "numba")


def quarter_values(dialect_values):
    """Dialect half-unit values doubled onto the quarter-code grid."""
    return [2 * v for v in dialect_values]


def nearest_index_bruteforce(q, values):
    """Oracle for quantize_element: nearest value, midpoint ties to larger."""
    dists = [abs(q - 2 * v) for v in values]
    best = min(dists)
    candidates = [i for i, d in enumerate(dists) if d == best]
    return max(candidates)
