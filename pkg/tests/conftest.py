import numpy as np
import pytest

from eeio.allocation import ConcordanceMatrix, MappingMatrix, SplittingKey
from eeio.balance import BalanceSchema, UseTable
from eeio.fixture import generate_fixture

# worked example: 4 target sectors (s1, s2, s3, hh) and 3 flows
SECTORS = ("s1", "s2", "s3", "HH")
FLOWS = ("fl1", "fl2", "fl3")
PRODUCTS = ("pr1", "pr2")
C_EXAMPLE = np.array([[1, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 1]], dtype=float)
A_EXAMPLE = np.array([12.0, 4.0, 1.0, 14.0])
USE_EXAMPLE = np.array([[100.0, 20.0], [4.0, 2.0], [15.0, 1.0]])
# M as printed, two decimals
M_PRINTED = np.array(
    [[0.75, 0, 0.39], [0.25, 0, 0.13], [0, 1, 0.03], [0, 0, 0.45]]
)
MSTAR_PRINTED = np.array(
    [
        [0.75, 0.25, 0, 0],
        [0.75, 0.25, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 1, 0],
        [0.39, 0.13, 0.03, 0.45],
        [0.39, 0.13, 0.03, 0.45],
    ]
)
E_PRINTED = np.array([[100, 0, 4, 0, 15, 0], [0, 20, 0, 2, 0, 1]], dtype=float)
W_PRINTED = np.array([[80, 27, 4, 6], [15, 5, 2, 0.5]])
W_FROM_PRINTED_M = np.array([[80.85, 26.95, 4.45, 6.75], [15.39, 5.13, 2.03, 0.45]])


@pytest.fixture
def example_concordance():
    return ConcordanceMatrix(SECTORS, FLOWS, C_EXAMPLE)


@pytest.fixture
def example_key():
    return SplittingKey(SECTORS, A_EXAMPLE)


@pytest.fixture
def example_use():
    return UseTable("XX", 2000, FLOWS, PRODUCTS, USE_EXAMPLE)


@pytest.fixture
def printed_mapping():
    return MappingMatrix(SECTORS, FLOWS, M_PRINTED)


@pytest.fixture
def example_schema():
    return BalanceSchema({"fl1": "final_consumption", "fl2": "final_consumption", "fl3": "final_consumption"})


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    generate_fixture(d, seed=1, R=3, N=4, F=6, P=5)
    return d


def power_series_inverse(A, tol=1e-14, max_terms=10_000):
    """Oracle for (I - A)^-1 as I + A + A^2 + ... until terms vanish."""
    n = A.shape[0]
    total = np.eye(n)
    term = np.eye(n)
    for _ in range(max_terms):
        term = term @ A
        total = total + term
        if np.abs(term).max() < tol:
            return total
    raise RuntimeError("power series did not converge")


def random_coefficients(rng, n, max_row_sum=0.9):
    """Nonnegative A with every row and column sum below ``max_row_sum``."""
    A = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.6)
    sums = np.maximum(A.sum(axis=1, keepdims=True), A.sum(axis=0, keepdims=True))
    return A * rng.uniform(0.05, max_row_sum, size=(n, 1)) / np.maximum(sums.max(), 1e-12)


def closed_system(rng, R, N, D=2):
    """Z, Y, x with x = Z 1 + Y 1 holding to rounding."""
    from eeio.mrio_footprint import assemble_system

    n = R * N
    A = random_coefficients(rng, n)
    Y = rng.uniform(1.0, 100.0, size=(n, R * D))
    x = np.linalg.solve(np.eye(n) - A, Y.sum(axis=1))
    Z = A * x
    regions = tuple(f"R{k}" for k in range(R))
    return Z, assemble_system(Z, Y, x, regions, tuple(f"s{i}" for i in range(N)), tuple(f"c{d}" for d in range(D)))


# acceptance criteria register their verdicts here for the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=int):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
