import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import closed_system, power_series_inverse, random_coefficients
from eeio.allocation import EnergyAccount
from eeio.errors import AxisMismatch, FootprintError
from eeio.mrio_footprint import (
    IntensityVector,
    LeontiefSolver,
    assemble_system,
    compute_intensity,
    footprint,
    leontief_inverse,
    read_mrio,
    read_population,
    write_contributions,
    write_footprints,
    write_mrio,
)


def test_coefficients_hand_case():
    system = assemble_system([[0, 10], [20, 0]], [[90], [30]], [100, 50])
    np.testing.assert_array_equal(system.A, [[0, 0.2], [0.2, 0]])
    assert system.identity_residual == 0.0


def test_leontief_hand_case():
    L = leontief_inverse([[0, 0.2], [0.2, 0]])
    np.testing.assert_allclose(L, np.array([[1, 0.2], [0.2, 1]]) / 0.96, rtol=1e-14)


def test_zero_coefficients_give_identity():
    np.testing.assert_array_equal(leontief_inverse(np.zeros((5, 5))), np.eye(5))


def test_unstable_system_rejected():
    with pytest.raises(FootprintError):
        leontief_inverse([[0.5, 0.6], [0.6, 0.5]])
    with pytest.raises(FootprintError):
        leontief_inverse([[1.0, 0.0], [0.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_direct_solve_matches_power_series(seed, n):
    A = random_coefficients(np.random.default_rng(seed), n)
    np.testing.assert_allclose(leontief_inverse(A), power_series_inverse(A), rtol=0, atol=1e-8)


def test_identity_violation_is_warned():
    system = assemble_system([[0, 10], [20, 0]], [[90], [30]], [100, 60])
    assert system.identity_residual > 0.1 and system.warnings


def test_inputs_without_output_rejected():
    with pytest.raises(FootprintError):
        assemble_system([[0, 1], [0, 0]], [[1], [0]], [2, 0])
    with pytest.raises(FootprintError):
        assemble_system([[-1.0]], [[2.0]])


def _accounts(system, rng):
    out = {}
    for r in system.regions:
        sectors = system.sectors + ("HH",)
        out[r] = EnergyAccount(r, 2010, ("p1", "p2"), sectors, rng.uniform(0, 50, (2, len(sectors))))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 10))
def test_global_closure(seed, R, N):
    rng = np.random.default_rng(seed)
    _, system = closed_system(rng, R, N)
    accounts = _accounts(system, rng)
    res = footprint(system, compute_intensity(accounts, system))
    world = sum(a.total() for a in accounts.values())
    assert res.pba.sum() == pytest.approx(world, rel=1e-12)
    assert res.cba.sum() == pytest.approx(res.pba.sum(), rel=1e-6)
    assert res.beet.sum() == pytest.approx(0.0, abs=1e-6 * world)


def test_single_region_has_no_trade_balance():
    rng = np.random.default_rng(3)
    _, system = closed_system(rng, 1, 6)
    res = footprint(system, compute_intensity(_accounts(system, rng), system))
    assert abs(res.beet[0]) <= 1e-9 * res.pba[0]


def test_households_switch_and_per_capita():
    rng = np.random.default_rng(4)
    _, system = closed_system(rng, 2, 3)
    iv = IntensityVector(rng.uniform(0, 1, 6), np.array([10.0, 20.0]))
    with_hh = footprint(system, iv, population=[1e6, 2e6])
    without = footprint(system, iv, include_households=False)
    np.testing.assert_allclose(with_hh.pba - without.pba, [10, 20])
    np.testing.assert_allclose(with_hh.cba - without.cba, [10, 20])
    np.testing.assert_allclose(with_hh.beet, without.beet)
    np.testing.assert_allclose(with_hh.pba_per_capita, with_hh.pba * 1000 / [1e6, 2e6])
    with pytest.raises(FootprintError):
        footprint(system, iv, population=[1e6, 0])


def test_orphaned_energy_reported():
    system = assemble_system([[0, 0], [0, 0]], [[5], [0]], regions=("R",), sectors=("a", "b"))
    acct = EnergyAccount("R", 2010, ("p",), ("a", "b", "HH"), [[10.0, 3.0, 1.0]])
    iv = compute_intensity({"R": acct}, system)
    assert iv.orphaned == (("R", "b", 3.0),) and iv.orphaned_tj == 3.0
    np.testing.assert_array_equal(iv.e, [2.0, 0.0])


def test_intensity_sector_mismatch():
    system = assemble_system([[0.0]], [[1.0]], regions=("R",), sectors=("a",))
    acct = EnergyAccount("R", 2010, ("p",), ("z", "HH"), [[1.0, 1.0]])
    with pytest.raises(AxisMismatch):
        compute_intensity({"R": acct}, system)
    with pytest.raises(FootprintError):
        compute_intensity({}, system)


def test_solver_reuse_matches_inverse():
    A = random_coefficients(np.random.default_rng(9), 8)
    solver = LeontiefSolver(A)
    L = leontief_inverse(A)
    b = np.arange(8.0)
    np.testing.assert_allclose(solver.solve(b), L @ b, rtol=1e-12)
    np.testing.assert_allclose(solver.solve_transposed(b), L.T @ b, rtol=1e-12)


def test_mrio_and_population_files(tmp_path):
    rng = np.random.default_rng(5)
    Z, system = closed_system(rng, 2, 3)
    write_mrio(tmp_path / "mrio", Z, system)
    back = read_mrio(tmp_path / "mrio")
    assert back.row_labels == system.row_labels and back.categories == system.categories
    np.testing.assert_allclose(back.A, system.A, rtol=1e-15)
    (tmp_path / "pop.csv").write_text("region,year,persons\nR0,2010,5\nR1,2010,7\n")
    pop = read_population(tmp_path / "pop.csv")
    assert pop[("R1", 2010)] == 7.0

    iv = IntensityVector(np.ones(6), np.zeros(2))
    res = footprint(system, iv, year=2010)
    write_footprints(tmp_path / "fp.csv", [res])
    write_contributions(tmp_path / "c.csv", [res], {2010: system.row_labels})
    assert (tmp_path / "fp.csv").read_text().startswith("region,year,pba_tj")
