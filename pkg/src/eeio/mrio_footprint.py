"""Production- and consumption-based energy accounts on an MRIO system.

Consumption-based use of region r is ``e' L Y_r`` plus the direct energy use
of r's households, with ``L = (I - A)^-1``. ``L`` is never inverted
explicitly on the footprint path: ``(I - A)`` is LU-factorised once and
solved against the region-summed final demand.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .allocation import HOUSEHOLDS
from .errors import AxisMismatch, FootprintError, MalformedRow
from .textio import atomic_write, read_rows, to_csv_text, write_csv

logger = logging.getLogger(__name__)

TJ_TO_GJ = 1000.0


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MrioSystem:
    regions: tuple
    sectors: tuple
    categories: tuple
    A: np.ndarray
    Y: np.ndarray
    x: np.ndarray
    identity_residual: float = 0.0
    warnings: tuple = field(default=())

    def __post_init__(self):
        for name in ("regions", "sectors", "categories", "warnings"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("A", "Y", "x"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.regions) * len(self.sectors)
        if self.A.shape != (n, n):
            raise AxisMismatch(f"A is {self.A.shape}, expected ({n}, {n})")
        if self.Y.shape != (n, len(self.regions) * len(self.categories)):
            raise AxisMismatch(f"Y is {self.Y.shape}, labels imply ({n}, {len(self.regions) * len(self.categories)})")
        if self.x.shape != (n,):
            raise AxisMismatch(f"x has length {len(self.x)}, expected {n}")

    @property
    def row_labels(self):
        return [(r, s) for r in self.regions for s in self.sectors]

    @property
    def y_labels(self):
        return [(r, c) for r in self.regions for c in self.categories]

    def region_demand(self):
        """Final demand summed over each region's categories (RN x R)."""
        D = len(self.categories)
        return self.Y.reshape(self.Y.shape[0], len(self.regions), D).sum(axis=2)


def assemble_system(Z, Y, x=None, regions=("R1",), sectors=None, categories=None, tol=1e-6):
    """Technical coefficients ``A = Z diag(x)^-1`` plus identity check.

    ``x`` defaults to ``Z 1 + Y 1``. Columns with zero output must have no
    intermediate inputs. Identity residuals above ``tol`` (relative to the
    row's output) are logged and kept in ``warnings``.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise AxisMismatch(f"Z must be square, got {Z.shape}")
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Z.shape[0]
    if Y.shape[0] != n:
        raise AxisMismatch("Z and Y row counts differ")
    if (Z < 0).any():
        i, j = np.argwhere(Z < 0)[0]
        raise FootprintError(f"negative intermediate flow Z[{i}, {j}] = {Z[i, j]!r}")
    x = Z.sum(axis=1) + Y.sum(axis=1) if x is None else np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise AxisMismatch("x length does not match Z")
    if (x < 0).any():
        raise FootprintError("output vector has negative entries")
    zero = x == 0
    bad = zero & (Z != 0).any(axis=0)
    if bad.any():
        raise FootprintError(f"sectors {np.nonzero(bad)[0].tolist()} have inputs but zero output")
    A = np.zeros_like(Z)
    A[:, ~zero] = Z[:, ~zero] / x[~zero]

    regions = tuple(regions)
    if sectors is None:
        sectors = tuple(f"s{i + 1}" for i in range(n // len(regions)))
    if categories is None:
        categories = tuple(f"c{k + 1}" for k in range(Y.shape[1] // len(regions)))

    residual = x - Z.sum(axis=1) - Y.sum(axis=1)
    rel = np.abs(residual) / np.maximum(np.abs(x), 1.0)
    worst = int(np.argmax(rel)) if n else 0
    max_rel = float(rel[worst]) if n else 0.0
    warnings = []
    if max_rel > tol:
        msg = f"accounting identity violated: max relative residual {max_rel:.3g} at row {worst}"
        logger.warning(msg)
        warnings.append(msg)
    return MrioSystem(regions, sectors, categories, A, Y, x, max_rel, tuple(warnings))


class LeontiefSolver:
    """LU factorisation of ``I - A`` reused for every right-hand side."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        try:
            with warnings.catch_warnings():
                # singularity is detected below and raised as FootprintError
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                self._lu = scipy.linalg.lu_factor(np.eye(n) - A, check_finite=True)
        except (ValueError, scipy.linalg.LinAlgError) as exc:
            raise FootprintError(f"cannot factorise I - A: {exc}") from exc
        diag = np.abs(np.diag(self._lu[0]))
        if n and diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * n:
            raise FootprintError("I - A is singular")

    def solve(self, B):
        """``L @ B``."""
        return scipy.linalg.lu_solve(self._lu, B)

    def solve_transposed(self, b):
        """``L' @ b``."""
        return scipy.linalg.lu_solve(self._lu, b, trans=1)


def leontief_inverse(A):
    """Total requirements matrix ``(I - A)^-1``.

    Raises FootprintError when the system is singular or when a nonnegative
    ``A`` yields a negative inverse (spectral radius >= 1).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    L = LeontiefSolver(A).solve(np.eye(n))
    if (A >= 0).all():
        scale = max(1.0, float(np.abs(L).max()))
        if (L < -1e-12 * scale).any() or (np.diag(L) < 1 - 1e-12 * scale).any():
            raise FootprintError("Leontief inverse not nonnegative: spectral radius of A >= 1")
    return L


@dataclass(frozen=True)
class IntensityVector:
    """Direct energy intensity (TJ per currency unit) and household direct use (TJ)."""

    e: np.ndarray
    household_direct: np.ndarray
    orphaned: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "e", _frozen(self.e))
        object.__setattr__(self, "household_direct", _frozen(self.household_direct))

    @property
    def orphaned_tj(self):
        return float(sum(tj for _, _, tj in self.orphaned))


def compute_intensity(accounts, system, household_id=HOUSEHOLDS):
    """Energy per unit output from per-region accounts.

    Parameters
    ----------
    accounts : mapping region -> EnergyAccount
        Sector axes are the system sectors plus the household column, in any
        order.
    system : MrioSystem

    Energy of sectors with zero output cannot be expressed as an intensity;
    it is listed in ``orphaned`` and left out of both accounts.
    """
    N = len(system.sectors)
    energy = np.zeros(len(system.regions) * N)
    hh = np.zeros(len(system.regions))
    for k, region in enumerate(system.regions):
        if region not in accounts:
            raise FootprintError(f"no energy account for region {region!r}")
        acct = accounts[region]
        totals = dict(zip(acct.sectors, acct.sector_totals()))
        unknown = set(totals) - set(system.sectors) - {household_id}
        missing = set(system.sectors) - set(totals)
        if unknown or missing:
            raise AxisMismatch(
                f"{region}: account sectors do not match system "
                f"(unknown {sorted(unknown)}, missing {sorted(missing)})"
            )
        energy[k * N:(k + 1) * N] = [totals[s] for s in system.sectors]
        hh[k] = totals.get(household_id, 0.0)

    e = np.zeros_like(energy)
    positive = system.x > 0
    e[positive] = energy[positive] / system.x[positive]
    orphaned = []
    for i in np.nonzero(~positive & (energy != 0))[0]:
        region, sector = system.row_labels[i]
        orphaned.append((region, sector, float(energy[i])))
        logger.warning("%s/%s: %r TJ in a zero-output sector is orphaned", region, sector, energy[i])
    return IntensityVector(e, hh, tuple(orphaned))


@dataclass(frozen=True)
class FootprintResult:
    regions: tuple
    pba: np.ndarray
    cba: np.ndarray
    beet: np.ndarray
    pba_per_capita: np.ndarray | None = None
    cba_per_capita: np.ndarray | None = None
    contributions: np.ndarray | None = None
    year: int | None = None
    include_households: bool = True

    def as_rows(self):
        for k, r in enumerate(self.regions):
            pc = self.pba_per_capita is not None
            yield (
                r,
                self.year,
                float(self.pba[k]),
                float(self.cba[k]),
                float(self.beet[k]),
                float(self.pba_per_capita[k]) if pc else "",
                float(self.cba_per_capita[k]) if pc else "",
            )


def footprint(system, intensity, population=None, include_households=True, year=None, solver=None):
    """PBA, CBA and their difference (BEET) per region.

    Parameters
    ----------
    system : MrioSystem
    intensity : IntensityVector
    population : sequence of float, optional
        Persons per region; enables GJ/person columns.
    include_households : bool
        Add household direct use to both PBA and CBA of its region.
    solver : LeontiefSolver, optional
        Reuse an existing factorisation of ``I - A``.
    """
    R, N = len(system.regions), len(system.sectors)
    e = intensity.e
    if e.shape != system.x.shape or intensity.household_direct.shape != (R,):
        raise AxisMismatch("intensity vector does not match the system")
    solver = solver or LeontiefSolver(system.A)
    output_by_demand = solver.solve(system.region_demand())  # L Y_r, RN x R
    contributions = e[:, None] * output_by_demand
    cba = contributions.sum(axis=0)
    pba = (e * system.x).reshape(R, N).sum(axis=1)
    if include_households:
        cba = cba + intensity.household_direct
        pba = pba + intensity.household_direct
    beet = pba - cba

    pba_pc = cba_pc = None
    if population is not None:
        pop = np.asarray(population, dtype=float)
        if pop.shape != (R,):
            raise AxisMismatch("population length does not match regions")
        if (pop <= 0).any():
            raise FootprintError("population must be positive for per-capita values")
        pba_pc = pba * TJ_TO_GJ / pop
        cba_pc = cba * TJ_TO_GJ / pop
    return FootprintResult(
        regions=system.regions,
        pba=pba,
        cba=cba,
        beet=beet,
        pba_per_capita=pba_pc,
        cba_per_capita=cba_pc,
        contributions=contributions,
        year=year,
        include_households=include_households,
    )


# ---------------------------------------------------------------------------
# file formats

def _split_label(label):
    if ":" not in label:
        raise MalformedRow(f"label {label!r} is not region:id")
    region, rest = label.split(":", 1)
    return region, rest


def _ordered_unique(items):
    return tuple(dict.fromkeys(items))


def _read_matrix(path):
    rows = read_rows(path)
    if not rows:
        raise MalformedRow(f"{path}: empty")
    cols = rows[0][1][1:]
    labels, values = [], []
    for line_no, fields in rows[1:]:
        if len(fields) != len(cols) + 1:
            raise MalformedRow(f"{path}:{line_no}: expected {len(cols) + 1} columns")
        labels.append(fields[0])
        values.append([float(v) for v in fields[1:]])
    return labels, cols, np.array(values).reshape(len(labels), len(cols))


def read_mrio(directory, tol=1e-6):
    """Read ``Z.csv``, ``Y.csv`` and ``x.csv`` from ``directory``."""
    directory = Path(directory)
    z_rows, z_cols, Z = _read_matrix(directory / "Z.csv")
    if z_rows != z_cols:
        raise AxisMismatch("Z row and column labels differ")
    y_rows, y_cols, Y = _read_matrix(directory / "Y.csv")
    if y_rows != z_rows:
        raise AxisMismatch("Y rows differ from Z rows")
    x_rows = read_rows(directory / "x.csv")
    x = {f[0]: float(f[1]) for _, f in x_rows[1:]}
    if set(x) != set(z_rows):
        raise AxisMismatch("x labels differ from Z labels")

    pairs = [_split_label(lab) for lab in z_rows]
    regions = _ordered_unique(r for r, _ in pairs)
    sectors = _ordered_unique(s for _, s in pairs)
    if pairs != [(r, s) for r in regions for s in sectors]:
        raise AxisMismatch("Z labels must be region-major with the same sectors per region")
    ypairs = [_split_label(lab) for lab in y_cols]
    categories = _ordered_unique(c for _, c in ypairs)
    if ypairs != [(r, c) for r in regions for c in categories]:
        raise AxisMismatch("Y columns must be region-major with the same categories per region")
    return assemble_system(
        Z, Y, np.array([x[lab] for lab in z_rows]), regions, sectors, categories, tol=tol
    )


def write_mrio(directory, Z, system):
    """Write the CSV trio for ``system`` with intermediate flows ``Z``."""
    directory = Path(directory)
    labels = [f"{r}:{s}" for r, s in system.row_labels]
    ylabels = [f"{r}:{c}" for r, c in system.y_labels]
    atomic_write(directory / "Z.csv", to_csv_text(("", *labels), ([lab, *map(float, row)] for lab, row in zip(labels, Z))))
    atomic_write(directory / "Y.csv", to_csv_text(("", *ylabels), ([lab, *map(float, row)] for lab, row in zip(labels, system.Y))))
    atomic_write(directory / "x.csv", to_csv_text(("label", "value"), zip(labels, map(float, system.x))))


def read_population(path):
    """``region,year,persons`` -> {(region, year): persons}."""
    out = {}
    rows = read_rows(path)
    if not rows or [h.lower() for h in rows[0][1]] != ["region", "year", "persons"]:
        raise MalformedRow(f"{path}: header must be 'region,year,persons'")
    for line_no, fields in rows[1:]:
        if len(fields) != 3:
            raise MalformedRow(f"{path}:{line_no}: expected 3 columns")
        out[(fields[0], int(fields[1]))] = float(fields[2])
    return out


FOOTPRINT_HEADER = ("region", "year", "pba_tj", "cba_tj", "beet_tj", "pba_gj_pc", "cba_gj_pc")


def write_footprints(path, results):
    rows = [row for res in sorted(results, key=lambda r: r.year) for row in res.as_rows()]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(path, FOOTPRINT_HEADER, rows)


def write_contributions(path, results, system_labels):
    """Long format: which producing sector's energy ends up in whose demand.

    ``system_labels`` maps year -> row labels ``(region, sector)``.
    """
    rows = []
    for res in sorted(results, key=lambda r: r.year):
        labels = system_labels[res.year]
        for k, consumer in enumerate(res.regions):
            for i, (producer, sector) in enumerate(labels):
                rows.append((res.year, consumer, producer, sector, float(res.contributions[i, k])))
    write_csv(path, ("year", "consumer_region", "producer_region", "sector", "tj"), rows)
