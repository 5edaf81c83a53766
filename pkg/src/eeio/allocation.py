"""Flow-to-sector allocation of energy use tables.

The mapping matrix shares each balance flow across the sectors it is linked
to in a binary concordance, proportionally to a monetary splitting key::

    M = diag(a) C diag(a'C)^-1

Allocating a use table is then ``W[p, s] = sum_f use[f, p] M[s, f]``. The
expanded (flows*products) x sectors form M* is available for inspection but
allocation never materialises it.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    AllocationError,
    AxisMismatch,
    MalformedRow,
    StageError,
    UnmappedProduct,
    ZeroSplittingKey,
)
from .textio import atomic_write, comment_lines, read_rows, to_csv_text

logger = logging.getLogger(__name__)

HOUSEHOLDS = "HH"
STAGES = ("raw", "aggregated", "calibrated")


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConcordanceMatrix:
    """Binary sectors x flows link matrix (sectors include households)."""

    sectors: tuple
    flows: tuple
    cells: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sectors", tuple(self.sectors))
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "cells", _frozen(self.cells))
        if self.cells.shape != (len(self.sectors), len(self.flows)):
            raise AxisMismatch(
                f"concordance shape {self.cells.shape} != ({len(self.sectors)}, {len(self.flows)})"
            )
        if not np.isin(self.cells, (0.0, 1.0)).all():
            raise MalformedRow("concordance cells must be 0 or 1")
        orphans = [f for f, n in zip(self.flows, self.cells.sum(axis=0)) if n == 0]
        if orphans:
            raise AllocationError(f"flows linked to no sector: {orphans}")

    def select_flows(self, flows):
        """Concordance restricted to and reordered by ``flows``."""
        idx = {f: i for i, f in enumerate(self.flows)}
        missing = [f for f in flows if f not in idx]
        if missing:
            raise AxisMismatch(f"flows missing from concordance: {missing}")
        return ConcordanceMatrix(self.sectors, flows, self.cells[:, [idx[f] for f in flows]])


@dataclass(frozen=True)
class SplittingKey:
    sectors: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sectors", tuple(self.sectors))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.weights.shape != (len(self.sectors),):
            raise AxisMismatch("splitting key length does not match its sector list")
        if (self.weights < 0).any():
            raise AllocationError("splitting key weights must be >= 0")

    def __mul__(self, k):
        return SplittingKey(self.sectors, self.weights * k)

    __rmul__ = __mul__


@dataclass(frozen=True)
class MappingMatrix:
    """Column-stochastic sectors x flows allocation shares.

    ``expanded`` holds M* once :func:`expand_mapping` has been called: row
    ``f * n_products + p`` is the share vector of flow ``f``.
    """

    sectors: tuple
    flows: tuple
    cells: np.ndarray
    expanded: np.ndarray | None = None
    n_products: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sectors", tuple(self.sectors))
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "cells", _frozen(self.cells))
        if self.cells.shape != (len(self.sectors), len(self.flows)):
            raise AxisMismatch("mapping shape does not match its labels")
        sums = self.cells.sum(axis=0)
        if len(sums) and np.abs(sums - 1.0).max() > 1e-12:
            raise AllocationError(f"mapping columns must sum to 1, got {sums}")
        if self.expanded is not None:
            object.__setattr__(self, "expanded", _frozen(self.expanded))


def build_mapping(C, a, fallback=False):
    """Mapping matrix from a concordance and a splitting key.

    Parameters
    ----------
    C : ConcordanceMatrix
    a : SplittingKey
        Must be on the same sector axis as ``C``.
    fallback : bool
        If True, a flow whose linked sectors all carry zero weight is spread
        uniformly over those sectors instead of raising ZeroSplittingKey.
    """
    if tuple(a.sectors) != tuple(C.sectors):
        raise AxisMismatch("splitting key and concordance sector axes differ")
    weighted = a.weights[:, None] * C.cells
    denom = weighted.sum(axis=0)
    M = np.zeros_like(weighted)
    ok = denom > 0
    M[:, ok] = weighted[:, ok] / denom[ok]
    for f in np.nonzero(~ok)[0]:
        if not fallback:
            raise ZeroSplittingKey(C.flows[f])
        logger.warning("flow %s: zero splitting key, uniform fallback", C.flows[f])
        M[:, f] = C.cells[:, f] / C.cells[:, f].sum()
    return MappingMatrix(C.sectors, C.flows, M)


def expand_mapping(M, n_products):
    """Attach M*, the flow-major replication of M over ``n_products``."""
    if n_products < 1:
        raise ValueError("n_products must be >= 1")
    expanded = np.repeat(M.cells.T, n_products, axis=0)
    return replace(M, expanded=expanded, n_products=n_products)


def stacked_use_matrix(use):
    """Products x (flows*products) matrix E with each flow's product vector
    diagonalised and the blocks placed side by side.

    ``stacked_use_matrix(use) @ expand_mapping(M, P).expanded`` equals
    ``allocate(use, M).values``.
    """
    F, P = use.values.shape
    E = np.zeros((P, F * P))
    for f in range(F):
        E[:, f * P:(f + 1) * P] = np.diag(use.values[f])
    return E


@dataclass(frozen=True)
class EnergyAccount:
    """Products x sectors energy use (TJ) for one region and year."""

    country: str
    year: int
    products: tuple
    sectors: tuple
    values: np.ndarray
    stage: str = "raw"
    unit: str = "TJ"
    warnings: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "sectors", tuple(self.sectors))
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if self.values.shape != (len(self.products), len(self.sectors)):
            raise AxisMismatch(
                f"account shape {self.values.shape} != ({len(self.products)}, {len(self.sectors)})"
            )
        if self.stage not in STAGES:
            raise StageError(f"unknown stage {self.stage!r}")

    def product_totals(self):
        return self.values.sum(axis=1)

    def sector_totals(self):
        return self.values.sum(axis=0)

    def total(self):
        return float(self.values.sum())

    def advance(self, stage, values, warnings=()):
        """New account at a later stage; stages never move backwards."""
        if STAGES.index(stage) <= STAGES.index(self.stage):
            raise StageError(f"cannot move from {self.stage} to {stage}")
        return replace(self, stage=stage, values=values, warnings=self.warnings + tuple(warnings))


def allocate(use, M):
    """Energy account ``W = use' M'`` (products x sectors), stage ``raw``."""
    if tuple(use.flows) != tuple(M.flows):
        raise AxisMismatch("use table and mapping have different flow axes")
    W = use.values.T @ M.cells.T
    return EnergyAccount(
        country=use.country,
        year=use.year,
        products=use.products,
        sectors=M.sectors,
        values=W,
        stage="raw",
        warnings=use.warnings,
    )


def _check_same_axes(accounts):
    first = accounts[0]
    for acct in accounts[1:]:
        if acct.products != first.products or acct.sectors != first.sectors:
            raise AxisMismatch(f"{acct.country} {acct.year}: axes differ from {first.country}")
        if acct.stage != first.stage:
            raise AxisMismatch(f"{acct.country}: stage {acct.stage} != {first.stage}")


def residual_region(world, members, label="ROW"):
    """``world - sum(members)``; negative cells are kept and listed in warnings."""
    _check_same_axes([world, *members])
    values = world.values.copy()
    for m in members:
        values = values - m.values
    warnings = []
    for i, j in zip(*np.nonzero(values < 0)):
        msg = f"negative residual {values[i, j]!r} TJ at ({world.products[i]}, {world.sectors[j]})"
        warnings.append(msg)
        logger.warning("%s %s: %s", label, world.year, msg)
    return EnergyAccount(
        country=label,
        year=world.year,
        products=world.products,
        sectors=world.sectors,
        values=values,
        stage=world.stage,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class ProductAggregationMap:
    """Ordered aggregate product -> source products; groups may be empty."""

    groups: dict

    def __post_init__(self):
        seen = {}
        for agg, sources in self.groups.items():
            for s in sources:
                if s in seen:
                    raise MalformedRow(f"product {s!r} in both {seen[s]!r} and {agg!r}")
                seen[s] = agg

    @property
    def aggregates(self):
        return tuple(self.groups)

    @property
    def sources(self):
        return tuple(s for group in self.groups.values() for s in group)

    @classmethod
    def identity(cls, products):
        return cls({p: (p,) for p in products})


def aggregate_products(acct, mapping, on_unmapped="error"):
    """Sum source product rows into aggregate rows.

    ``on_unmapped`` is ``"error"`` (default) or ``"drop"``; dropping loses
    energy and is recorded as a warning.
    """
    if acct.stage != "raw":
        raise StageError(f"aggregate expects a raw account, got {acct.stage}")
    index = {p: i for i, p in enumerate(acct.products)}
    known = set(mapping.sources)
    unmapped = [p for p in acct.products if p not in known]
    warnings = []
    if unmapped:
        if on_unmapped == "error":
            raise UnmappedProduct(f"products without aggregate: {unmapped}")
        dropped = float(acct.values[[index[p] for p in unmapped]].sum())
        warnings.append(f"dropped unmapped products {unmapped} ({dropped!r} TJ)")
    out = np.zeros((len(mapping.groups), len(acct.sectors)))
    for k, sources in enumerate(mapping.groups.values()):
        for s in sources:
            if s in index:
                out[k] += acct.values[index[s]]
    return replace(
        acct,
        products=mapping.aggregates,
        values=out,
        stage="aggregated",
        warnings=acct.warnings + tuple(warnings),
    )


def splitting_key_from_mrio(Z, Y, row_labels, y_labels, region, designated, household_category):
    """Monetary splitting key for ``region`` from an MRIO table.

    Sums, over every origin region, the rows of ``Z`` whose sector is in
    ``designated`` for each of ``region``'s industry columns; the household
    weight is the same sum over ``Y``'s ``(region, household_category)``
    column.

    ``row_labels`` are ``(region, sector)`` pairs for rows and columns of
    ``Z``; ``y_labels`` are ``(region, category)`` pairs for columns of Y.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    rows = [i for i, (_, s) in enumerate(row_labels) if s in designated]
    if not rows:
        raise AllocationError(f"none of {designated} found in MRIO rows")
    cols = [j for j, (r, _) in enumerate(row_labels) if r == region]
    sectors = [row_labels[j][1] for j in cols]
    weights = list(Z[np.ix_(rows, cols)].sum(axis=0))
    hh = [j for j, lab in enumerate(y_labels) if tuple(lab) == (region, household_category)]
    weights.append(float(Y[np.ix_(rows, hh)].sum()) if hh else 0.0)
    return SplittingKey(tuple(sectors) + (HOUSEHOLDS,), np.array(weights))


# ---------------------------------------------------------------------------
# file formats

def read_concordance(path):
    rows = read_rows(path)
    if not rows:
        raise MalformedRow(f"{path}: empty concordance")
    flows = rows[0][1][1:]
    sectors, cells = [], []
    for line_no, fields in rows[1:]:
        if len(fields) != len(flows) + 1:
            raise MalformedRow(f"{path}:{line_no}: expected {len(flows) + 1} columns")
        sectors.append(fields[0])
        try:
            cells.append([float(v) for v in fields[1:]])
        except ValueError:
            raise MalformedRow(f"{path}:{line_no}: non-numeric cell") from None
    return ConcordanceMatrix(tuple(sectors), tuple(flows), np.array(cells).reshape(len(sectors), len(flows)))


def write_concordance(path, C):
    rows = [(s, *[int(v) for v in C.cells[i]]) for i, s in enumerate(C.sectors)]
    atomic_write(path, to_csv_text(("sector", *C.flows), rows))


def read_splitting_key(path, sectors=None):
    """Read ``sector,weight``; reorder to ``sectors`` when given (missing = 0)."""
    rows = read_rows(path)
    if not rows or [h.lower() for h in rows[0][1]] != ["sector", "weight"]:
        raise MalformedRow(f"{path}: header must be 'sector,weight'")
    weights = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 2:
            raise MalformedRow(f"{path}:{line_no}: expected 2 columns")
        if fields[0] in weights:
            raise MalformedRow(f"{path}:{line_no}: duplicate sector {fields[0]!r}")
        weights[fields[0]] = float(fields[1])
    if sectors is None:
        sectors = tuple(weights)
    else:
        extra = set(weights) - set(sectors)
        if extra:
            raise AxisMismatch(f"{path}: sectors not in concordance: {sorted(extra)}")
    return SplittingKey(tuple(sectors), np.array([weights.get(s, 0.0) for s in sectors]))


def write_splitting_key(path, key):
    atomic_write(path, to_csv_text(("sector", "weight"), zip(key.sectors, map(float, key.weights))))


def read_aggregation_map(path):
    """Read ``aggregate_product,source_product`` rows.

    A comment line ``# aggregates: A,B,C`` fixes the output order and may
    name aggregates that have no source rows (they become zero rows).
    Rows with an empty ``source_product`` declare an empty group too.
    """
    groups = {}
    for line in comment_lines(path):
        if line.lower().startswith("aggregates:"):
            for agg in line.split(":", 1)[1].split(","):
                if agg.strip():
                    groups.setdefault(agg.strip(), [])
    rows = read_rows(path)
    if not rows or [h.lower() for h in rows[0][1]] != ["aggregate_product", "source_product"]:
        raise MalformedRow(f"{path}: header must be 'aggregate_product,source_product'")
    for line_no, fields in rows[1:]:
        if len(fields) == 1:
            fields = [fields[0], ""]
        if len(fields) != 2:
            raise MalformedRow(f"{path}:{line_no}: expected 2 columns")
        agg, src = fields
        group = groups.setdefault(agg, [])
        if src:
            group.append(src)
    return ProductAggregationMap({k: tuple(v) for k, v in groups.items()})


def write_aggregation_map(path, mapping):
    header = "# aggregates: " + ",".join(mapping.aggregates) + "\n"
    rows = [(agg, s) for agg, group in mapping.groups.items() for s in group]
    atomic_write(path, header + to_csv_text(("aggregate_product", "source_product"), rows))


def account_metadata(acct):
    return {
        "country": acct.country,
        "year": acct.year,
        "stage": acct.stage,
        "unit": acct.unit,
        "products": list(acct.products),
        "sectors": list(acct.sectors),
        "warnings": list(acct.warnings),
    }


def write_account(path, acct):
    """Write ``product,sector,value_tj`` plus a ``.json`` metadata sidecar."""
    path = Path(path)
    rows = [
        (p, s, float(acct.values[i, j]))
        for i, p in enumerate(acct.products)
        for j, s in enumerate(acct.sectors)
    ]
    atomic_write(path, to_csv_text(("product", "sector", "value_tj"), rows))
    atomic_write(path.with_suffix(".json"), json.dumps(account_metadata(acct), indent=2, sort_keys=True) + "\n")


def read_account(path, country=None, year=None, stage=None):
    """Read an account CSV. The sidecar, if present, supplies labels and
    axis order; otherwise axes follow first appearance."""
    path = Path(path)
    meta = {}
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    rows = read_rows(path)
    if not rows or [h.lower() for h in rows[0][1]] != ["product", "sector", "value_tj"]:
        raise MalformedRow(f"{path}: header must be 'product,sector,value_tj'")
    products = list(meta.get("products", []))
    sectors = list(meta.get("sectors", []))
    cells = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 3:
            raise MalformedRow(f"{path}:{line_no}: expected 3 columns")
        p, s, v = fields
        if p not in products:
            products.append(p)
        if s not in sectors:
            sectors.append(s)
        cells[(p, s)] = float(v)
    pi = {p: i for i, p in enumerate(products)}
    si = {s: j for j, s in enumerate(sectors)}
    values = np.zeros((len(products), len(sectors)))
    for (p, s), v in cells.items():
        values[pi[p], si[s]] = v
    return EnergyAccount(
        country=country if country is not None else meta.get("country", ""),
        year=int(year if year is not None else meta.get("year", 0)),
        products=tuple(products),
        sectors=tuple(sectors),
        values=values,
        stage=stage or meta.get("stage", "aggregated"),
        unit=meta.get("unit", "TJ"),
        warnings=tuple(meta.get("warnings", ())),
    )


def reindex_products(acct, products):
    """Account rows reordered to ``products``; absent products become zero
    rows, products outside the list are an error."""
    extra = set(acct.products) - set(products)
    if extra:
        raise AxisMismatch(f"{acct.country} {acct.year}: unexpected products {sorted(extra)}")
    index = {p: i for i, p in enumerate(acct.products)}
    values = np.zeros((len(products), len(acct.sectors)))
    for k, p in enumerate(products):
        if p in index:
            values[k] = acct.values[index[p]]
    return replace(acct, products=tuple(products), values=values)


def write_mapping(path, M):
    rows = [(s, *map(float, M.cells[i])) for i, s in enumerate(M.sectors)]
    atomic_write(path, to_csv_text(("sector", *M.flows), rows))


def read_mapping(path):
    rows = read_rows(path)
    flows = rows[0][1][1:]
    sectors = [fields[0] for _, fields in rows[1:]]
    cells = np.array([[float(v) for v in fields[1:]] for _, fields in rows[1:]])
    return MappingMatrix(tuple(sectors), tuple(flows), cells.reshape(len(sectors), len(flows)))
