"""Energy balance tables and the derived energy-use table.

A balance is a flows x products matrix for one (country, year). Only some
flow classes represent *use* of energy; energy-sector own use and
transformation inputs are recorded as negative numbers in a balance and
enter the use table with their sign flipped.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateCell,
    EmptyBalance,
    MalformedRow,
    MissingFlowClass,
    UnknownProduct,
    UnknownUnit,
)
from .textio import atomic_write, read_rows, to_csv_text

logger = logging.getLogger(__name__)

FLOW_CLASSES = (
    "final_consumption",
    "bunker",
    "energy_industry_own_use",
    "transformation",
    "supply_side",
    "statistical",
)
USE_CLASSES = ("final_consumption", "bunker", "energy_industry_own_use", "transformation")
FLIPPED_CLASSES = ("energy_industry_own_use", "transformation")

# conversion factor to TJ
UNITS = {"TJ": 1.0, "PJ": 1000.0, "ktoe": 41.868, "Mtoe": 41868.0}


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BalanceSchema:
    """Flow classification plus the unit the balance files are written in.

    ``products`` optionally fixes the product axis; a balance mentioning a
    product outside it is rejected.
    """

    flow_class: dict
    unit: str = "TJ"
    products: tuple | None = None

    def __post_init__(self):
        if self.unit not in UNITS:
            raise UnknownUnit(f"unit {self.unit!r} not in {sorted(UNITS)}")
        bad = {c for c in self.flow_class.values() if c not in FLOW_CLASSES}
        if bad:
            raise MalformedRow(f"unknown flow classes {sorted(bad)}")

    @property
    def flows(self):
        return tuple(self.flow_class)


def read_schema(source, unit="TJ", products=None):
    """Read a ``flow,flow_class`` CSV into a :class:`BalanceSchema`."""
    rows = read_rows(source)
    if not rows or [h.lower() for h in rows[0][1]] != ["flow", "flow_class"]:
        raise MalformedRow("schema header must be 'flow,flow_class'")
    mapping = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 2:
            raise MalformedRow(f"schema line {line_no}: expected 2 columns, got {len(fields)}")
        flow, cls = fields
        if flow in mapping:
            raise DuplicateCell(f"schema line {line_no}: flow {flow!r} classified twice")
        if cls not in FLOW_CLASSES:
            raise MalformedRow(f"schema line {line_no}: unknown flow class {cls!r}")
        mapping[flow] = cls
    return BalanceSchema(mapping, unit=unit, products=tuple(products) if products else None)


@dataclass(frozen=True)
class EnergyBalanceTable:
    country: str
    year: int
    flows: tuple
    products: tuple
    values: np.ndarray
    flow_class: tuple
    unit: str = "TJ"
    source_unit: str = "TJ"

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (len(self.flows), len(self.products)):
            raise MalformedRow(
                f"values shape {self.values.shape} != ({len(self.flows)}, {len(self.products)})"
            )
        if len(self.flow_class) != len(self.flows):
            raise MissingFlowClass("every flow needs exactly one flow class")

    def flows_of(self, *classes):
        return [f for f, c in zip(self.flows, self.flow_class) if c in classes]


@dataclass(frozen=True)
class UseTable:
    country: str
    year: int
    flows: tuple
    products: tuple
    values: np.ndarray
    flow_class: tuple = ()
    warnings: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (len(self.flows), len(self.products)):
            raise MalformedRow(
                f"values shape {self.values.shape} != ({len(self.flows)}, {len(self.products)})"
            )

    @property
    def empty(self):
        return len(self.flows) == 0

    def product_totals(self):
        return self.values.sum(axis=0)


def parse_balance(source, schema, country="", year=0):
    """Parse a long-format ``flow,product,value`` balance file.

    Parameters
    ----------
    source : path, text stream or byte stream
    schema : BalanceSchema
        Flow classes (which also fix the flow axis order) and input unit.
    country, year
        Labels attached to the resulting table.

    Returns
    -------
    EnergyBalanceTable
        Values converted to TJ. Cells absent from the file are zero.
    """
    if schema.unit not in UNITS:
        raise UnknownUnit(schema.unit)
    rows = read_rows(source)
    if not rows:
        raise EmptyBalance("balance file has no header")
    header = [h.lower() for h in rows[0][1]]
    if header != ["flow", "product", "value"]:
        raise MalformedRow(f"balance header must be 'flow,product,value', got {rows[0][1]}")
    if len(rows) == 1:
        raise EmptyBalance(f"balance {country} {year}: header only")

    flows = schema.flows
    flow_idx = {f: i for i, f in enumerate(flows)}
    products = list(schema.products) if schema.products else []
    prod_idx = {p: i for i, p in enumerate(products)}
    fixed_products = schema.products is not None

    cells = {}
    for line_no, fields in rows[1:]:
        if len(fields) != 3:
            raise MalformedRow(f"line {line_no}: expected 3 columns, got {len(fields)}")
        flow, product, raw = fields
        if flow not in flow_idx:
            raise MissingFlowClass(f"line {line_no}: flow {flow!r} has no flow class")
        if product not in prod_idx:
            if fixed_products:
                raise UnknownProduct(f"line {line_no}: unknown product {product!r}")
            prod_idx[product] = len(products)
            products.append(product)
        try:
            value = float(raw)
        except ValueError:
            raise MalformedRow(f"line {line_no}: value {raw!r} is not a number") from None
        key = (flow, product)
        if key in cells:
            raise DuplicateCell(f"line {line_no}: duplicate cell {key}")
        cells[key] = value

    values = np.zeros((len(flows), len(products)))
    for (flow, product), value in cells.items():
        values[flow_idx[flow], prod_idx[product]] = value
    factor = UNITS[schema.unit]
    if factor != 1.0:
        values = values * factor
    return EnergyBalanceTable(
        country=country,
        year=int(year),
        flows=tuple(flows),
        products=tuple(products),
        values=values,
        flow_class=tuple(schema.flow_class[f] for f in flows),
        unit="TJ",
        source_unit=schema.unit,
    )


def serialize_balance(table):
    """Long-format CSV text (in TJ) of the nonzero cells of ``table``."""
    rows = []
    for i, flow in enumerate(table.flows):
        for j, product in enumerate(table.products):
            v = float(table.values[i, j])
            if v != 0.0:
                rows.append((flow, product, v))
    return to_csv_text(("flow", "product", "value"), rows)


def extract_use_table(balance):
    """Keep the use flows of ``balance`` and normalise their sign.

    Final consumption and bunkers are taken as recorded; own use and
    transformation are negated. Supply-side and statistical flows are
    dropped. Cells still negative afterwards are kept and reported.
    """
    keep = [i for i, c in enumerate(balance.flow_class) if c in USE_CLASSES]
    values = balance.values[keep, :].copy()
    classes = tuple(balance.flow_class[i] for i in keep)
    flip = np.array([c in FLIPPED_CLASSES for c in classes], dtype=bool)
    values[flip, :] *= -1.0

    flows = tuple(balance.flows[i] for i in keep)
    warnings = []
    if not keep:
        warnings.append("no use flows retained")
        logger.warning("%s %s: balance has no use flows", balance.country, balance.year)
    for i, j in zip(*np.nonzero(values < 0)):
        msg = f"negative use {values[i, j]!r} TJ at ({flows[i]}, {balance.products[j]})"
        warnings.append(msg)
        logger.warning("%s %s: %s", balance.country, balance.year, msg)
    return UseTable(
        country=balance.country,
        year=balance.year,
        flows=flows,
        products=balance.products,
        values=values,
        flow_class=classes,
        warnings=tuple(warnings),
    )


def write_use_table(path, use):
    """Dense long-format ``flow,product,value`` (zeros included so that the
    axes survive a round trip) plus a ``.json`` sidecar."""
    path = Path(path)
    rows = [
        (f, p, float(use.values[i, j]))
        for i, f in enumerate(use.flows)
        for j, p in enumerate(use.products)
    ]
    atomic_write(path, to_csv_text(("flow", "product", "value"), rows))
    meta = {
        "country": use.country,
        "year": use.year,
        "flows": list(use.flows),
        "products": list(use.products),
        "flow_class": list(use.flow_class),
        "warnings": list(use.warnings),
    }
    atomic_write(path.with_suffix(".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_use_table(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    flows, products = meta["flows"], meta["products"]
    fi = {f: i for i, f in enumerate(flows)}
    pi = {p: j for j, p in enumerate(products)}
    values = np.zeros((len(flows), len(products)))
    for line_no, fields in read_rows(path)[1:]:
        if len(fields) != 3:
            raise MalformedRow(f"{path}:{line_no}: expected 3 columns")
        values[fi[fields[0]], pi[fields[1]]] = float(fields[2])
    return UseTable(
        country=meta["country"],
        year=int(meta["year"]),
        flows=tuple(flows),
        products=tuple(products),
        values=values,
        flow_class=tuple(meta["flow_class"]),
        warnings=tuple(meta["warnings"]),
    )
