"""Accuracy against a reference account set and per-product calibration.

Calibration factors are stored as the corrective ratio
``reference_total / candidate_total`` per product, so calibrating is a plain
row scaling ``diag(alpha) W``. Years beyond the reference period reuse a
trailing moving average of earlier factors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AxisMismatch, EeioError, StageError
from .textio import read_rows, write_csv

logger = logging.getLogger(__name__)

PROVENANCE = ("overlap", "extrapolated")
EXTRAPOLATION_MODES = ("rolling", "frozen")


@dataclass(frozen=True)
class RelativeErrorReport:
    country: str
    year: int
    products: tuple
    epsilon: float
    by_product: np.ndarray
    candidate_total: float = 0.0
    reference_total: float = 0.0

    @property
    def defined(self):
        return math.isfinite(self.epsilon)


@dataclass(frozen=True)
class CalibrationFactors:
    country: str
    year: int
    products: tuple
    alpha: np.ndarray
    provenance: str = "overlap"
    flagged: tuple = field(default=())
    short_window: bool = False

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "products", tuple(self.products))
        if alpha.shape != (len(self.products),):
            raise AxisMismatch("alpha length does not match product list")
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")


def _ratio(num, den):
    return (num - den) / den if den != 0 else float("nan")


def relative_error(candidate, reference):
    """Relative error of candidate totals against reference totals.

    Sector axes may differ; only totals are compared. A zero reference
    total yields NaN (undefined) rather than an exception.
    """
    if candidate.products != reference.products:
        raise AxisMismatch("candidate and reference product axes differ")
    if (candidate.country, candidate.year) != (reference.country, reference.year):
        raise AxisMismatch(
            f"comparing {candidate.country} {candidate.year} with "
            f"{reference.country} {reference.year}"
        )
    cand_p = candidate.product_totals()
    ref_p = reference.product_totals()
    with np.errstate(divide="ignore", invalid="ignore"):
        by_product = np.where(ref_p != 0, (cand_p - ref_p) / np.where(ref_p != 0, ref_p, 1.0), np.nan)
    cand, ref = candidate.total(), reference.total()
    return RelativeErrorReport(
        country=candidate.country,
        year=candidate.year,
        products=candidate.products,
        epsilon=_ratio(cand, ref),
        by_product=by_product,
        candidate_total=cand,
        reference_total=ref,
    )


def calibration_factors(candidate, reference):
    """Per-product ``reference_total / candidate_total``.

    Products where either total is not positive get factor 1 and are listed
    in ``flagged`` (UnmatchableProduct).
    """
    if candidate.products != reference.products:
        raise AxisMismatch("candidate and reference product axes differ")
    cand_p = candidate.product_totals()
    ref_p = reference.product_totals()
    ok = (cand_p > 0) & (ref_p > 0)
    alpha = np.ones(len(cand_p))
    alpha[ok] = ref_p[ok] / cand_p[ok]
    flagged = tuple(p for p, good in zip(candidate.products, ok) if not good)
    if flagged:
        logger.info("%s %s: unmatchable products %s", candidate.country, candidate.year, flagged)
    return CalibrationFactors(
        country=candidate.country,
        year=candidate.year,
        products=candidate.products,
        alpha=alpha,
        provenance="overlap",
        flagged=flagged,
    )


def apply_calibration(acct, factors):
    """Scale each product row of an aggregated account by its factor."""
    if acct.stage != "aggregated":
        raise StageError(f"calibration expects an aggregated account, got {acct.stage}")
    if acct.products != factors.products:
        raise AxisMismatch("account and factors product axes differ")
    note = f"calibrated with {factors.provenance} factors for {factors.year}"
    return acct.advance("calibrated", factors.alpha[:, None] * acct.values, [note])


def extrapolate_factors(history, target_years, mode="rolling", window=5):
    """Trailing moving-average factors for years after the history.

    Parameters
    ----------
    history : list of CalibrationFactors
        Strictly increasing years, one country, one product axis.
    target_years : iterable of int
        Every year must be later than the last history year.
    mode : {"rolling", "frozen"}
        ``rolling`` lets extrapolated years enter later windows; ``frozen``
        averages the last ``window`` history years for every target.
    window : int
        Window length; shorter histories average what is available and the
        result is marked ``short_window``.
    """
    if mode not in EXTRAPOLATION_MODES:
        raise ValueError(f"unknown extrapolation mode {mode!r}")
    if not history:
        raise EeioError("extrapolation needs at least one year of factors")
    years = [h.year for h in history]
    if any(b <= a for a, b in zip(years, years[1:])):
        raise EeioError(f"history years must be strictly increasing: {years}")
    first = history[0]
    for h in history:
        if h.country != first.country or h.products != first.products:
            raise AxisMismatch("history mixes countries or product axes")
    targets = sorted(int(y) for y in target_years)
    if targets and targets[0] <= years[-1]:
        raise EeioError(f"target year {targets[0]} is not after last history year {years[-1]}")

    pool = [h.alpha for h in history]
    out = []
    for year in targets:
        src = pool if mode == "rolling" else pool[: len(history)]
        recent = src[-window:]
        alpha = np.mean(recent, axis=0)
        out.append(
            CalibrationFactors(
                country=first.country,
                year=year,
                products=first.products,
                alpha=alpha,
                provenance="extrapolated",
                short_window=len(recent) < window,
            )
        )
        pool.append(alpha)
    return out


# ---------------------------------------------------------------------------
# file formats

def write_factors(path, factors):
    rows = []
    for f in sorted(factors, key=lambda f: (f.country, f.year)):
        for p, a in zip(f.products, f.alpha):
            rows.append((f.country, f.year, p, float(a), f.provenance))
    write_csv(path, ("country", "year", "product", "alpha", "provenance"), rows)


def read_factors(path):
    """Read a factors CSV back into CalibrationFactors, product order kept."""
    grouped = {}
    rows = read_rows(path)
    for _, fields in rows[1:]:
        country, year, product, alpha, provenance = fields
        entry = grouped.setdefault((country, int(year)), ([], [], provenance))
        entry[0].append(product)
        entry[1].append(float(alpha))
    return [
        CalibrationFactors(c, y, tuple(p), np.array(a), prov)
        for (c, y), (p, a, prov) in sorted(grouped.items())
    ]


def write_error_reports(path, by_product_path, reports):
    reports = sorted(reports, key=lambda r: (r.country, r.year))
    write_csv(path, ("country", "year", "epsilon"), [(r.country, r.year, float(r.epsilon)) for r in reports])
    rows = [
        (r.country, r.year, p, float(e))
        for r in reports
        for p, e in zip(r.products, r.by_product)
    ]
    write_csv(by_product_path, ("country", "year", "product", "epsilon"), rows)

