"""Tidy, plot-ready tables built from footprint and error results."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import EeioError
from .mrio_footprint import FOOTPRINT_HEADER, FootprintResult
from .textio import atomic_write, read_rows, to_csv_text


def read_footprints(path):
    """Read a footprint CSV back into one FootprintResult per year
    (without per-sector contributions)."""
    by_year = {}
    for _, f in read_rows(path)[1:]:
        by_year.setdefault(int(f[1]), []).append(f)
    out = []
    for year, rows in sorted(by_year.items()):
        pc = all(r[5] != "" for r in rows)
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        out.append(
            FootprintResult(
                regions=tuple(r[0] for r in rows),
                pba=col(2),
                cba=col(3),
                beet=col(4),
                pba_per_capita=col(5) if pc else None,
                cba_per_capita=col(6) if pc else None,
                year=year,
            )
        )
    return out


def _write(out_dir, name, header, rows, fmt):
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        atomic_write(path, to_csv_text(header, rows))
    else:
        path = out_dir / f"{name}.json"
        records = [dict(zip(header, (None if v == "" else v for v in row))) for row in rows]
        atomic_write(path, json.dumps(records, indent=1) + "\n")
    return path


def _pct_change(a, b):
    return (b - a) / a * 100.0 if a else float("nan")


def report(results, out_dir, fmt="csv", errors=None, uncalibrated=None):
    """Write the report tables for a series of footprint results.

    Parameters
    ----------
    results : list of FootprintResult
        One per year.
    out_dir : path
    fmt : {"csv", "json"}
    errors : path, optional
        ``country,year,epsilon`` file from the error stage.
    uncalibrated : list of FootprintResult, optional
        Footprints computed from uncalibrated accounts; enables the
        calibrated-vs-uncalibrated CBA difference table.

    Returns
    -------
    (written paths, notes)
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    if not results:
        raise EeioError("no footprint results to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EeioError(f"cannot create report directory {out_dir}: {exc}") from exc
    written, notes = [], []

    rows = sorted((row for res in results for row in res.as_rows()), key=lambda r: (r[0], r[1]))
    written.append(_write(out_dir, "pba_cba", FOOTPRINT_HEADER, rows, fmt))

    results = sorted(results, key=lambda r: r.year)
    first, last = results[0], results[-1]
    if first.pba_per_capita is not None and last.pba_per_capita is not None:
        idx_last = {r: k for k, r in enumerate(last.regions)}
        pc_rows = []
        for k, region in enumerate(first.regions):
            if region not in idx_last:
                continue
            j = idx_last[region]
            a_p, b_p = float(first.pba_per_capita[k]), float(last.pba_per_capita[j])
            a_c, b_c = float(first.cba_per_capita[k]), float(last.cba_per_capita[j])
            pc_rows.append((region, first.year, last.year, a_p, b_p, _pct_change(a_p, b_p), a_c, b_c, _pct_change(a_c, b_c)))
        header = (
            "region", "first_year", "last_year",
            "pba_gj_pc_first", "pba_gj_pc_last", "pba_change_pct",
            "cba_gj_pc_first", "cba_gj_pc_last", "cba_change_pct",
        )
        written.append(_write(out_dir, "per_capita_change", header, sorted(pc_rows), fmt))
    else:
        notes.append("per-capita table omitted: no population for first/last year")

    if errors is not None:
        err_rows = [(f[0], int(f[1]), float(f[2]) * 100.0) for _, f in read_rows(errors)[1:]]
        written.append(_write(out_dir, "errors", ("country", "year", "epsilon_pct"), err_rows, fmt))
        summary = {}
        for country, _, pct in err_rows:
            summary.setdefault(country, []).append(pct)
        summ_rows = [(c, float(np.mean(v)), len(v)) for c, v in sorted(summary.items())]
        written.append(_write(out_dir, "error_summary", ("country", "mean_epsilon_pct", "n_years"), summ_rows, fmt))
    else:
        notes.append("error table omitted: no reference accounts")

    if uncalibrated is not None:
        base = {(r, res.year): float(res.cba[k]) for res in uncalibrated for k, r in enumerate(res.regions)}
        diff_rows = []
        for res in results:
            for k, region in enumerate(res.regions):
                before = base.get((region, res.year))
                if before is None:
                    continue
                after = float(res.cba[k])
                rel = (after - before) / before if before else float("nan")
                diff_rows.append((region, res.year, before, after, rel))
        diff_rows.sort(key=lambda r: (r[0], r[1]))
        header = ("region", "year", "cba_uncalibrated_tj", "cba_calibrated_tj", "relative_difference")
        written.append(_write(out_dir, "cba_differences", header, diff_rows, fmt))
    else:
        notes.append("difference distribution omitted: calibration skipped")
    return written, notes
