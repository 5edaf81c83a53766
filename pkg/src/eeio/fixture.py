"""Seeded synthetic input sets for tests and demos.

The generated set is consistent by construction: each MRIO satisfies
``x = Z 1 + Y 1`` to rounding, the world balance is the exact sum of all
regional balances (the residual region has no balance file of its own),
every flow has positive splitting-key weight, and reference accounts carry
the region's true per-product use totals times a small known bias.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .allocation import HOUSEHOLDS, ConcordanceMatrix, write_concordance
from .balance import FLIPPED_CLASSES, USE_CLASSES
from .mrio_footprint import assemble_system, write_mrio
from .textio import atomic_write, to_csv_text

RESIDUAL = "ROW"
CATEGORIES = ("HH", "GOV")


def _regions(R):
    return [f"R{k + 1:02d}" for k in range(R - 1)] + [RESIDUAL]


def _balance(rng, flows, classes, products):
    """Integer-valued balance; use flows carry their conventional sign."""
    F, P = len(flows), len(products)
    values = rng.integers(1, 500, size=(F, P)).astype(float)
    values[rng.random((F, P)) < 0.3] = 0.0
    for i, cls in enumerate(classes):
        if cls in FLIPPED_CLASSES:
            values[i] *= -1
        elif cls == "statistical":
            values[i] = rng.integers(-5, 6, size=P)
    return values


def _balance_text(flows, products, values):
    rows = [
        (f, p, float(values[i, j]))
        for i, f in enumerate(flows)
        for j, p in enumerate(products)
        if values[i, j] != 0
    ]
    return to_csv_text(("flow", "product", "value"), rows)


def _use_totals(values, classes):
    """Per-product use totals computed straight from the sign convention."""
    total = np.zeros(values.shape[1])
    for row, cls in zip(values, classes):
        if cls in USE_CLASSES:
            total += -row if cls in FLIPPED_CLASSES else row
    return total


def generate_fixture(out_dir, seed=1, R=3, N=4, F=6, P=5, first_year=2005, n_years=6, n_overlap=4, bias=0.05):
    """Write a complete input set plus ``run.toml`` into ``out_dir``.

    Parameters
    ----------
    seed : int
    R, N, F, P : int
        Regions (the last is always the residual region ``ROW``), sectors
        per region, use flows and source products.
    first_year, n_years : int
    n_overlap : int
        Leading years that get reference accounts; later years are
        calibrated by extrapolation.
    bias : float
        Reference totals are the true use totals times ``1 + u`` with
        ``u ~ U(-bias, bias)`` per (region, year, product).

    Returns
    -------
    Path to the written ``run.toml``.
    """
    if min(R, N, F, P, n_years) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    regions = _regions(R)
    sectors = [f"S{k + 1:02d}" for k in range(N)]
    years = list(range(first_year, first_year + n_years))
    products = [f"p{k + 1:02d}" for k in range(P)]

    use_flows = [f"fl{k + 1:02d}" for k in range(F)]
    use_classes = [USE_CLASSES[k % len(USE_CLASSES)] for k in range(F)]
    flows = use_flows + ["imports", "statdiff"]
    classes = use_classes + ["supply_side", "statistical"]
    atomic_write(out / "schema.csv", to_csv_text(("flow", "flow_class"), zip(flows, classes)))

    groups = {f"G{k + 1}": products[2 * k:2 * k + 2] for k in range((P + 1) // 2)}
    groups["LOSS"] = []
    agg_rows = [(g, p) for g, ps in groups.items() for p in ps]
    atomic_write(
        out / "aggregation.csv",
        "# aggregates: " + ",".join(groups) + "\n" + to_csv_text(("aggregate_product", "source_product"), agg_rows),
    )

    all_sectors = sectors + [HOUSEHOLDS]
    S = len(all_sectors)
    C = np.zeros((S, F))
    for f in range(F):
        k = int(rng.integers(1, min(3, S) + 1))
        C[rng.choice(S, size=k, replace=False), f] = 1
    write_concordance(out / "concordance.csv", ConcordanceMatrix(all_sectors, use_flows, C))

    population_rows = []
    meta = {"seed": seed, "regions": regions, "years": years, "overlap_years": years[:n_overlap], "reference_bias": {}}
    for year in years:
        key = np.round(rng.uniform(1.0, 100.0, size=S), 2)
        world = np.zeros((len(flows), P))
        for region in regions:
            values = _balance(rng, flows, classes, products)
            world += values
            if region != RESIDUAL:
                atomic_write(out / "balances" / f"{region}_{year}.csv", _balance_text(flows, products, values))
            # identical keys across regions keep the residual allocation exact
            atomic_write(
                out / "keys" / f"{region}_{year}.csv",
                to_csv_text(("sector", "weight"), zip(all_sectors, map(float, key))),
            )
            if year in years[:n_overlap]:
                totals = _use_totals(values, classes)
                agg = np.array([sum(totals[products.index(p)] for p in ps) for ps in groups.values()])
                u = rng.uniform(-bias, bias, size=len(groups))
                meta["reference_bias"][f"{region}_{year}"] = u.tolist()
                ref_rows = [(g, "TOTAL", float(v)) for g, v in zip(groups, agg * (1 + u))]
                atomic_write(
                    out / "reference" / f"{region}_{year}.csv",
                    to_csv_text(("product", "sector", "value_tj"), ref_rows),
                )
            population_rows.append((region, year, float(rng.integers(1_000_000, 50_000_000))))
        atomic_write(out / "balances" / f"WORLD_{year}.csv", _balance_text(flows, products, world))

        n = R * N
        A = rng.uniform(0.0, 1.0, size=(n, n)) * (rng.random((n, n)) < 0.7)
        A *= rng.uniform(0.2, 0.6, size=n) / np.maximum(A.sum(axis=0), 1e-12)
        Y = rng.uniform(10.0, 100.0, size=(n, R * len(CATEGORIES)))
        x = np.linalg.solve(np.eye(n) - A, Y.sum(axis=1))
        Z = A * x
        system = assemble_system(Z, Y, x, regions, sectors, CATEGORIES)
        write_mrio(out / "mrio" / str(year), Z, system)

    atomic_write(out / "population.csv", to_csv_text(("region", "year", "persons"), population_rows))
    atomic_write(out / "fixture.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    config = f"""\
# synthetic fixture, seed {seed}
years = [{years[0]}, {years[-1]}]
regions = [{", ".join(f'"{r}"' for r in regions)}]

[paths]
balances = "balances/{{region}}_{{year}}.csv"
world_balance = "balances/WORLD_{{year}}.csv"
schema = "schema.csv"
concordance = "concordance.csv"
splitting_keys = "keys/{{region}}_{{year}}.csv"
aggregation_map = "aggregation.csv"
mrio = "mrio/{{year}}"
reference_accounts = "reference/{{region}}_{{year}}.csv"
population = "population.csv"

[options]
unit = "TJ"
extrapolation = "rolling"
households = "include"
residual_region = "{RESIDUAL}"
"""
    atomic_write(out / "run.toml", config)
    return out / "run.toml"
