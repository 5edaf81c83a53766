"""Run configuration, stage runner and run manifest.

Every stage reads its inputs (config inputs or earlier stage outputs in the
output directory) and writes its outputs there, so running the stages one
by one is the same as a single ``run``. Work inside a stage is split into
(region, year) cells that may run on a thread pool; results are always
collected and written in sorted cell order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import allocation as alloc
from . import balance as bal
from . import calibration as cal
from . import mrio_footprint as fp
from .errors import ConfigError, EeioError
from .reporting import read_footprints, report
from .textio import atomic_write

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

WORLD = "WORLD"
REQUIRED_PATHS = ("balances", "schema", "concordance", "splitting_keys", "aggregation_map", "mrio")
OPTIONAL_PATHS = ("world_balance", "reference_accounts", "population")
DEFAULT_OPTIONS = {
    "unit": "TJ",
    "zero_key_fallback": False,
    "extrapolation": "rolling",
    "window": 5,
    "households": "include",
    "jobs": 1,
    "residual_region": "",
    "mrio_tolerance": 1e-6,
}
OPTION_CHOICES = {
    "unit": tuple(bal.UNITS),
    "extrapolation": cal.EXTRAPOLATION_MODES,
    "households": ("include", "exclude"),
}
STAGE_ORDER = (
    "extract-use",
    "build-map",
    "allocate",
    "aggregate",
    "residual",
    "error",
    "calibrate",
    "extrapolate",
    "footprint",
    "report",
)


@dataclass(frozen=True)
class RunConfig:
    years: tuple
    regions: tuple
    paths: dict
    options: dict
    base_dir: Path = Path(".")
    source_hash: str = ""

    @property
    def residual(self):
        return self.options["residual_region"]

    @property
    def members(self):
        return tuple(r for r in self.regions if r != self.residual)

    def path(self, role, region=None, year=None):
        template = self.paths.get(role)
        if not template:
            return None
        p = Path(str(template).format(region=region, year=year))
        return p if p.is_absolute() else self.base_dir / p


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def load_config(path):
    """Parse a TOML run config. Relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent, source_hash=_sha256(raw))


def config_from_dict(doc, base_dir=".", source_hash=""):
    unknown = set(doc) - {"years", "regions", "paths", "options"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    years = doc.get("years")
    if not (isinstance(years, list) and len(years) == 2 and all(isinstance(y, int) for y in years)):
        raise ConfigError("years must be [first, last]")
    if years[1] < years[0]:
        raise ConfigError("years range is empty")
    regions = doc.get("regions")
    if not regions or not all(isinstance(r, str) and r for r in regions):
        raise ConfigError("regions must be a non-empty list of codes")
    if len(set(regions)) != len(regions) or WORLD in regions:
        raise ConfigError(f"region codes must be unique and not {WORLD!r}")
    paths = dict(doc.get("paths", {}))
    bad = set(paths) - set(REQUIRED_PATHS) - set(OPTIONAL_PATHS)
    if bad:
        raise ConfigError(f"unknown path roles {sorted(bad)}")
    options = dict(DEFAULT_OPTIONS)
    extra = set(doc.get("options", {})) - set(DEFAULT_OPTIONS)
    if extra:
        raise ConfigError(f"unknown options {sorted(extra)}")
    options.update(doc.get("options", {}))
    for key, choices in OPTION_CHOICES.items():
        if options[key] not in choices:
            raise ConfigError(f"option {key}={options[key]!r} not in {choices}")
    if not isinstance(options["jobs"], int) or options["jobs"] < 1:
        raise ConfigError("jobs must be a positive integer")
    if not isinstance(options["window"], int) or options["window"] < 1:
        raise ConfigError("window must be a positive integer")
    if options["residual_region"] and options["residual_region"] not in regions:
        raise ConfigError("residual_region must be one of regions")
    return RunConfig(
        years=tuple(range(years[0], years[1] + 1)),
        regions=tuple(regions),
        paths=paths,
        options=options,
        base_dir=Path(base_dir),
        source_hash=source_hash,
    )


def validate(config):
    """Check that every referenced input exists; raise ConfigError listing
    all problems at once."""
    problems = []
    for role in REQUIRED_PATHS:
        if not config.paths.get(role):
            problems.append(f"missing path role {role!r}")
    if config.residual and not config.paths.get("world_balance"):
        problems.append("residual_region needs a world_balance path")
    if problems:
        raise ConfigError("; ".join(problems))

    def need(p):
        if p is not None and not p.exists():
            problems.append(f"missing input {p}")

    for role in ("schema", "concordance", "aggregation_map", "population"):
        need(config.path(role))
    for year in config.years:
        for region in config.members:
            need(config.path("balances", region, year))
        for region in config.regions:
            need(config.path("splitting_keys", region, year))
        if config.residual:
            need(config.path("world_balance", year=year))
        mrio = config.path("mrio", year=year)
        for name in ("Z.csv", "Y.csv", "x.csv"):
            need(mrio / name)
    if problems:
        raise ConfigError("; ".join(problems))


# ---------------------------------------------------------------------------
# manifest

@dataclass
class StageRecord:
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def read(self, path, out_dir=None):
        path = Path(path)
        key = _rel(path, out_dir)
        if key not in self.inputs and path.is_file():
            self.inputs[key] = _sha256(path.read_bytes())

    def fail(self, region, year, exc):
        self.failures.append({"region": region, "year": year, "error": f"{type(exc).__name__}: {exc}"})
        logger.error("%s %s: %s", region, year, exc)

    def as_dict(self):
        return {
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "warnings": self.warnings,
            "failures": sorted(self.failures, key=lambda f: (f["region"], f["year"])),
            "notes": self.notes,
        }


def _rel(path, base):
    path = Path(path)
    if base is not None:
        try:
            return path.resolve().relative_to(Path(base).resolve()).as_posix()
        except ValueError:
            pass
    return path.as_posix()


@dataclass
class RunManifest:
    config_hash: str
    stages: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [dict(f, stage=name) for name, s in self.stages.items() for f in s["failures"]]

    @property
    def warnings(self):
        return [w for s in self.stages.values() for w in s["warnings"]]

    @property
    def exit_code(self):
        return 2 if self.failures else 0

    def output_digests(self):
        return {k: v for s in self.stages.values() for k, v in s["outputs"].items()}

    def as_dict(self):
        ordered = {k: self.stages[k] for k in STAGE_ORDER if k in self.stages}
        return {"config_hash": self.config_hash, "stages": ordered}

    def save(self, out_dir):
        atomic_write(Path(out_dir) / "manifest.json", json.dumps(self.as_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, out_dir, config_hash):
        path = Path(out_dir) / "manifest.json"
        if path.exists():
            doc = json.loads(path.read_text(encoding="utf-8"))
            if doc.get("config_hash") == config_hash:
                return cls(config_hash, doc.get("stages", {}))
        return cls(config_hash)


# ---------------------------------------------------------------------------
# stage runner

class Runner:
    """Holds the config, output directory and shared inputs of one run."""

    def __init__(self, config, out_dir, jobs=None):
        self.config = config
        self.out = Path(out_dir)
        self.jobs = jobs or config.options["jobs"]
        self._cache = {}

    # shared inputs -------------------------------------------------------
    def aggregation_map(self, rec):
        rec.read(self.config.path("aggregation_map"))
        if "agg" not in self._cache:
            self._cache["agg"] = alloc.read_aggregation_map(self.config.path("aggregation_map"))
        return self._cache["agg"]

    def schema(self, rec):
        rec.read(self.config.path("schema"))
        # the product axis comes from the aggregation map, cached or not
        products = self.aggregation_map(rec).sources
        if "schema" not in self._cache:
            self._cache["schema"] = bal.read_schema(
                self.config.path("schema"), unit=self.config.options["unit"], products=products
            )
        return self._cache["schema"]

    def concordance(self, rec):
        rec.read(self.config.path("concordance"))
        if "conc" not in self._cache:
            self._cache["conc"] = alloc.read_concordance(self.config.path("concordance"))
        return self._cache["conc"]

    def use_flows(self, rec):
        schema = self.schema(rec)
        return tuple(f for f in schema.flows if schema.flow_class[f] in bal.USE_CLASSES)

    # layout --------------------------------------------------------------
    def balance_regions(self):
        """Regions with their own balance file, plus WORLD when a residual
        region is derived from it."""
        return self.config.members + ((WORLD,) if self.config.residual else ())

    def key_region(self, region):
        return self.config.residual if region == WORLD else region

    def balance_path(self, region, year):
        if region == WORLD:
            return self.config.path("world_balance", year=year)
        return self.config.path("balances", region, year)

    def use_path(self, region, year):
        return self.out / "use" / f"{region}_{year}.csv"

    def map_path(self, region, year):
        return self.out / "maps" / f"{region}_{year}.csv"

    def account_path(self, stage, region, year):
        return self.out / "accounts" / stage / f"{region}_{year}.csv"

    def cells(self, regions):
        return [(r, y) for y in self.config.years for r in sorted(regions)]

    def reference_path(self, region, year):
        p = self.config.path("reference_accounts", region, year)
        return p if p is not None and p.exists() else None

    # helpers -------------------------------------------------------------
    def map_cells(self, fn, cells, rec):
        """Apply ``fn(region, year)`` over cells; failures are recorded and
        yield None. Results come back in cell order."""

        def safe(cell):
            try:
                return fn(*cell)
            except (EeioError, OSError, ValueError, KeyError) as exc:
                return exc

        if self.jobs > 1 and len(cells) > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(safe, cells))
        else:
            results = [safe(c) for c in cells]
        out = {}
        for cell, res in zip(cells, results):
            if isinstance(res, Exception):
                rec.fail(cell[0], cell[1], res)
            else:
                out[cell] = res
        return out

    def wrote(self, rec, *paths):
        for p in paths:
            p = Path(p)
            rec.outputs[_rel(p, self.out)] = _sha256(p.read_bytes())
            sidecar = p.with_suffix(".json")
            if p.suffix == ".csv" and sidecar.exists():
                rec.outputs[_rel(sidecar, self.out)] = _sha256(sidecar.read_bytes())

    def collect_warnings(self, rec, prefix, warnings):
        rec.warnings.extend(f"{prefix}: {w}" for w in warnings)

    # stages --------------------------------------------------------------
    def extract_use(self, rec):
        schema = self.schema(rec)

        def task(region, year):
            src = self.balance_path(region, year)
            table = bal.parse_balance(src, schema, country=region, year=year)
            use = bal.extract_use_table(table)
            bal.write_use_table(self.use_path(region, year), use)
            return src, use

        for (region, year), (src, use) in self.map_cells(task, self.cells(self.balance_regions()), rec).items():
            rec.read(src)
            self.wrote(rec, self.use_path(region, year))
            self.collect_warnings(rec, f"{region} {year}", use.warnings)
        if self.config.options["unit"] != "TJ":
            rec.notes.append(f"balances converted from {self.config.options['unit']} to TJ")

    def build_map(self, rec):
        C = self.concordance(rec).select_flows(self.use_flows(rec))
        fallback = self.config.options["zero_key_fallback"]

        def task(region, year):
            key_path = self.config.path("splitting_keys", self.key_region(region), year)
            key = alloc.read_splitting_key(key_path, sectors=C.sectors)
            M = alloc.build_mapping(C, key, fallback=fallback)
            alloc.write_mapping(self.map_path(region, year), M)
            return key_path

        for (region, year), key_path in self.map_cells(task, self.cells(self.balance_regions()), rec).items():
            rec.read(key_path)
            self.wrote(rec, self.map_path(region, year))

    def allocate(self, rec):
        def task(region, year):
            use = bal.read_use_table(self.use_path(region, year))
            M = alloc.read_mapping(self.map_path(region, year))
            acct = alloc.allocate(use, M)
            alloc.write_account(self.account_path("raw", region, year), acct)
            return acct

        for (region, year), acct in self.map_cells(task, self.cells(self.balance_regions()), rec).items():
            rec.read(self.use_path(region, year), self.out)
            rec.read(self.map_path(region, year), self.out)
            self.wrote(rec, self.account_path("raw", region, year))

    def aggregate(self, rec):
        mapping = self.aggregation_map(rec)

        def task(region, year):
            acct = alloc.read_account(self.account_path("raw", region, year))
            agg = alloc.aggregate_products(acct, mapping)
            alloc.write_account(self.account_path("aggregated", region, year), agg)
            return agg

        for (region, year), _ in self.map_cells(task, self.cells(self.balance_regions()), rec).items():
            rec.read(self.account_path("raw", region, year), self.out)
            self.wrote(rec, self.account_path("aggregated", region, year))

    def residual(self, rec):
        label = self.config.residual
        if not label:
            rec.notes.append("no residual region configured")
            return

        def task(region, year):
            world = alloc.read_account(self.account_path("aggregated", WORLD, year))
            members = [
                alloc.read_account(self.account_path("aggregated", m, year)) for m in self.config.members
            ]
            acct = alloc.residual_region(world, members, label=label)
            alloc.write_account(self.account_path("aggregated", label, year), acct)
            return acct

        for (region, year), acct in self.map_cells(task, self.cells([label]), rec).items():
            for r in (WORLD, *self.config.members):
                rec.read(self.account_path("aggregated", r, year), self.out)
            self.wrote(rec, self.account_path("aggregated", label, year))
            self.collect_warnings(rec, f"{label} {year}", acct.warnings)

    def _reference(self, region, year, products, rec):
        path = self.reference_path(region, year)
        rec.read(path)
        ref = alloc.read_account(path, country=region, year=year, stage="aggregated")
        return alloc.reindex_products(ref, products)

    def _has_references(self):
        return bool(self.config.paths.get("reference_accounts"))

    def error(self, rec):
        if not self._has_references():
            rec.notes.append("no reference accounts configured; error report skipped")
            return
        cells = [c for c in self.cells(self.config.regions) if self.reference_path(*c)]

        def task(region, year):
            acct = alloc.read_account(self.account_path("aggregated", region, year))
            return cal.relative_error(acct, self._reference(region, year, acct.products, rec))

        reports = self.map_cells(task, cells, rec)
        for region, year in reports:
            rec.read(self.account_path("aggregated", region, year), self.out)
        cdir = self.out / "calibration"
        cal.write_error_reports(cdir / "errors.csv", cdir / "errors_by_product.csv", list(reports.values()))
        self.wrote(rec, cdir / "errors.csv", cdir / "errors_by_product.csv")

    def calibrate(self, rec):
        if not self._has_references():
            rec.notes.append("no reference accounts configured; accounts stay at stage aggregated")
            return
        cells = [c for c in self.cells(self.config.regions) if self.reference_path(*c)]

        def task(region, year):
            acct = alloc.read_account(self.account_path("aggregated", region, year))
            factors = cal.calibration_factors(acct, self._reference(region, year, acct.products, rec))
            calibrated = cal.apply_calibration(acct, factors)
            alloc.write_account(self.account_path("calibrated", region, year), calibrated)
            return factors

        factors = self.map_cells(task, cells, rec)
        for (region, year), f in factors.items():
            rec.read(self.account_path("aggregated", region, year), self.out)
            self.wrote(rec, self.account_path("calibrated", region, year))
            if f.flagged:
                rec.warnings.append(f"{region} {year}: unmatchable products {list(f.flagged)}")
        path = self.out / "calibration" / "factors_overlap.csv"
        cal.write_factors(path, factors.values())
        self.wrote(rec, path)

    def extrapolate(self, rec):
        if not self._has_references():
            rec.notes.append("no reference accounts configured; extrapolation skipped")
            return
        overlap_path = self.out / "calibration" / "factors_overlap.csv"
        rec.read(overlap_path, self.out)
        history = {}
        for f in cal.read_factors(overlap_path):
            history.setdefault(f.country, []).append(f)
        mode, window = self.config.options["extrapolation"], self.config.options["window"]
        rec.notes.append(f"extrapolation: {mode} trailing mean, window {window}")

        extrapolated = {}
        for region in sorted(self.config.regions):
            hist = history.get(region, [])
            last = hist[-1].year if hist else None
            targets = [y for y in self.config.years if last is not None and y > last]
            for year in self.config.years:
                covered = any(h.year == year for h in hist) or year in targets
                if not covered:
                    rec.fail(region, year, EeioError("no calibration factors for this year"))
            if targets:
                for f in cal.extrapolate_factors(hist, targets, mode=mode, window=window):
                    extrapolated[(region, f.year)] = f
                    if f.short_window:
                        rec.warnings.append(f"{region} {f.year}: short extrapolation window")

        def task(region, year):
            acct = alloc.read_account(self.account_path("aggregated", region, year))
            calibrated = cal.apply_calibration(acct, extrapolated[(region, year)])
            alloc.write_account(self.account_path("calibrated", region, year), calibrated)

        done = self.map_cells(task, sorted(extrapolated, key=lambda c: (c[1], c[0])), rec)
        for region, year in done:
            rec.read(self.account_path("aggregated", region, year), self.out)
            self.wrote(rec, self.account_path("calibrated", region, year))
        all_factors = [f for hist in history.values() for f in hist] + list(extrapolated.values())
        path = self.out / "calibration" / "factors.csv"
        cal.write_factors(path, all_factors)
        self.wrote(rec, path)

    def footprint(self, rec):
        include_hh = self.config.options["households"] == "include"
        rec.notes.append(f"household direct energy {'included in' if include_hh else 'excluded from'} PBA and CBA")
        population = {}
        if self.config.path("population"):
            rec.read(self.config.path("population"))
            population = fp.read_population(self.config.path("population"))
        calibrated = self._has_references()
        stages = ("calibrated", "aggregated") if calibrated else ("aggregated",)

        def task(_, year):
            mrio_dir = self.config.path("mrio", year=year)
            system = fp.read_mrio(mrio_dir, tol=self.config.options["mrio_tolerance"])
            solver = fp.LeontiefSolver(system.A)
            pop = None
            if population:
                keys = [(r, year) for r in system.regions]
                if all(k in population for k in keys):
                    pop = [population[k] for k in keys]
            results = {}
            for stage in stages:
                accounts = {
                    r: alloc.read_account(self.account_path(stage, r, year)) for r in system.regions
                }
                intensity = fp.compute_intensity(accounts, system)
                results[stage] = (
                    fp.footprint(system, intensity, pop, include_households=include_hh, year=year, solver=solver),
                    intensity,
                )
            return mrio_dir, system, results

        per_year = self.map_cells(task, [("*", y) for y in self.config.years], rec)
        fdir = self.out / "footprint"
        final = []
        uncalibrated = []
        labels = {}
        for (_, year), (mrio_dir, system, results) in sorted(per_year.items(), key=lambda kv: kv[0][1]):
            for name in ("Z.csv", "Y.csv", "x.csv"):
                rec.read(mrio_dir / name)
            for r in system.regions:
                for stage in stages:
                    rec.read(self.account_path(stage, r, year), self.out)
            rec.warnings.extend(f"MRIO {year}: {w}" for w in system.warnings)
            res, intensity = results[stages[0]]
            for region, sector, tj in intensity.orphaned:
                rec.warnings.append(f"{region} {year}: {tj!r} TJ orphaned in zero-output sector {sector}")
            if population and res.pba_per_capita is None:
                rec.notes.append(f"{year}: population incomplete, per-capita omitted")
            final.append(res)
            labels[year] = system.row_labels
            if calibrated:
                uncalibrated.append(results["aggregated"][0])
        fp.write_footprints(fdir / "footprint.csv", final)
        fp.write_contributions(fdir / "contributions.csv", final, labels)
        self.wrote(rec, fdir / "footprint.csv", fdir / "contributions.csv")
        if calibrated:
            fp.write_footprints(fdir / "footprint_uncalibrated.csv", uncalibrated)
            self.wrote(rec, fdir / "footprint_uncalibrated.csv")

    def report(self, rec, fmt="csv"):
        fdir = self.out / "footprint"
        rec.read(fdir / "footprint.csv", self.out)
        results = read_footprints(fdir / "footprint.csv")
        uncal = None
        if (fdir / "footprint_uncalibrated.csv").exists() and self._has_references():
            rec.read(fdir / "footprint_uncalibrated.csv", self.out)
            uncal = read_footprints(fdir / "footprint_uncalibrated.csv")
        errors_path = self.out / "calibration" / "errors.csv"
        errors = None
        if errors_path.exists() and self._has_references():
            rec.read(errors_path, self.out)
            errors = errors_path
        written, notes = report(results, self.out / "report", fmt=fmt, errors=errors, uncalibrated=uncal)
        rec.notes.extend(notes)
        self.wrote(rec, *written)

    def run_stage(self, name, manifest, **kwargs):
        rec = StageRecord()
        start = time.perf_counter()
        getattr(self, name.replace("-", "_"))(rec, **kwargs)
        # timings are logged only, so manifests stay reproducible
        logger.info("stage %s took %.3f s", name, time.perf_counter() - start)
        manifest.stages[name] = rec.as_dict()
        return rec


def run_stages(config, out_dir, stages=STAGE_ORDER, jobs=None, fmt="csv"):
    """Validate ``config`` and run ``stages`` in order; returns the manifest.

    Stage outputs already in ``out_dir`` from an earlier invocation with
    the same config are reused as inputs.
    """
    validate(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.load(out_dir, config.source_hash)
    runner = Runner(config, out_dir, jobs=jobs)
    for name in stages:
        logger.info("stage %s", name)
        kwargs = {"fmt": fmt} if name == "report" else {}
        runner.run_stage(name, manifest, **kwargs)
    manifest.save(out_dir)
    return manifest


def run_pipeline(config, out_dir, jobs=None, fmt="csv"):
    """Execute every stage, balances through report."""
    return run_stages(config, out_dir, STAGE_ORDER, jobs=jobs, fmt=fmt)


def world_use_total(config):
    """Total sign-normalised use energy (TJ) of all regions per year, read
    straight from the balance files. Used to check end-to-end conservation."""
    runner = Runner(config, ".")
    rec = StageRecord()
    schema = runner.schema(rec)
    totals = {}
    for year in config.years:
        regions = (WORLD,) if config.residual else config.members
        total = 0.0
        for r in regions:
            use = bal.extract_use_table(bal.parse_balance(runner.balance_path(r, year), schema, r, year))
            total += float(np.sum(use.values))
        totals[year] = total
    return totals
