import filecmp
import json
import shutil

import numpy as np
import pytest

from eeio.allocation import read_account
from eeio.cli import main
from eeio.errors import ConfigError
from eeio.fixture import generate_fixture
from eeio.pipeline import STAGE_ORDER, config_from_dict, load_config, run_pipeline, run_stages, world_use_total
from eeio.reporting import read_footprints


def tree(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file())


def same_tree(a, b):
    files = tree(a)
    assert files == tree(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


def test_fixture_run_writes_everything(fixture_dir, tmp_path):
    manifest = run_pipeline(load_config(fixture_dir / "run.toml"), tmp_path)
    assert manifest.exit_code == 0
    files = tree(tmp_path)
    for name in ("footprint/footprint.csv", "footprint/contributions.csv", "calibration/factors.csv",
                 "calibration/errors.csv", "report/pba_cba.csv", "report/per_capita_change.csv",
                 "report/errors.csv", "report/cba_differences.csv", "manifest.json"):
        assert name in files
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert list(doc["stages"]) == list(STAGE_ORDER)
    assert doc["stages"]["footprint"]["outputs"]


def test_jobs_do_not_change_outputs(fixture_dir, tmp_path):
    config = load_config(fixture_dir / "run.toml")
    run_pipeline(config, tmp_path / "a", jobs=1)
    run_pipeline(config, tmp_path / "b", jobs=8)
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_stage_by_stage_equals_one_shot(fixture_dir, tmp_path):
    config = load_config(fixture_dir / "run.toml")
    run_pipeline(config, tmp_path / "once")
    for stage in STAGE_ORDER:
        assert main([stage, "--config", str(fixture_dir / "run.toml"), "--out", str(tmp_path / "steps")]) == 0
    assert same_tree(tmp_path / "once", tmp_path / "steps")


def test_unbiased_references_conserve_world_use(tmp_path):
    run_toml = generate_fixture(tmp_path / "in", seed=7, bias=0.0)
    config = load_config(run_toml)
    run_pipeline(config, tmp_path / "out")
    totals = world_use_total(config)
    for res in read_footprints(tmp_path / "out" / "footprint" / "footprint.csv"):
        assert res.pba.sum() == pytest.approx(totals[res.year], rel=1e-9)
        assert res.cba.sum() == pytest.approx(totals[res.year], rel=1e-6)
    for res in read_footprints(tmp_path / "out" / "footprint" / "footprint_uncalibrated.csv"):
        assert res.pba.sum() == pytest.approx(totals[res.year], rel=1e-9)


def test_calibrated_accounts_hit_references(fixture_dir, tmp_path):
    config = load_config(fixture_dir / "run.toml")
    run_pipeline(config, tmp_path)
    meta = json.loads((fixture_dir / "fixture.json").read_text())
    for region in meta["regions"]:
        year = meta["overlap_years"][0]
        cal = read_account(tmp_path / "accounts" / "calibrated" / f"{region}_{year}.csv")
        ref = read_account(fixture_dir / "reference" / f"{region}_{year}.csv")
        mask = cal.product_totals() > 0
        np.testing.assert_allclose(cal.product_totals()[mask], ref.product_totals()[mask], rtol=1e-9)


def test_single_region_world(tmp_path):
    run_toml = generate_fixture(tmp_path / "in", seed=2, R=1)
    run_pipeline(load_config(run_toml), tmp_path / "out")
    for res in read_footprints(tmp_path / "out" / "footprint" / "footprint.csv"):
        assert abs(res.beet[0]) <= 1e-9 * res.pba[0]


def test_without_references_calibration_is_skipped(tmp_path):
    run_toml = generate_fixture(tmp_path / "in", seed=3)
    text = run_toml.read_text().replace('reference_accounts = "reference/{region}_{year}.csv"\n', "")
    run_toml.write_text(text)
    manifest = run_pipeline(load_config(run_toml), tmp_path / "out")
    assert manifest.exit_code == 0
    files = tree(tmp_path / "out")
    assert "report/pba_cba.csv" in files
    assert "report/errors.csv" not in files and "report/cba_differences.csv" not in files
    notes = manifest.stages["report"]["notes"]
    assert any("error table omitted" in n for n in notes)


def test_json_report(fixture_dir, tmp_path):
    run_pipeline(load_config(fixture_dir / "run.toml"), tmp_path, fmt="json")
    records = json.loads((tmp_path / "report" / "pba_cba.json").read_text())
    assert {"region", "year", "pba_tj", "cba_tj", "beet_tj"} <= set(records[0])


def test_broken_cell_fails_alone(tmp_path, capsys):
    run_toml = generate_fixture(tmp_path / "in", seed=4)
    (tmp_path / "in" / "balances" / "R01_2006.csv").write_text("flow,product,value\n")
    code = main(["extract-use", "--config", str(run_toml), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "EmptyBalance" in capsys.readouterr().err
    use = tree(tmp_path / "out" / "use")
    assert "R01_2005.csv" in use and "R01_2006.csv" not in use


@pytest.mark.parametrize(
    "doc",
    [
        {"years": [2010], "regions": ["A"]},
        {"years": [2011, 2010], "regions": ["A"]},
        {"years": [2010, 2011], "regions": []},
        {"years": [2010, 2011], "regions": ["A", "A"]},
        {"years": [2010, 2011], "regions": ["A"], "options": {"unit": "kWh"}},
        {"years": [2010, 2011], "regions": ["A"], "options": {"jobs": 0}},
        {"years": [2010, 2011], "regions": ["A"], "options": {"residual_region": "B"}},
        {"years": [2010, 2011], "regions": ["A"], "colour": "red"},
    ],
)
def test_bad_config_dicts(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_cli_exit_codes(fixture_dir, tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("years = [2010\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--config", str(tmp_path / "absent.toml")]) == 1

    broken = tmp_path / "in"
    shutil.copytree(fixture_dir, broken)
    (broken / "concordance.csv").unlink()
    assert main(["run", "--config", str(broken / "run.toml"), "--out", str(tmp_path / "o")]) == 1
    assert "concordance.csv" in capsys.readouterr().err
    assert main(["run", "--config", str(fixture_dir / "run.toml"), "--jobs", "0"]) == 1


def test_cli_fixture_and_run(tmp_path, capsys):
    assert main(["fixture", "--out", str(tmp_path / "fx"), "--seed", "5", "--regions", "2"]) == 0
    assert capsys.readouterr().out.strip().endswith("run.toml")
    assert main(["run", "--config", str(tmp_path / "fx" / "run.toml"), "--out", str(tmp_path / "out")]) == 0


def test_runs_stage_subset_from_manifest(fixture_dir, tmp_path):
    config = load_config(fixture_dir / "run.toml")
    run_stages(config, tmp_path, STAGE_ORDER[:4])
    manifest = run_stages(config, tmp_path, STAGE_ORDER[4:])
    assert list(manifest.stages) == list(STAGE_ORDER)


def test_year_before_reference_period_fails(tmp_path):
    run_toml = generate_fixture(tmp_path / "in", seed=6)
    (tmp_path / "in" / "reference" / "R01_2005.csv").unlink()
    manifest = run_pipeline(load_config(run_toml), tmp_path / "out")
    failed = {(f["stage"], f["region"], f["year"]) for f in manifest.failures}
    assert ("extrapolate", "R01", 2005) in failed
    assert manifest.exit_code == 2


def test_household_exclusion_keeps_trade_balance(tmp_path):
    run_toml = generate_fixture(tmp_path / "in", seed=8)
    run_pipeline(load_config(run_toml), tmp_path / "incl")
    run_toml.write_text(run_toml.read_text().replace('households = "include"', 'households = "exclude"'))
    run_pipeline(load_config(run_toml), tmp_path / "excl")
    incl = read_footprints(tmp_path / "incl" / "footprint" / "footprint.csv")
    excl = read_footprints(tmp_path / "excl" / "footprint" / "footprint.csv")
    for a, b in zip(incl, excl):
        assert np.all(a.pba > b.pba)
        np.testing.assert_allclose(a.pba - b.pba, a.cba - b.cba, rtol=1e-9)
        np.testing.assert_allclose(a.beet, b.beet, rtol=1e-9, atol=1e-9 * a.pba.max())
