import csv
import io
import json

import pytest

from raiaudit.analysis import RESULT_COLUMNS
from raiaudit.cli import SCORE_COLUMNS, SUBGROUP_COLUMNS, load_run_config, main
from raiaudit.errors import ConfigError
from raiaudit.matching import ESTIMATE_COLUMNS

AUDIT_FILES = ("baseline.csv", "simulated.csv", "sweep.csv", "subgroups.csv", "report.md")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--output-dir", str(d), "--size", "200", "--seed", "8"]) == 0
    return d


def _config(synth_dir, tmp_path, **changes):
    raw = json.loads((synth_dir / "audit_config.json").read_text())
    for k, v in changes.items():
        if k == "paths":
            raw["paths"].update(v)
        else:
            raw[k] = v
    raw["paths"] = {k: str(synth_dir / v) if k != "output_dir" else str(tmp_path / v)
                    for k, v in raw["paths"].items()}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def _header(path):
    return tuple(next(csv.reader(io.StringIO(path.read_text()))))


def test_synth_writes_files(synth_dir):
    for name in ("cohort.csv", "ground_truth.csv", "survey_aggregate.csv", "survey_micro.csv",
                 "true_rates.csv", "audit_config.json"):
        assert (synth_dir / name).is_file()


def test_validate_ok(synth_dir, capsys):
    assert main(["validate", str(synth_dir / "audit_config.json")]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_missing_cohort_is_config_error(synth_dir, tmp_path, capsys):
    cfg = _config(synth_dir, tmp_path, paths={"cohort": "nope.csv"})
    assert main(["validate", str(cfg)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["kind"] == "config"
    assert "nope.csv" in err["message"]


def test_seed_required(synth_dir, tmp_path):
    raw = json.loads((synth_dir / "audit_config.json").read_text())
    del raw["master_seed"]
    path = synth_dir / "noseed.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError):
        load_run_config(path)
    assert load_run_config(path, {"seed": 4}).master_seed == 4


def test_bad_survey_row_is_data_error(synth_dir, tmp_path, capsys):
    bad = tmp_path / "survey.csv"
    bad.write_text("year,category,sex,race,ethnicity,age_band,n_offenders,n_arrested\n"
                   "2012,property,male,black,non-hispanic,18-25,3,5\n")
    cfg = _config(synth_dir, tmp_path, paths={})
    raw = json.loads(cfg.read_text())
    raw["paths"]["survey_aggregate"] = str(bad)
    cfg.write_text(json.dumps(raw))
    assert main(["validate", str(cfg)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["kind"] == "data"
    assert "row 1" in err["message"]


def test_unknown_sweep_key(synth_dir, tmp_path, capsys):
    cfg = _config(synth_dir, tmp_path, sweep={"gamma_values": [1]})
    assert main(["validate", str(cfg)]) == 1


@pytest.fixture(scope="module")
def audit_run(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("audit")
    assert main(["audit", str(synth_dir / "audit_config.json"), "--output-dir", str(out), "--n-seeds", "2"]) == 0
    return out


def test_audit_writes_schemas(audit_run):
    for name in AUDIT_FILES:
        assert (audit_run / name).is_file()
    assert _header(audit_run / "baseline.csv") == ESTIMATE_COLUMNS
    assert _header(audit_run / "simulated.csv") == RESULT_COLUMNS
    assert _header(audit_run / "sweep.csv") == RESULT_COLUMNS
    assert _header(audit_run / "subgroups.csv") == SUBGROUP_COLUMNS
    report = (audit_run / "report.md").read_text()
    for heading in ("## Baseline", "## Simulated", "## Direction", "## Arrest-rate multipliers",
                    "## Subgroups", "## Sweep summary", "## Rank correlations"):
        assert heading in report


def test_audit_sweep_has_every_point(audit_run):
    rows = list(csv.DictReader(io.StringIO((audit_run / "sweep.csv").read_text())))
    base = [r for r in rows if float(r["multiplier"]) == 1.0]
    # 3 lambdas x 2 omegas x 2 delta_t x 2 rate methods, 2 comparisons, 4 RAIs
    assert len(base) == 3 * 2 * 2 * 2 * 2 * 4
    assert {float(r["multiplier"]) for r in rows} == {1.0, 2.0, 3.0, 5.0}


def test_audit_rerun_identical(audit_run, synth_dir, tmp_path):
    assert main(["audit", str(synth_dir / "audit_config.json"), "--output-dir", str(tmp_path),
                 "--n-seeds", "2", "--threads", "2"]) == 0
    for name in AUDIT_FILES:
        assert (tmp_path / name).read_bytes() == (audit_run / name).read_bytes()


def test_score_command(synth_dir, tmp_path):
    assert main(["score", str(synth_dir / "audit_config.json"), "--output-dir", str(tmp_path)]) == 0
    rows = list(csv.reader(io.StringIO((tmp_path / "scores.csv").read_text())))
    assert tuple(rows[0]) == SCORE_COLUMNS
    assert len(rows) > 100


def _scenario(s):
    return {"s": s, "horizon": 5,
            "locations": [{"name": "a", "resources": 0.6, "p_discovery": 0.3, "p_reporting": 0.1},
                          {"name": "b", "resources": 0.4, "p_discovery": 0.3, "p_reporting": 0.1}]}


def test_simulate_without_feedback_is_constant(tmp_path):
    spec = tmp_path / "scenario.json"
    spec.write_text(json.dumps(_scenario(0.0)))
    assert main(["simulate", str(spec), "--output-dir", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "feedback.csv").read_text())))
    for loc in ("a", "b"):
        values = {r["resources"] for r in rows if r["location"] == loc}
        assert len(values) == 1


def test_simulate_bad_json(tmp_path, capsys):
    spec = tmp_path / "scenario.json"
    spec.write_text("{not json")
    assert main(["simulate", str(spec), "--output-dir", str(tmp_path)]) == 1
    assert json.loads(capsys.readouterr().err)["kind"] == "config"
