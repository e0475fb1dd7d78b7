"""Harness tests: comparison policy, config validation, reports and the CLI."""

import copy
import csv
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qssep.harness import (
    ComparisonReport,
    ConfigError,
    Estimate,
    ExperimentConfig,
    Policy,
    compare,
    emit_report,
    load_config,
    run_experiment,
    validate,
)
from qssep.harness.cli import main
from qssep.harness.compare import record
from qssep.harness.report import CSV_COLUMNS, render_csv

SMALL_VERIFY = {
    "name": "tiny_verify", "kind": "verify", "seed": 5,
    "ensemble": {"variant": "open", "N": 12, "dt": 0.9, "T": 0.02, "integrator": "brickwork",
                 "trajectories": 24,
                 "initial": {"kind": "linear", "a": 0.3, "b": 0.7},
                 "boundary": {"n_a": 0.0, "n_b": 1.0},
                 "observables": [{"type": "moment", "name": "C1", "probes": [0.25, 0.5, 0.75]}]},
    "pde": {"M": 32, "method": "rk4"},
    "tolerance": {"z_cap": 3.0, "bias": 0.05},
}

NC_SMALL = {"name": "tiny_nc", "kind": "nc", "seed": 1, "params": {"list_n": 4, "catalan_n": 6}}

# deterministic drift rows with a cap far below rounding error
FAILING_SOLVE = {"name": "tiny_conservation", "kind": "solve", "task": "conservation", "seed": 3,
                 "params": {"M": 16, "T": 0.02, "variants": ["periodic"],
                            "initial": {"kind": "fourier", "const": 0.5, "cos": [[2, 0.3]]},
                            "caps": {"drift": 1e-300}}}


def _write(path, data):
    path.write_text(json.dumps(data))
    return path


# ---------------------------------------------------------------------------
# compare


def test_compare_stochastic_within_z_passes():
    row = compare(Estimate(0.500, 0.010), Estimate(0.495), Policy(z_cap=3.0))
    assert row.mode == "z"
    assert row.score == pytest.approx(0.5)
    assert row.verdict == "pass"


def test_compare_stochastic_outside_z_fails():
    row = compare(Estimate(0.500, 0.010), Estimate(0.560), Policy(z_cap=3.0))
    assert row.score == pytest.approx(6.0)
    assert row.verdict == "fail"


def test_compare_bias_budget_widens_tolerance():
    row = compare(Estimate(0.500, 0.010), Estimate(0.560), Policy(z_cap=3.0, bias=0.04))
    assert row.tolerance == pytest.approx(0.07)
    assert row.verdict == "pass"


def test_compare_combined_adds_variances():
    row = compare(Estimate(1.0, 0.03), Estimate(1.1, 0.04), Policy(z_cap=3.0))
    assert row.mode == "combined"
    assert row.score == pytest.approx(0.1 / 0.05)


def test_compare_exact_relative():
    row = compare(Estimate(1.0000), Estimate(1.0001), Policy(rel_cap=1e-3))
    assert row.mode == "rel"
    assert row.verdict == "pass"
    assert compare(Estimate(1.0), Estimate(1.01), Policy(rel_cap=1e-3)).verdict == "fail"


def test_compare_exact_absolute_takes_precedence():
    row = compare(Estimate(0.0), Estimate(1e-11), Policy(rel_cap=1e-3, abs_cap=1e-10))
    assert row.mode == "abs"
    assert row.verdict == "pass"


def test_zero_standard_error_is_degenerate():
    row = compare(Estimate(0.5, 0.0), Estimate(0.5), Policy())
    assert row.mode == "degenerate"
    assert row.verdict == "fail"


def test_record_rows_do_not_gate():
    row = record("C1", Estimate(0.3, 0.01), x=0.5)
    assert row.passed


def test_policy_rejects_bad_tolerances():
    with pytest.raises(ValueError):
        Policy(z_cap=0.0)
    with pytest.raises(ValueError):
        Policy(bias=-1.0)
    with pytest.raises(ValueError):
        Estimate(1.0, -0.1)


@given(st.floats(-1, 1), st.floats(1e-4, 1), st.floats(-1, 1), st.floats(0.5, 5))
def test_z_verdict_matches_score(a, err, b, z):
    row = compare(Estimate(a, err), Estimate(b), Policy(z_cap=z))
    assert row.score == pytest.approx(abs(a - b) / err)
    assert (row.verdict == "pass") == (abs(a - b) <= z * err)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_compare_is_symmetric_in_exact_mode(a, b):
    p = Policy(rel_cap=1e-2)
    assert compare(Estimate(a), Estimate(b), p).verdict == compare(Estimate(b), Estimate(a), p).verdict


# ---------------------------------------------------------------------------
# configs


def test_zero_trajectories_names_the_field():
    data = copy.deepcopy(SMALL_VERIFY)
    data["ensemble"]["trajectories"] = 0
    with pytest.raises(ConfigError, match=r"ensemble\.trajectories"):
        validate(data)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError, match="kind"):
        ExperimentConfig.from_dict({**NC_SMALL, "kind": "bogus"})


def test_bad_tolerance_reported_under_tolerance():
    with pytest.raises(ConfigError, match="tolerance"):
        ExperimentConfig.from_dict({**NC_SMALL, "tolerance": {"z_cap": -1.0}})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.json"))
    assert len(paths) == 15
    for path in paths:
        assert load_config(path).name == path.stem


def test_config_hash_depends_on_seed_only_through_content():
    cfg = ExperimentConfig.from_dict(NC_SMALL)
    assert cfg.config_hash == ExperimentConfig.from_dict(copy.deepcopy(NC_SMALL)).config_hash
    assert cfg.with_seed(2).config_hash != cfg.config_hash


# ---------------------------------------------------------------------------
# reports


def test_empty_report_writes_header_only_csv(tmp_path):
    report = ComparisonReport("empty", "nc", "", [], {}, "0" * 64, 0)
    paths = emit_report(report, tmp_path, ("csv",))
    assert paths["csv"].read_text() == ",".join(CSV_COLUMNS) + "\n"
    assert report.passed


def test_emit_rejects_unknown_format(tmp_path):
    report = ComparisonReport("empty", "nc", "", [], {}, "0" * 64, 0)
    with pytest.raises(ValueError):
        emit_report(report, tmp_path, ("xml",))


def test_nc_report_lists_partitions_and_duals():
    report = run_experiment(ExperimentConfig.from_dict(NC_SMALL))
    assert report.verdict == "pass"
    listed = [r for r in report.rows if r.observable == "listed_count"]
    assert listed and listed[0].a == 14
    assert len(report.details["partitions"]) == 14
    assert len(report.details["duals"]) == 14
    assert [[0], [1], [2], [3]] in report.details["partitions"]


def test_report_embeds_config_hash(tmp_path):
    cfg = ExperimentConfig.from_dict(NC_SMALL)
    report = run_experiment(cfg)
    paths = emit_report(report, tmp_path)
    stored = json.loads(paths["json"].read_text())
    assert stored["config_hash"] == cfg.config_hash
    assert cfg.config_hash in paths["plotdata"].read_text()


def test_same_seed_gives_identical_csv():
    cfg = ExperimentConfig.from_dict(SMALL_VERIFY)
    a = render_csv(run_experiment(cfg, reproducible=True))
    b = render_csv(run_experiment(cfg, reproducible=True))
    assert a == b


def test_verify_run_produces_profile_series(tmp_path):
    report = run_experiment(ExperimentConfig.from_dict(SMALL_VERIFY), reproducible=True)
    names = {s.name for s in report.series}
    assert {"nbar", "C1_mc", "C1_pde"} <= names
    text = emit_report(report, tmp_path)["plotdata"].read_text()
    assert "# series nbar" in text
    rows = list(csv.DictReader(emit_report(report, tmp_path, ("csv",))["csv"].open()))
    assert any(r["observable"].startswith("C1") for r in rows)
    for r in rows:
        assert not r["a"].startswith("np.")


# ---------------------------------------------------------------------------
# CLI


def test_cli_pass_exit_zero(tmp_path, capsys):
    cfg = _write(tmp_path / "nc.json", NC_SMALL)
    assert main(["nc", "--config", str(cfg), "--out-dir", str(tmp_path / "out"), "--quiet"]) == 0
    assert "tiny_nc: pass" in capsys.readouterr().out
    assert (tmp_path / "out" / "tiny_nc.csv").exists()


def test_cli_fail_exit_one(tmp_path):
    cfg = _write(tmp_path / "solve.json", FAILING_SOLVE)
    assert main(["solve", "--config", str(cfg), "--out-dir", str(tmp_path), "--quiet"]) == 1


def test_cli_config_error_exit_two(tmp_path, capsys):
    data = copy.deepcopy(SMALL_VERIFY)
    data["ensemble"]["trajectories"] = 0
    cfg = _write(tmp_path / "v.json", data)
    assert main(["verify", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "ensemble.trajectories" in capsys.readouterr().err


def test_cli_command_kind_mismatch(tmp_path, capsys):
    cfg = _write(tmp_path / "nc.json", NC_SMALL)
    assert main(["verify", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "kind" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert main(["nc", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)]) == 2


def test_cli_seed_override(tmp_path):
    cfg = _write(tmp_path / "nc.json", NC_SMALL)
    out = tmp_path / "out"
    assert main(["nc", "--config", str(cfg), "--out-dir", str(out), "--seed", "99", "--quiet"]) == 0
    assert json.loads((out / "tiny_nc.json").read_text())["seed"] == 99


def test_cli_out_dir_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path / "nc.json", NC_SMALL)
    target = tmp_path / "env_out"
    monkeypatch.setenv("QSSEP_OUT_DIR", str(target))
    monkeypatch.chdir(tmp_path)
    assert main(["nc", "--config", str(cfg), "--quiet"]) == 0
    assert (target / "tiny_nc.json").exists()


def test_cli_report_rerun_reproduces(tmp_path, capsys):
    cfg = _write(tmp_path / "v.json", SMALL_VERIFY)
    out = tmp_path / "out"
    code = main(["verify", "--config", str(cfg), "--out-dir", str(out), "--reproducible", "--quiet"])
    stored = out / "tiny_verify.json"
    assert code in (0, 1) and stored.exists()
    first_csv = (out / "tiny_verify.csv").read_bytes()
    rerun = tmp_path / "rerun"
    assert main(["report", "--config", str(stored), "--out-dir", str(rerun)]) == code
    assert "reproduces" in capsys.readouterr().out
    assert (rerun / "tiny_verify.csv").read_bytes() == first_csv


def test_cli_thread_count_does_not_change_output(tmp_path):
    cfg = _write(tmp_path / "v.json", SMALL_VERIFY)
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        main(["verify", "--config", str(cfg), "--out-dir", str(out), "--reproducible",
              "--threads", threads, "--quiet"])
        outs.append((out / "tiny_verify.csv").read_bytes())
    assert outs[0] == outs[1]


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32), min_size=1, max_size=6))
def test_csv_round_trips_values(values):
    rows = [record(f"v{i}", Estimate(v, 0.0)) for i, v in enumerate(values)]
    report = ComparisonReport("prop", "simulate", "", rows, {}, "0" * 64, 0)
    parsed = list(csv.DictReader(render_csv(report).splitlines()))
    assert [float(r["a"]) for r in parsed] == [float(v) for v in values]
    assert all(math.isnan(float(r["x"])) for r in parsed)
