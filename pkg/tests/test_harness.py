from __future__ import annotations

import csv
import json
import shutil

import pytest

from gwlower.cli import main
from gwlower.errors import DomainError
from gwlower.harness import ExperimentPlan, RunRecord, bless, golden_diff, run_plan


def test_plan_roundtrip_and_hash(tmp_path):
    plan = ExperimentPlan("dist", "SPEC-S", {"n": 3, "initial": [1, 0]}, "float", 7, ("csv", "json"))
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan.as_dict()))
    back = ExperimentPlan.load(path)
    assert back == plan
    assert back.plan_hash() == plan.plan_hash()
    assert ExperimentPlan("dist", "SPEC-S", {"n": 4}).plan_hash() != ExperimentPlan("dist", "SPEC-S", {"n": 3}).plan_hash()


def test_plan_validation():
    with pytest.raises(DomainError):
        ExperimentPlan("nope", "SPEC-S")
    with pytest.raises(DomainError):
        ExperimentPlan("dist", None)
    with pytest.raises(DomainError):
        ExperimentPlan("dist", "SPEC-S", emit=("xml",))
    with pytest.raises(DomainError):
        ExperimentPlan.from_dict({"kind": "dist", "spec": "SPEC-S", "colour": 1})


def test_classify_run(tmp_path):
    record = run_plan(ExperimentPlan("classify", "SPEC-S"), tmp_path)
    assert record.ok
    assert record.summary["regime"]["kind"] == "schroeder"
    assert (tmp_path / record.directory / "record.json").exists()
    assert len((tmp_path / "runs.jsonl").read_text().splitlines()) == 1


def test_missing_spec_is_recorded_failure(tmp_path):
    record = run_plan(ExperimentPlan("classify", str(tmp_path / "absent.toml")), tmp_path)
    assert not record.ok
    assert record.error["type"] == "DomainError"


def test_small_box_fails_with_truncation(tmp_path):
    plan = ExperimentPlan("schroder-check", "SPEC-S", {"m": [2], "j": [1, 2], "box": [1, 1]})
    record = run_plan(plan, tmp_path)
    assert not record.ok
    assert record.error["type"] == "TruncationError"
    assert record.error["escaped_mass"] > 0


def test_rerun_hits_cache(tmp_path):
    plan = ExperimentPlan("dist", "SPEC-B", {"n": 3})
    first = run_plan(plan, tmp_path / "a", cache_dir=str(tmp_path / "cache"))
    second = run_plan(plan, tmp_path / "b", cache_dir=str(tmp_path / "cache"))
    assert first.cache["dist"] == "miss"
    assert second.cache["dist"] == "hit"
    assert first.summary == second.summary
    assert (tmp_path / "a" / first.directory / "dist.csv").read_text() == \
        (tmp_path / "b" / second.directory / "dist.csv").read_text()


def _rewrite_csv(path, row, col, fn):
    rows = list(csv.reader(path.open()))
    rows[row][col] = fn(rows[row][col])
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def test_golden_diff_float_drift(tmp_path):
    out, golden = tmp_path / "out", tmp_path / "golden"
    record = run_plan(ExperimentPlan("dist", "SPEC-S", {"n": 3}, "float"), out)
    assert golden_diff(record, golden, out).status == "no baseline"
    assert not golden.exists()
    bless(record, golden, out)
    assert golden_diff(record, golden, out).status == "match"
    _rewrite_csv(golden / record.directory / "dist.csv", 1, 2, lambda v: repr(float(v) + 1e-6))
    report = golden_diff(record, golden, out)
    assert report.status == "drift"
    assert report.drifts[0]["artifact"] == "dist.csv"
    assert report.drifts[0]["abs_diff"] == pytest.approx(1e-6, rel=1e-3)


def test_golden_diff_tolerates_tiny_float_noise(tmp_path):
    out, golden = tmp_path / "out", tmp_path / "golden"
    record = run_plan(ExperimentPlan("dist", "SPEC-S", {"n": 3}, "float"), out)
    bless(record, golden, out)
    _rewrite_csv(golden / record.directory / "dist.csv", 1, 2, lambda v: repr(float(v) + 1e-12))
    assert golden_diff(record, golden, out).status == "match"


def test_golden_diff_support_is_exact(tmp_path):
    out, golden = tmp_path / "out", tmp_path / "golden"
    plan = ExperimentPlan("boettcher-check", "SPEC-B", {"n_max": 2, "n_range": [4, 5], "tilt_levels": [0.0]})
    record = run_plan(plan, out)
    assert "support_n1.csv" in record.artifacts
    bless(record, golden, out)
    target = golden / record.directory / "support_n1.csv"
    target.write_text(target.read_text().rstrip("\n").rsplit("\n", 1)[0] + "\n")  # drop one support point
    report = golden_diff(record, golden, out)
    assert report.status == "drift"
    assert any(d["artifact"] == "support_n1.csv" and d.get("class") == "exact" for d in report.drifts)


def test_record_roundtrip(tmp_path):
    record = run_plan(ExperimentPlan("classify", "SPEC-B"), tmp_path)
    back = RunRecord.load(tmp_path / record.directory / "record.json")
    assert back == record


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["classify", "--spec", "SPEC-S", "--out", out]) == 0
    assert main(["--spec", "SPEC-B", "--out", out, "dist", "--n", "2"]) == 0
    assert main(["dist", "--spec", "SPEC-S", "--out", out, "--n", "3", "--box", "2,2"]) == 1
    payload = capsys.readouterr().out
    assert "TruncationError" in payload


def test_cli_run_plan_file(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"kind": "classify", "spec": "SPEC-C1-FAIL"}))
    assert main(["run", str(plan), "--out", str(tmp_path / "out")]) == 0
    plan.write_text(json.dumps({"kind": "classify", "spec": "SPEC-C1-FAIL", "extra": 1}))
    assert main(["run", str(plan), "--out", str(tmp_path / "out")]) == 2


def test_cli_golden_diff(tmp_path, capsys):
    out, golden = tmp_path / "out", tmp_path / "golden"
    assert main(["dist", "--spec", "SPEC-S", "--out", str(out), "--n", "2", "--mode", "float"]) == 0
    record_path = next(out.glob("dist-*/record.json"))
    assert main(["golden-diff", str(record_path), "--golden", str(golden)]) == 1
    assert main(["golden-diff", str(record_path), "--golden", str(golden), "--bless"]) == 0
    assert main(["golden-diff", str(record_path), "--golden", str(golden)]) == 0
    shutil.rmtree(golden)


def test_cli_verify_all_subset(tmp_path, capsys):
    code = main(["verify-all", "--only", "3", "--out", str(tmp_path)])
    lines = capsys.readouterr().out.strip().splitlines()
    assert code == 0
    assert lines == [lines[0]] and lines[0].startswith("PASS criterion 3:")
    assert (tmp_path / "verify-all" / "summary.txt").exists()
