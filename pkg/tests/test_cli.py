import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from overlapsens.cli import run
from overlapsens.report import RunConfig, analyze, substream_seed

GOLDEN = Path(__file__).parent / "golden" / "report_schema.json"


def schema_of(obj):
    """Structural skeleton of a JSON document: keys and leaf types, lists by first item."""
    if isinstance(obj, dict):
        return {k: schema_of(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [schema_of(obj[0])] if obj else []
    if isinstance(obj, bool):
        return "bool"
    if isinstance(obj, (int, float)):
        return "number"
    if obj is None:
        return "null"
    return "string"


def rewrite(cfg_path, **changes):
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg.update(changes)
    cfg_path.write_text(yaml.safe_dump(cfg, sort_keys=False))


class TestAnalyze:
    def test_all_blocks_populated(self, study, capsys):
        assert run(["analyze", "--config", str(study)]) == 0
        out = study.parent / "out"
        rep = json.loads((out / "report.json").read_text())
        assert rep["selection_model"]["source"] == "fitted"
        assert set(rep["outcomes"]) == {"Y", "Y2"}
        y = rep["outcomes"]["Y"]
        assert y["estimates"]["bootstrap"]["B"] == 100
        assert len(y["orv"]) == 3 and len(y["mve"]) == 3
        assert y["benchmarks"] and y["contour"]["upper_right_closed"]
        for f in ("contour_Y.csv", "contour_Y.svg", "contour_Y2.csv", "benchmarks.csv"):
            assert (out / f).is_file()
        # summary rows: within-site, weighted, ORV
        assert [r["outcome"] for r in rep["summary_table"]] == ["Y", "Y2"]
        assert "within" in capsys.readouterr().out

    def test_matches_golden_schema(self, study):
        rep = analyze(RunConfig.load(study), write=False)
        assert schema_of(json.loads(json.dumps(rep, default=float))) == json.loads(GOLDEN.read_text())

    def test_byte_identical_reruns(self, study):
        a, b = study.parent / "a", study.parent / "b"
        assert run(["analyze", "--config", str(study), "--out", str(a)]) == 0
        assert run(["analyze", "--config", str(study), "--out", str(b), "--workers", "3"]) == 0
        for f in ("report.json", "contour_Y.svg", "contour_Y.csv", "benchmarks.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_seed_changes_bootstrap_only(self, study):
        a = analyze(RunConfig.load(study), write=False)
        b = analyze(RunConfig.load(study).with_overrides(seed=8), write=False)
        ya, yb = a["outcomes"]["Y"]["estimates"], b["outcomes"]["Y"]["estimates"]
        assert ya["weighted"] == yb["weighted"]
        assert ya["bootstrap"]["ci"] != yb["bootstrap"]["ci"]

    def test_user_weights(self, study):
        out = study.parent / "uw"
        assert run(["analyze", "--config", str(study), "--weights-column", "w", "--out", str(out)]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["selection_model"]["source"] == "user-supplied"

    def test_c_sigma_and_b_star_flags(self, study):
        out = study.parent / "flags"
        assert run(["analyze", "--config", str(study), "--c-sigma", "2,1", "--b-star", "frac:0.5", "--out", str(out)]) == 0
        y = json.loads((out / "report.json").read_text())["outcomes"]["Y"]
        assert [r["c_sigma"] for r in y["orv"]] == [2.0, 1.0]
        tau = y["estimates"]["weighted"]["value"]
        assert y["b_star"]["value"] == pytest.approx(0.5 * tau)

    def test_significance_threshold(self, study):
        out = study.parent / "sig"
        assert run(["analyze", "--config", str(study), "--b-star", "sig", "--out", str(out)]) == 0
        y = json.loads((out / "report.json").read_text())["outcomes"]["Y"]
        assert y["b_star"]["value"] == y["estimates"]["bootstrap"]["b_star_sig"]

    def test_benchmark_csv_matches_report(self, study):
        assert run(["benchmark", "--config", str(study)]) == 0
        out = study.parent / "out"
        table = pd.read_csv(out / "benchmarks.csv")
        rep = json.loads((out / "report.json").read_text())
        first = rep["outcomes"]["Y"]["benchmarks"][0]
        row = table[(table.outcome == "Y") & (table.subgroup == first["name"])].iloc[0]
        assert row.bias == first["bias"]


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert run(["analyze", "--config", str(tmp_path / "nope.yaml")]) == 3

    def test_missing_data_file(self, study):
        (study.parent / "exp.csv").unlink()
        assert run(["analyze", "--config", str(study)]) == 3

    def test_validation(self, study, capsys):
        rewrite(study, covariates=["age", "income"])
        assert run(["analyze", "--config", str(study)]) == 4
        assert "overlapsens.data" in capsys.readouterr().err

    def test_unknown_key(self, study):
        rewrite(study, colour="blue")
        assert run(["analyze", "--config", str(study)]) == 4

    def test_bootstrap_without_seed(self, study):
        cfg = yaml.safe_load(study.read_text())
        del cfg["seed"]
        study.write_text(yaml.safe_dump(cfg))
        assert run(["analyze", "--config", str(study)]) == 4

    def test_separation(self, study):
        exp = pd.read_csv(study.parent / "exp.csv")
        tgt = pd.read_csv(study.parent / "target.csv")
        tgt["age"] = exp["age"].max() + 10 + np.arange(len(tgt))
        tgt.to_csv(study.parent / "target.csv", index=False)
        rewrite(study, covariates=["age"], bootstrap=None)
        assert run(["analyze", "--config", str(study)]) == 5

    def test_degenerate_benchmarks(self, study):
        rewrite(study, subgroups=[{"name": "all", "covariate": "age", "op": ">", "value": 0}])
        assert run(["benchmark", "--config", str(study)]) == 6
        # the full report still succeeds with an empty benchmark table
        assert run(["analyze", "--config", str(study)]) == 0

    def test_argparse(self):
        with pytest.raises(SystemExit) as info:
            run(["frobnicate"])
        assert info.value.code == 2


class TestContour:
    def test_cached_no_gap_fully_shaded(self, tmp_path):
        assert run(["contour", "--tau-hat", "1.5", "--var-w", "2", "--b-star", "1.5", "--out", str(tmp_path), "--resolution", "11"]) == 0
        grid = pd.read_csv(tmp_path / "contour_manual.csv")
        assert len(grid) == 121 and grid.killer.all()
        svg = (tmp_path / "contour_manual.svg").read_text()
        assert "<polygon" in svg and "ORV = 0.00" in svg

    def test_svg_deterministic(self, tmp_path):
        args = ["contour", "--tau-hat", "2", "--var-w", "3", "--resolution", "31"]
        run(args + ["--out", str(tmp_path / "a")])
        run(args + ["--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "contour_manual.svg").read_bytes()
        assert a == (tmp_path / "b" / "contour_manual.svg").read_bytes()
        assert a.startswith(b"<?xml")

    def test_benchmark_overlay(self, study):
        assert run(["contour", "--config", str(study)]) == 0
        rep = json.loads((study.parent / "out" / "report.json").read_text())
        svg = (study.parent / "out" / "contour_Y.svg").read_text()
        for b in rep["outcomes"]["Y"]["benchmarks"]:
            assert f">{b['name']}</text>" in svg

    def test_needs_variance(self, tmp_path):
        assert run(["contour", "--tau-hat", "1", "--out", str(tmp_path)]) == 4


class TestSimulate:
    def test_three_scenarios(self, tmp_path):
        cfg = tmp_path / "sim.yaml"
        cfg.write_text(yaml.safe_dump({"seed": 3, "simulate": {"n_target": 100_000}}))
        assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        out = tmp_path / "o"
        assert sorted(p.name for p in out.glob("hist_*.csv")) == [
            "hist_c_sigma_0.5.csv", "hist_c_sigma_1.csv", "hist_c_sigma_4.csv",
        ]
        rep = json.loads((out / "oracle.json").read_text())
        assert len(rep["scenarios"]) == 3

    def test_closed_form_pass_and_null_scenario(self, tmp_path):
        cfg = tmp_path / "sim.yaml"
        cfg.write_text(yaml.safe_dump({"seed": 1, "simulate": {"n_target": 1_000_000, "scenarios": [
            {"name": "closed", "alpha": 2, "gamma": 2, "p": 0.25},
            {"name": "null", "alpha": 2, "gamma": 0, "p": 0.25},
        ]}}))
        assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "oracle.json").read_text())
        closed, null = rep["scenarios"]
        assert closed["verdict"] == "PASS"
        assert closed["theoretical"]["bias_eq_var_w"] == pytest.approx(0.5)
        assert null["theoretical"]["bias_eq_var_w"] == 0.0
        assert abs(null["empirical"]["gap"]) < 3 * null["mc_se"]["gap"]

    def test_requires_seed(self, tmp_path):
        assert run(["simulate", "--out", str(tmp_path)]) == 4

    def test_named_substreams_are_stable(self):
        assert substream_seed(7, "simulate/a") == substream_seed(7, "simulate/a")
        assert substream_seed(7, "simulate/a") != substream_seed(7, "simulate/b")
        assert substream_seed(7, "bootstrap/Y") != substream_seed(8, "bootstrap/Y")


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "overlapsens.cli", "contour", "--tau-hat", "1", "--var-w", "1", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "ORV = 0.5000" in proc.stdout
