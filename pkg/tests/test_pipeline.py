import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import make_dataset
from survaudit.cli import main
from survaudit.config import config_hash, load_config
from survaudit.discrimination import auroc
from survaudit.errors import ConfigError, NumericalError
from survaudit.pipeline import (
    STAGES,
    Run,
    leakage_gate,
    read_artifact_csv,
    run_pipeline,
)
from survaudit.report import SUMMARY_ROWS, emit_report
from survaudit.synth import SyntheticSpec, synth_cohort, write_cohort

ARTIFACTS = ["manifest.json", "pipeline.json", "model.json", "metrics.json", "roc.csv", "pr.csv",
             "calibration.csv", "fairness.csv", "parity.csv", "bootstrap.csv", "ablation.csv",
             "report.md"]


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


def test_all_artifacts_carry_the_hash(small_run):
    files = tree_bytes(small_run.outdir)
    assert set(ARTIFACTS) <= set(files)
    for name, data in files.items():
        text = data.decode()
        if name.endswith(".json"):
            assert json.loads(text)["config_hash"] == small_run.hash
        elif name.endswith(".csv"):
            assert text.splitlines()[0] == f"# config_hash={small_run.hash}"
        else:
            assert small_run.hash in text


def test_double_run_and_threads_are_byte_identical(small_dataset, small_run, tmp_path):
    cfg = load_config(small_dataset)
    again = run_pipeline(cfg, tmp_path / "again", threads=1)
    threaded = run_pipeline(cfg, tmp_path / "threaded", threads=4)
    ref = tree_bytes(small_run.outdir)
    assert tree_bytes(again.outdir) == ref
    assert tree_bytes(threaded.outdir) == ref


def test_relocated_dataset_gives_same_bytes(small_dataset, small_run, tmp_path):
    copy = tmp_path / "copy"
    copy.mkdir()
    for f in small_dataset.parent.glob("*.csv"):
        shutil.copy(f, copy / f.name)
    shutil.copy(small_dataset, copy / "config.json")
    run = run_pipeline(load_config(copy / "config.json"))
    assert tree_bytes(run.outdir) == tree_bytes(small_run.outdir)


def _normalize(files: dict[str, bytes], h: str) -> dict[str, str]:
    out = {}
    for name, data in files.items():
        text = data.decode().replace(h, "HASH")
        if name == "manifest.json":
            d = json.loads(text)
            d.pop("input_sha256")
            text = json.dumps(d, sort_keys=True)
        out[name] = text
    return out


def test_input_row_order_does_not_matter(small_dataset, small_run, tmp_path):
    shuffled = tmp_path / "shuffled"
    shuffled.mkdir()
    rng = np.random.default_rng(0)
    for f in small_dataset.parent.glob("*.csv"):
        df = pd.read_csv(f, comment="#", dtype=str, keep_default_na=False)
        df = df.iloc[rng.permutation(len(df))]
        df.to_csv(shuffled / f.name, index=False)
    shutil.copy(small_dataset, shuffled / "config.json")
    run = run_pipeline(load_config(shuffled / "config.json"))
    assert run.hash != small_run.hash
    assert _normalize(tree_bytes(run.outdir), run.hash) == \
        _normalize(tree_bytes(small_run.outdir), small_run.hash)


def test_single_stage_rerun_is_identical(small_dataset, small_run, tmp_path):
    out = tmp_path / "iso"
    shutil.copytree(small_run.outdir, out)
    run = Run(load_config(small_dataset), out)
    for name in ("evaluate", "audit", "report"):
        STAGES[name](run)
    assert tree_bytes(out) == tree_bytes(small_run.outdir)


def test_leakage_gate(small_dataset, small_run, tmp_path):
    assert leakage_gate(small_run)
    out = tmp_path / "tampered"
    shutil.copytree(small_run.outdir, out)
    d = json.loads((out / "pipeline.json").read_text())
    d["final_standardize"]["mean"][0] += 1e-12
    (out / "pipeline.json").write_text(json.dumps(d))
    assert not leakage_gate(Run(load_config(small_dataset), out))


def test_stale_artifact_rejected(small_dataset, small_run, tmp_path):
    out = tmp_path / "stale"
    shutil.copytree(small_run.outdir, out)
    run = Run(load_config(small_dataset, {"seed": 99}), out)
    with pytest.raises(Exception, match="different config"):
        STAGES["evaluate"](run)


def test_ablation_all_matches_main_metrics(small_run):
    m = json.loads((small_run.outdir / "metrics.json").read_text())
    row = next(r for r in m["ablation"] if r["config"] == "all")
    test = m["evaluation"]["test"]["calibrated"]
    for k in ("auroc", "auprc", "brier", "ece"):
        assert row[k] == test[k]


class TestReport:
    def test_eight_rows_with_ci(self, small_run):
        text = (small_run.outdir / "report.md").read_text()
        for label, _ in SUMMARY_ROWS:
            assert f"| {label} |" in text
        auroc_line = next(line for line in text.splitlines() if line.startswith("| AUROC |"))
        assert "—" not in auroc_line

    def test_without_bootstrap_shows_dash(self, small_run):
        m = json.loads((small_run.outdir / "metrics.json").read_text())
        m.pop("bootstrap")
        text = emit_report(m, None, "h")
        rows = [line for line in text.splitlines()
                if any(line.startswith(f"| {lab} |") for lab, _ in SUMMARY_ROWS)]
        assert len(rows) == 8 and all(r.endswith("| — |") for r in rows)

    def test_missing_sections(self):
        text = emit_report({}, None, "h")
        assert "not available" in text
        assert "No metrics available" in emit_report(None, None, "h")

    def test_idempotent(self, small_run):
        before = (small_run.outdir / "report.md").read_bytes()
        STAGES["report"](small_run)
        assert (small_run.outdir / "report.md").read_bytes() == before


class TestCli:
    def test_missing_input_is_config_error(self, tmp_path, capsys):
        cfg = {"schema_version": 1, "seed": 0, "output_dir": "out",
               "inputs": {k: f"{k}.csv" for k in ("clinical", "expr", "cna", "sample_map")}}
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(path)]) == 2
        assert not (tmp_path / "out").exists()
        assert "not found" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert main(["split", "--config", str(path)]) == 2
        path.write_text(json.dumps({"seed": 0, "bogus": 1}))
        assert main(["split", "--config", str(path)]) == 2

    def test_data_error_names_stage(self, tmp_path, capsys):
        path = make_dataset(tmp_path, n=120)
        clin = pd.read_csv(tmp_path / "clinical.csv", comment="#")
        clin.loc[0, "time_months"] = -1.0
        clin.to_csv(tmp_path / "clinical.csv", index=False)
        assert main(["run", "--config", str(path)]) == 3
        assert "stage 'split'" in capsys.readouterr().err

    def test_numerical_error_exit_code(self, small_dataset, tmp_path, monkeypatch):
        def boom(run):
            raise NumericalError("diverged")

        monkeypatch.setitem(STAGES, "train", boom)
        out = tmp_path / "num"
        assert main(["run", "--config", str(small_dataset), "--out", str(out)]) == 4

    def test_stage_commands_and_leakage(self, small_dataset, tmp_path):
        out = str(tmp_path / "stages")
        for stage in ("split", "prepare", "train", "calibrate", "evaluate", "report"):
            assert main([stage, "--config", str(small_dataset), "--out", out]) == 0
        assert main(["leakage", "--config", str(small_dataset), "--out", out]) == 0
        assert "Calibration Slope" in (tmp_path / "stages" / "report.md").read_text()

    def test_seed_flag_overrides_config(self, small_dataset):
        a = load_config(small_dataset)
        b = load_config(small_dataset, {"seed": 5})
        assert b["seed"] == 5 and config_hash(a) != config_hash(b)

    def test_console_script_synth_is_deterministic(self, tmp_path):
        for d in ("a", "b"):
            subprocess.run([sys.executable, "-m", "survaudit.cli", "synth", "--out",
                            str(tmp_path / d), "--n", "200", "--seed", "3"], check=True)
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a == b and "config.json" in a

    def test_unknown_schema_version(self, tmp_path):
        with pytest.raises(ConfigError):
            path = tmp_path / "c.json"
            path.write_text(json.dumps({"schema_version": 9, "seed": 0}))
            load_config(path)


class TestSynth:
    def _labels(self, cohort):
        c = cohort.clinical.merge(cohort.truth, on="patient_id")
        defined = (c["time_months"] >= 60) | (c["event"] == 1)
        y = ((c["event"] == 1) & (c["time_months"] <= 60)).astype(float)[defined]
        return y.to_numpy(), c["eta_true"][defined].to_numpy()

    def test_strong_single_coefficient(self):
        y, eta = self._labels(synth_cohort(SyntheticSpec(n=1000, signal=(("expr", 0, 2.5),))))
        assert auroc(y, eta) >= 0.9

    def test_no_signal_model_is_null(self, tmp_path):
        write_cohort(synth_cohort(SyntheticSpec(n=1000, signal=(), seed=2)), tmp_path)
        cfg = json.loads(make_dataset(tmp_path / "tmp", n=50).read_text())
        cfg["robustness"] = {"B": 10, "ablation": [], "modalities": []}
        cfg["features"] = {"expr": {"tsvd_k": 10}, "cna": {"tsvd_k": 10}}
        (tmp_path / "config.json").write_text(json.dumps(cfg))
        run = run_pipeline(load_config(tmp_path / "config.json"),
                           stages=["split", "prepare", "train", "calibrate", "evaluate"])
        pred = read_artifact_csv(run.outdir / "predictions.csv")
        held = pred[(pred["split"] != "train") & pred["y60"].notna()]
        assert abs(auroc(held["y60"], held["eta"]) - 0.5) <= 0.05

    def test_prevalence_near_twenty_percent(self):
        y, _ = self._labels(synth_cohort(SyntheticSpec()))
        assert 0.15 <= y.mean() <= 0.25


def test_ablation_with_expression_only_signal(tmp_path):
    spec = SyntheticSpec(n=1500, p_expr=10, signal=(("expr", 0, 2.5),), seed=1)
    write_cohort(synth_cohort(spec), tmp_path)
    cfg = json.loads(make_dataset(tmp_path / "tmp", n=50).read_text())
    cfg["robustness"] = {"B": 10, "modalities": []}
    cfg["features"] = {"expr": {"tsvd_k": 10}, "cna": {"tsvd_k": 10}}
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    run = run_pipeline(load_config(tmp_path / "config.json"),
                       stages=["split", "prepare", "train", "calibrate", "ablate"])
    rows = {r["config"]: r for r in json.loads((run.outdir / "metrics.json").read_text())["ablation"]}
    assert list(rows) == ["clinical", "clinical+expr", "clinical+cna", "all"]
    assert abs(rows["clinical"]["auroc"] - 0.5) <= 0.05
    assert rows["clinical+expr"]["auroc"] >= 0.85


def test_column_map_reads_foreign_headers(small_dataset, small_run, tmp_path):
    renames = {"clinical": {"patient_id": "PATIENT_ID", "time_months": "OS_MONTHS",
                            "event": "OS_STATUS"},
               "sample_map": {"sample_id": "SAMPLE_ID", "patient_id": "PATIENT_ID"},
               "expr": {"gene": "Hugo_Symbol"}}
    foreign = tmp_path / "foreign"
    foreign.mkdir()
    for f in small_dataset.parent.glob("*.csv"):
        df = pd.read_csv(f, comment="#", dtype=str, keep_default_na=False)
        df.rename(columns=renames.get(f.stem, {})).to_csv(foreign / f.name, index=False)
    cfg = json.loads(small_dataset.read_text())
    cfg["column_map"] = {k: {v: s for s, v in m.items()} for k, m in renames.items()}
    (foreign / "config.json").write_text(json.dumps(cfg))
    run = run_pipeline(load_config(foreign / "config.json"))
    assert _normalize(tree_bytes(run.outdir), run.hash) == \
        _normalize(tree_bytes(small_run.outdir), small_run.hash)


def test_column_map_validation(small_dataset):
    with pytest.raises(ConfigError):
        load_config(small_dataset, {"column_map": {"clinical": {"a": 1}}})
    with pytest.raises(ConfigError):
        load_config(small_dataset, {"column_map": {"other": {}}})
