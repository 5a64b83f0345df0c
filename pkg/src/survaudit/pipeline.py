"""Stage orchestration.

Each stage reads the raw inputs and/or artifacts persisted by earlier stages
in the output directory and writes its own artifacts there, so any stage can
be rerun on its own. All randomness derives from the config seed through
named sub-seeds.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from . import calibration as cal
from .cohort import (SurvivalRecord, build_manifest, build_outcomes, ids_by_split,
                     label_vector, stratified_split)
from .config import config_hash
from .discrimination import auroc, average_precision, pr_curve, roc_curve
from .errors import ConfigError, DataValidationError
from .fairness import audit as run_audit, spec_from_config, assign_subgroups, UNKNOWN
from .features import FeatureMatrix, FeaturePipeline, FilterConfig, aggregate_samples, fit_pipeline
from .io import canonical_json, file_sha256, read_json, write_csv, write_json
from .models.cox import fixed_horizon_risk
from .models.coxnet import CoxNetModel, fit_coxnet
from .models.gbcox import GbcoxModel, TreeParams, fit_gbcox
from .robustness import MaskingScenario, ablation_run, bootstrap_ci, mask_modality
from .rng import subseed

logger = logging.getLogger(__name__)

OUTCOME_COLUMNS = ("patient_id", "time_months", "event")


# ----------------------------------------------------------------------------
# input / artifact readers
# ----------------------------------------------------------------------------

def _source_names(columns: Mapping[str, str] | None, names) -> dict[str, str]:
    """Schema name -> name in the file, given a ``{source: schema}`` rename map."""
    back = {v: k for k, v in (columns or {}).items()}
    return {n: back.get(n, n) for n in names}


def _read_mapped(path, columns, str_cols, **kw) -> pd.DataFrame:
    src = _source_names(columns, str_cols)
    df = pd.read_csv(path, dtype={src[c]: str for c in str_cols}, **kw)
    return df.rename(columns=dict(columns or {}))


def read_clinical(path, columns: Mapping[str, str] | None = None) -> pd.DataFrame:
    df = _read_mapped(path, columns, ["patient_id"], float_precision="round_trip")
    for col in OUTCOME_COLUMNS:
        if col not in df.columns:
            raise DataValidationError(f"{path}: missing required column {col!r}")
    return df


def read_long(path, columns: Mapping[str, str] | None = None) -> pd.DataFrame:
    df = _read_mapped(path, columns, ["sample_id", "gene"], float_precision="round_trip")
    missing = {"sample_id", "gene", "value"} - set(df.columns)
    if missing:
        raise DataValidationError(f"{path}: missing columns {sorted(missing)}")
    return df


def read_sample_map(path, columns: Mapping[str, str] | None = None) -> dict[str, str]:
    df = _read_mapped(path, columns, ["sample_id", "patient_id"])
    missing = {"sample_id", "patient_id"} - set(df.columns)
    if missing:
        raise DataValidationError(f"{path}: missing columns {sorted(missing)}")
    out: dict[str, str] = {}
    for s, p in zip(df["sample_id"], df["patient_id"]):
        if s in out and out[s] != p:
            raise DataValidationError(f"sample {s!r} maps to both {out[s]!r} and {p!r}")
        out[s] = p
    return out


def read_input(cfg: dict, key: str):
    reader = {"clinical": read_clinical, "expr": read_long, "cna": read_long,
              "sample_map": read_sample_map}[key]
    return reader(cfg["inputs"][key], cfg["column_map"].get(key))


def read_artifact_csv(path, **kw) -> pd.DataFrame:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    skip = 1 if first.startswith("# config_hash=") else 0
    return pd.read_csv(path, skiprows=skip, float_precision="round_trip", **kw)


# ----------------------------------------------------------------------------
# run context
# ----------------------------------------------------------------------------

@dataclass
class Run:
    cfg: dict
    outdir: Path
    threads: int = 1

    def __post_init__(self):
        self.outdir = Path(self.outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(self.cfg)

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    @property
    def horizon(self) -> float:
        return float(self.cfg["horizon_months"])

    def path(self, name: str) -> Path:
        return self.outdir / name

    def write_json(self, name: str, obj: dict) -> None:
        write_json(self.path(name), {"config_hash": self.hash, **obj})

    def read_json(self, name: str) -> dict:
        p = self.path(name)
        if not p.is_file():
            raise DataValidationError(f"missing artifact {name}; run the producing stage first")
        d = read_json(p)
        if d.get("config_hash") != self.hash:
            raise DataValidationError(f"{name} was produced with a different config")
        return d

    def write_csv(self, name: str, header, rows) -> None:
        write_csv(self.path(name), header, rows, config_hash=self.hash)

    def update_metrics(self, section: str, value) -> None:
        p = self.path("metrics.json")
        d = read_json(p) if p.is_file() else {}
        if d.get("config_hash") != self.hash:
            d = {}
        d["config_hash"] = self.hash
        d[section] = value
        write_json(p, d)

    # cached raw inputs
    def clinical(self) -> pd.DataFrame:
        if not hasattr(self, "_clinical"):
            self._clinical = read_input(self.cfg, "clinical")
        return self._clinical

    def cohort(self) -> tuple[list[SurvivalRecord], dict[str, str]]:
        df = read_artifact_csv(self.path("splits.csv"), dtype={"patient_id": str})
        assignment = dict(zip(df["patient_id"], df["split"]))
        records, _ = build_outcomes(self.clinical())
        records = [r for r in records if r.patient_id in assignment]
        return records, assignment

    def features(self) -> FeatureMatrix:
        pipe = self.read_json("pipeline.json")
        df = read_artifact_csv(self.path("features.csv"), dtype={"patient_id": str})
        cols = list(pipe["columns"])
        return FeatureMatrix(list(df["patient_id"]), cols, list(pipe["blocks"]),
                             df[cols].to_numpy(dtype=float))


def _outcome_arrays(records, ids):
    by_id = {r.patient_id: r for r in records}
    recs = [by_id[i] for i in ids]
    return (np.array([r.time_months for r in recs]), np.array([r.event for r in recs], float),
            recs)


# ----------------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------------

def stage_split(run: Run) -> dict:
    """Outcomes, complete-case cohort, stratified split and manifest."""
    cfg = run.cfg
    clinical = run.clinical()
    mapping = read_input(cfg, "sample_map")
    records, exclusions = build_outcomes(clinical)
    present = {}
    for block in ("expr", "cna"):
        samples = set(read_input(cfg, block)["sample_id"].astype(str))
        unmapped = sorted(samples - set(mapping))
        if unmapped:
            raise DataValidationError(f"{block}: unmapped sample ids {unmapped[:20]}")
        present[block] = {mapping[s] for s in samples}
    complete = [r for r in records
                if r.patient_id in present["expr"] and r.patient_id in present["cna"]]
    exclusions["missing_modality"] = len(records) - len(complete)
    assignment = stratified_split(complete, cfg["split"]["fractions"], subseed(run.seed, "split"))
    hashes = {k: file_sha256(cfg["inputs"][k]) for k in ("clinical", "expr", "cna", "sample_map")}
    manifest = build_manifest(complete, assignment, exclusions, run.seed, hashes, run.horizon)
    manifest["split_fractions"] = list(cfg["split"]["fractions"])
    run.write_json("manifest.json", manifest)
    run.write_csv("splits.csv", ["patient_id", "split"], sorted(assignment.items()))
    return manifest


def _clinical_columns(cfg: dict, clinical: pd.DataFrame) -> tuple[list[str], list[str]]:
    fcfg = cfg["features"]
    reserved = set(OUTCOME_COLUMNS) | set(fcfg.get("exclude") or [])
    numeric, categorical = fcfg["clinical_numeric"], fcfg["clinical_categorical"]
    rest = [c for c in clinical.columns if c not in reserved]
    if numeric is None:
        numeric = [c for c in rest if pd.api.types.is_numeric_dtype(clinical[c])
                   and c not in (categorical or [])]
    if categorical is None:
        categorical = [c for c in rest if c not in numeric]
    for c in list(numeric) + list(categorical):
        if c not in clinical.columns:
            raise ConfigError(f"clinical column {c!r} not found")
    return sorted(numeric), sorted(categorical)


def _aggregated_omics(run: Run, ids) -> dict[str, pd.DataFrame]:
    mapping = read_input(run.cfg, "sample_map")
    keep = set(ids)
    out = {}
    for block in ("expr", "cna"):
        long = aggregate_samples(read_input(run.cfg, block), mapping,
                                 run.cfg["features"]["aggregation"])
        out[block] = long[long["patient_id"].isin(keep)].reset_index(drop=True)
    return out


def fit_preprocessing(run: Run, clinical: pd.DataFrame, omics: dict, train_ids) -> FeaturePipeline:
    fcfg = run.cfg["features"]
    numeric, categorical = _clinical_columns(run.cfg, clinical)
    filters = {b: FilterConfig(fcfg[b]["tau_cov"], fcfg[b]["tau_var"], fcfg[b]["top_k"])
               for b in ("expr", "cna")}
    tsvd = {b: fcfg[b]["tsvd_k"] for b in ("expr", "cna")}
    return fit_pipeline(clinical, omics, train_ids, numeric, categorical, filters, tsvd,
                        subseed(run.seed, "features"))


def stage_prepare(run: Run) -> FeatureMatrix:
    """Fit preprocessing on training patients; persist state and the transformed matrix."""
    records, assignment = run.cohort()
    ids = sorted(assignment)
    train_ids = ids_by_split(assignment)["train"]
    clinical = run.clinical()
    clinical = clinical[clinical["patient_id"].isin(set(ids))].drop_duplicates("patient_id")
    omics = _aggregated_omics(run, ids)
    pipe = fit_preprocessing(run, clinical, omics, train_ids)
    run.write_json("pipeline.json", pipe.to_json())
    X = pipe.transform(clinical, omics, ids)
    rows = ([pid, assignment[pid], *row] for pid, row in zip(X.ids, X.values.tolist()))
    run.write_csv("features.csv", ["patient_id", "split", *X.columns], rows)
    return X


def leakage_gate(run: Run) -> bool:
    """Refit preprocessing on training rows only and compare with the persisted state."""
    records, assignment = run.cohort()
    train_ids = ids_by_split(assignment)["train"]
    clinical = run.clinical()
    clinical = clinical[clinical["patient_id"].isin(set(train_ids))].drop_duplicates("patient_id")
    omics = _aggregated_omics(run, train_ids)
    refit = fit_preprocessing(run, clinical, omics, train_ids)
    persisted = run.read_json("pipeline.json")
    persisted.pop("config_hash")
    return canonical_json(refit.to_json()) == canonical_json(persisted)


# --- models -----------------------------------------------------------------

def model_grid(cfg: dict) -> list[dict]:
    m = cfg["model"]
    if m["type"] == "coxnet":
        g = m["coxnet"]
        return [{"lambda": float(lam), "alpha": float(a)} for lam in g["lambda"] for a in g["alpha"]]
    g = m["gbcox"]
    keys = ["max_depth", "learning_rate", "reg_lambda", "gamma", "min_child_weight",
            "subsample", "n_rounds"]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(g[k] for k in keys))]


def fit_model(run: Run, params: dict, X: np.ndarray, times, events, columns):
    if run.cfg["model"]["type"] == "coxnet":
        g = run.cfg["model"]["coxnet"]
        return fit_coxnet(X, times, events, params["lambda"], params["alpha"], tol=g["tol"],
                          max_iter=g["max_iter"], columns=columns)
    return fit_gbcox(X, times, events, TreeParams(**params), seed=subseed(run.seed, "gbcox"),
                     columns=columns)


def load_model(d: dict):
    return CoxNetModel.from_json(d) if d["kind"] == "coxnet" else GbcoxModel.from_json(d)


def _tie_key(kind: str, params: dict):
    # prefer larger lambda (CoxNet) or shallower trees (GBCox) on equal validation AUROC
    return params["lambda"] if kind == "coxnet" else -params["max_depth"]


def _defined(records, ids, horizon):
    _, _, recs = _outcome_arrays(records, ids)
    y = label_vector(recs, horizon)
    m = ~np.isnan(y)
    return m, y[m]


def stage_train(run: Run):
    """Grid search on the validation split (60-month AUROC of the linear predictor)."""
    records, assignment = run.cohort()
    X = run.features()
    split_ids = ids_by_split(assignment)
    Xtr = X.rows(split_ids["train"])
    Xva = X.rows(split_ids["validation"])
    times, events, _ = _outcome_arrays(records, Xtr.ids)
    vmask, yva = _defined(records, Xva.ids, run.horizon)
    kind = run.cfg["model"]["type"]
    results = []
    best = None
    for params in model_grid(run.cfg):
        model = fit_model(run, params, Xtr.values, times, events, X.columns)
        score = auroc(yva, model.predict_eta(Xva.values)[vmask])
        results.append({"params": params, "validation_auroc": score})
        key = (score, _tie_key(kind, params))
        if best is None or key > best[0]:
            best = (key, params, model)
    _, params, model = best
    run.write_json("model.json", {"model": model.to_json(), "selected": params,
                                  "selection": {"criterion": "validation_auroc_60",
                                                "grid": results}})
    return model


def stage_calibrate(run: Run):
    """Fit the isotonic map from raw 60-month risk to outcome on the validation split."""
    records, assignment = run.cohort()
    X = run.features()
    model = load_model(run.read_json("model.json")["model"])
    ccfg = run.cfg["calibration"]
    iso = None
    if ccfg["isotonic"]:
        Xva = X.rows(ids_by_split(assignment)["validation"])
        m, y = _defined(records, Xva.ids, run.horizon)
        p = fixed_horizon_risk(model.predict_eta(Xva.values), model.baseline, run.horizon)[m]
        iso = cal.fit_isotonic(p, y, interpolate=ccfg["interpolate"])
    run.write_json("calibrator.json", {"isotonic": None if iso is None else iso.to_json()})
    return iso


def load_calibrator(run: Run) -> Callable[[np.ndarray], np.ndarray]:
    d = run.read_json("calibrator.json")["isotonic"]
    if d is None:
        return lambda p: np.asarray(p, float)
    return cal.IsotonicMap.from_json(d)


def metric_bundle(y, p, bins: int) -> dict:
    rep = cal.calibration_report(y, p, bins)
    out = {"n": rep.n, "auroc": auroc(y, p), "auprc": average_precision(y, p)}
    out.update({k: v for k, v in rep.to_json().items() if k != "curve"})
    return out


def stage_evaluate(run: Run) -> dict:
    records, assignment = run.cohort()
    X = run.features()
    model = load_model(run.read_json("model.json")["model"])
    calibrate = load_calibrator(run)
    bins = run.cfg["calibration"]["bins"]
    times, events, recs = _outcome_arrays(records, X.ids)
    y = label_vector(recs, run.horizon)
    eta = model.predict_eta(X.values)
    raw = fixed_horizon_risk(eta, model.baseline, run.horizon)
    prob = calibrate(raw)
    splits = np.array([assignment[i] for i in X.ids])
    run.write_csv("predictions.csv",
                  ["patient_id", "split", "time_months", "event", "y60", "eta", "p60_raw", "p60"],
                  zip(X.ids, splits, times, events.astype(int),
                      [None if np.isnan(v) else int(v) for v in y], eta, raw, prob))

    out = {"model": run.cfg["model"]["type"],
           "h0_horizon": model.baseline(run.horizon),
           "calibrated": bool(run.cfg["calibration"]["isotonic"])}
    for split in ("validation", "test"):
        m = (splits == split) & ~np.isnan(y)
        out[split] = {"raw": metric_bundle(y[m], raw[m], bins),
                      "calibrated": metric_bundle(y[m], prob[m], bins),
                      "eta_auroc": auroc(y[m], eta[m])}
    run.update_metrics("evaluation", out)

    m = (splits == "test") & ~np.isnan(y)
    roc = roc_curve(y[m], prob[m])
    run.write_csv("roc.csv", ["threshold", "fpr", "tpr"],
                  zip([None if np.isinf(t) else t for t in roc.thresholds], roc.fpr, roc.tpr))
    pr = pr_curve(y[m], prob[m])
    run.write_csv("pr.csv", ["threshold", "recall", "precision"],
                  zip(pr.thresholds, pr.recall, pr.precision))
    rows = []
    for label, p in (("calibrated", prob[m]), ("raw", raw[m])):
        for b, pt in enumerate(cal.calibration_curve_quantile(y[m], p, bins), start=1):
            rows.append((label, b, pt.mean_predicted, pt.observed_rate, pt.count))
    run.write_csv("calibration.csv",
                  ["probabilities", "bin", "mean_predicted", "observed_rate", "count"], rows)
    return out


def _test_predictions(run: Run):
    df = read_artifact_csv(run.path("predictions.csv"), dtype={"patient_id": str})
    df = df[(df["split"] == "test") & df["y60"].notna()]
    return list(df["patient_id"]), df["y60"].to_numpy(float), df["p60"].to_numpy(float)


def stage_audit(run: Run) -> dict:
    fcfg = run.cfg["fairness"]
    ids, y, p = _test_predictions(run)
    specs = [spec_from_config(v) for v in fcfg["variables"]]
    specs = [s for s in specs if s.source in run.clinical().columns]
    result = run_audit(y, p, run.clinical(), ids, specs, fcfg["min_size"], fcfg["tau"],
                       run.cfg["calibration"]["bins"])
    run.update_metrics("fairness", {"min_size": fcfg["min_size"], "tau": fcfg["tau"],
                                    "variables": result})
    rows, prow = [], []
    for var, res in result.items():
        for lv in res["levels"]:
            m = lv["metrics"]
            rows.append((var, lv["level"], lv["n"], lv["prevalence"], m.get("auroc"),
                         m.get("auprc"), m.get("brier"), m.get("ece"), m.get("slope"),
                         lv["reason"] or ""))
            c = lv["confusion"] or {}
            prow.append((var, lv["level"], c.get("tpr"), c.get("fpr"), c.get("ppv"),
                         c.get("predicted_positive_rate"), lv["reason"] or ""))
        gaps = res["parity"]
        prow.append((var, "max-min gap", gaps["tpr"]["gap"], gaps["fpr"]["gap"],
                     gaps["ppv"]["gap"], gaps["predicted_positive_rate"]["gap"], ""))
    run.write_csv("fairness.csv", ["variable", "group", "n", "prev", "auroc", "auprc", "brier",
                                   "ece", "slope", "withheld"], rows)
    run.write_csv("parity.csv", ["variable", "group", "tpr", "fpr", "ppv", "ppr", "withheld"], prow)
    return result


def stage_bootstrap(run: Run) -> dict:
    rcfg = run.cfg["robustness"]
    ids, y, p = _test_predictions(run)
    B = int(rcfg["B"])
    seed = subseed(run.seed, "bootstrap")
    results = [("overall", bootstrap_ci(y, p, m, B, seed, run.threads)) for m in rcfg["metrics"]]
    var = rcfg.get("subgroup_variable")
    spec = next((spec_from_config(v) for v in run.cfg["fairness"]["variables"]
                 if v["variable"] == var), None)
    if spec is not None and spec.source in run.clinical().columns:
        groups = assign_subgroups(run.clinical(), spec)
        g = np.array([groups.get(i, UNKNOWN) for i in ids], dtype=object)
        for level in sorted(set(g)):
            m = g == level
            if m.sum() < run.cfg["fairness"]["min_size"] or y[m].min() == y[m].max():
                continue
            for metric in rcfg["subgroup_metrics"]:
                results.append((f"{var}={level}",
                                bootstrap_ci(y[m], p[m], metric, B, seed, run.threads)))
    out = [{"scope": scope, **r.to_json(),
            "replicate_mean": float(r.replicates.mean()) if r.replicates.size else None}
           for scope, r in results]
    run.update_metrics("bootstrap", out)
    run.write_csv("bootstrap.csv", ["scope", "metric", "point", "replicate_mean", "ci_low",
                                    "ci_high", "B", "skipped"],
                  [(o["scope"], o["metric"], o["point"], o["replicate_mean"], o["ci_low"],
                    o["ci_high"], o["B"], o["skipped"]) for o in out])
    return out


def _score(y, p, bins) -> dict:
    return {"auroc": auroc(y, p), "auprc": average_precision(y, p),
            "brier": cal.brier_score(y, p), "ece": cal.ece(y, p, bins)}


def stage_stress(run: Run) -> list[dict]:
    """Mask modality columns on the test split without retraining."""
    records, assignment = run.cohort()
    X = run.features()
    Xte = X.rows(ids_by_split(assignment)["test"])
    model = load_model(run.read_json("model.json")["model"])
    calibrate = load_calibrator(run)
    m, y = _defined(records, Xte.ids, run.horizon)
    bins = run.cfg["calibration"]["bins"]

    def score(mat):
        eta = model.predict_eta(mat.values)
        return _score(y, calibrate(fixed_horizon_risk(eta, model.baseline, run.horizon))[m], bins)

    base = score(Xte)
    rows = []
    seed = subseed(run.seed, "stress")
    for mods in run.cfg["robustness"]["modalities"]:
        for rho in run.cfg["robustness"]["rho"]:
            sc = MaskingScenario(tuple(sorted(mods)), float(rho), seed)
            s = score(mask_modality(Xte, sc))
            rows.append({"modalities": "+".join(sc.modalities), "rho": sc.rho, **s,
                         **{f"delta_{k}": s[k] - base[k] for k in base}})
    run.update_metrics("stress", {"baseline": base, "scenarios": rows})
    keys = ["auroc", "auprc", "brier", "ece"]
    run.write_csv("stress.csv", ["modalities", "rho", *keys, *[f"delta_{k}" for k in keys]],
                  [(r["modalities"], r["rho"], *[r[k] for k in keys],
                    *[r[f"delta_{k}"] for k in keys]) for r in rows])
    return rows


def fit_and_score(run: Run, records, assignment, params: dict):
    """Closure training the selected model on a column subset and scoring it on test."""
    split_ids = ids_by_split(assignment)
    bins = run.cfg["calibration"]["bins"]
    ccfg = run.cfg["calibration"]

    def _run(Xsub: FeatureMatrix) -> dict:
        Xtr = Xsub.rows(split_ids["train"])
        times, events, _ = _outcome_arrays(records, Xtr.ids)
        model = fit_model(run, params, Xtr.values, times, events, Xsub.columns)

        def risk(ids):
            Xs = Xsub.rows(ids)
            m, y = _defined(records, ids, run.horizon)
            return fixed_horizon_risk(model.predict_eta(Xs.values), model.baseline,
                                      run.horizon)[m], y

        p_te, y_te = risk(split_ids["test"])
        if ccfg["isotonic"]:
            p_va, y_va = risk(split_ids["validation"])
            p_te = cal.fit_isotonic(p_va, y_va, interpolate=ccfg["interpolate"])(p_te)
        return {"n_features": len(Xsub.columns), **_score(y_te, p_te, bins)}

    return _run


def stage_ablate(run: Run) -> list[dict]:
    records, assignment = run.cohort()
    X = run.features()
    params = run.read_json("model.json")["selected"]
    rows = ablation_run(run.cfg["robustness"]["ablation"], X,
                        fit_and_score(run, records, assignment, params))
    run.update_metrics("ablation", rows)
    keys = ["n_features", "auroc", "auprc", "brier", "ece"]
    run.write_csv("ablation.csv", ["config", *keys], [(r["config"], *[r[k] for k in keys])
                                                      for r in rows])
    return rows


def stage_report(run: Run) -> str:
    from .report import emit_report
    metrics = run.read_json("metrics.json") if run.path("metrics.json").is_file() else None
    manifest = run.read_json("manifest.json") if run.path("manifest.json").is_file() else None
    text = emit_report(metrics, manifest, run.hash)
    run.path("report.md").write_text(text, encoding="utf-8")
    return text


STAGES: dict[str, Callable[[Run], object]] = {
    "split": stage_split,
    "prepare": stage_prepare,
    "train": stage_train,
    "calibrate": stage_calibrate,
    "evaluate": stage_evaluate,
    "audit": stage_audit,
    "bootstrap": stage_bootstrap,
    "stress": stage_stress,
    "ablate": stage_ablate,
    "report": stage_report,
}


def run_pipeline(cfg: dict, outdir=None, threads: int = 1, stages=None) -> Run:
    outdir = outdir or cfg.get("output_dir")
    if outdir is None:
        raise ConfigError("no output directory given")
    run = Run(cfg, Path(outdir), threads)
    for name in stages or STAGES:
        logger.info("stage %s", name)
        STAGES[name](run)
    return run

