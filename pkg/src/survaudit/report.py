"""Markdown summary of a pipeline run with overall and per-subgroup sections."""
from __future__ import annotations

DASH = "—"

SUMMARY_ROWS = (
    ("AUROC", "auroc"),
    ("AUPRC", "auprc"),
    ("Brier Score", "brier"),
    ("Expected Calibration Error (ECE)", "ece"),
    ("Calibration Intercept", "intercept"),
    ("Calibration Slope", "slope"),
    ("Outcome Prevalence", "prevalence"),
    ("Mean Predicted Risk", "mean_predicted"),
)


def _f(x, digits: int = 3) -> str:
    if x is None:
        return DASH
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, int):
        return str(x)
    return f"{x:.{digits}f}"


def _table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return out


def _overall(metrics: dict) -> list[str]:
    ev = metrics.get("evaluation")
    if not ev:
        return ["_Overall test metrics not available (run `evaluate`)._"]
    kind = "calibrated" if ev.get("calibrated") else "raw"
    test = ev["test"][kind]
    cis = {b["metric"]: b for b in metrics.get("bootstrap", []) if b["scope"] == "overall"}
    B = next(iter(cis.values()))["B"] if cis else None
    rows = []
    for label, key in SUMMARY_ROWS:
        ci = cis.get(key)
        ci_txt = f"{_f(ci['ci_low'])} – {_f(ci['ci_high'])}" if ci and ci["ci_low"] is not None \
            else DASH
        rows.append((label, _f(test.get(key)), ci_txt))
    title = (f"## Overall test performance ({ev['model']}, {kind} probabilities), "
             f"n = {test['n']} patients with defined 60-month outcome")
    head = ["Metric", "Point Estimate", f"95% CI (Bootstrap, B={B})" if B else "95% CI"]
    val = ev["validation"][kind]
    lines = [title, ""] + _table(head, rows) + [
        "",
        f"Validation: AUROC {_f(val['auroc'])}, AUPRC {_f(val['auprc'])}; "
        f"test AUROC on the linear predictor {_f(ev['test']['eta_auroc'])}.",
    ]
    return lines


def _fairness(metrics: dict) -> list[str]:
    fair = metrics.get("fairness")
    if not fair:
        return ["_Subgroup audit not available (run `audit`)._"]
    lines = [f"## Subgroup fairness (min size {fair['min_size']}, threshold {fair['tau']})"]
    for var, res in fair["variables"].items():
        rows, trows = [], []
        for lv in res["levels"]:
            m = lv["metrics"]
            c = lv["confusion"] or {}
            note = f" (withheld: {lv['reason']})" if lv["withheld"] else ""
            rows.append((lv["level"] + note, lv["n"], _f(lv["prevalence"]), _f(m.get("auroc")),
                         _f(m.get("auprc")), _f(m.get("brier")), _f(m.get("ece")),
                         _f(m.get("slope"))))
            if not lv["withheld"]:
                trows.append((lv["level"], _f(c.get("tpr")), _f(c.get("fpr")), _f(c.get("ppv")),
                               _f(c.get("predicted_positive_rate"))))
        lines += ["", f"### {var}: threshold-free metrics", ""]
        lines += _table(["Group", "n", "Prev", "AUROC", "AUPRC", "Brier", "ECE", "Slope"], rows)
        lines += ["", f"### {var}: threshold-based metrics (risk threshold = {fair['tau']})", ""]
        lines += _table(["Group", "TPR", "FPR", "PPV", "Predicted Positive Rate"], trows)
        gaps = res["parity"]
        lines += ["", "Max–min gaps: " + ", ".join(
            f"{k} {_f(v['gap'])}" for k, v in gaps.items())]
    return lines


def _bootstrap_groups(metrics: dict) -> list[str]:
    boots = [b for b in metrics.get("bootstrap", []) if b["scope"] != "overall"]
    if not boots:
        return []
    rows = [(b["scope"], b["metric"], _f(b["replicate_mean"]),
             f"{_f(b['ci_low'])} – {_f(b['ci_high'])}") for b in boots]
    return ["## Bootstrap robustness by subgroup", ""] + _table(
        ["Group", "Metric", "Mean", "95% CI"], rows)


def _stress(metrics: dict) -> list[str]:
    st = metrics.get("stress")
    if not st:
        return []
    rows = [(s["modalities"], _f(s["rho"], 2), _f(s["auroc"]), _f(s["delta_auroc"]),
             _f(s["brier"]), _f(s["delta_brier"])) for s in st["scenarios"]]
    return ["## Missing-modality stress test (test split, no retraining)", "",
            f"Unmasked AUROC {_f(st['baseline']['auroc'])}, Brier {_f(st['baseline']['brier'])}.",
            ""] + _table(["Masked", "rho", "AUROC", "ΔAUROC", "Brier", "ΔBrier"], rows)


def _ablation(metrics: dict) -> list[str]:
    ab = metrics.get("ablation")
    if not ab:
        return []
    rows = [(a["config"], a["n_features"], _f(a["auroc"]), _f(a["auprc"]), _f(a["brier"]),
             _f(a["ece"])) for a in ab]
    return ["## Multimodal ablation", ""] + _table(
        ["Configuration", "Features", "AUROC", "AUPRC", "Brier", "ECE"], rows)


def emit_report(metrics: dict | None, manifest: dict | None, config_hash: str) -> str:
    lines = ["# Survival audit report", "", f"config_hash: `{config_hash}`", ""]
    if manifest:
        s = manifest["splits"]
        lines += ["## Cohort", "",
                  f"Cohort size {manifest['cohort_size']} ({manifest['events']} events); "
                  f"seed {manifest['seed']}.", ""]
        lines += _table(["Split", "n", "Events", "Defined 60-month", "Positive 60-month",
                         "Early censored"],
                        [(k, v["size"], v["events"], v["defined_60"], v["positive_60"],
                          v["early_censored"]) for k, v in s.items()])
        lines += ["", "Exclusions: " + ", ".join(f"{k} {v}" for k, v in
                                                 manifest["exclusions"].items()), ""]
    else:
        lines += ["_Cohort manifest not available._", ""]
    if metrics is None:
        lines.append("_No metrics available; run the evaluation stages first._")
        return "\n".join(lines) + "\n"
    for section in (_overall, _fairness, _bootstrap_groups, _stress, _ablation):
        part = section(metrics)
        if part:
            lines += part + [""]
    return "\n".join(lines).rstrip() + "\n"
