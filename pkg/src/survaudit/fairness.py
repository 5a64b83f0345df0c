"""Subgroup-conditional performance with minimum-size gating and threshold parity gaps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .calibration import brier_score, ece, fit_logistic_recalibration
from .discrimination import auroc, average_precision, confusion_at_threshold
from .errors import DataValidationError

AGE_EDGES = (40, 50, 60, 70)
UNKNOWN = "unknown"


@dataclass(frozen=True)
class SubgroupSpec:
    variable: str
    edges: tuple[float, ...] | None = None  # set for numeric columns binned into levels
    column: str | None = None  # source column, defaults to ``variable``

    @property
    def source(self) -> str:
        return self.column or self.variable


def _fmt_edge(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def bin_labels(edges: Sequence[float]) -> list[str]:
    e = [_fmt_edge(x) for x in edges]
    return [f"<{e[0]}"] + [f"{a}–{b}" for a, b in zip(e, e[1:])] + [f"≥{e[-1]}"]


def bin_value(x, edges: Sequence[float]) -> str:
    """Left-closed interval label for a numeric value (missing -> 'unknown')."""
    if x is None or pd.isna(x):
        return UNKNOWN
    labels = bin_labels(edges)
    return labels[int(np.searchsorted(np.asarray(edges, float), float(x), side="right"))]


def assign_subgroups(clinical: pd.DataFrame, spec: SubgroupSpec) -> dict[str, str]:
    if spec.source not in clinical.columns:
        raise DataValidationError(f"subgroup variable {spec.source!r} not in clinical table")
    out = {}
    for pid, v in zip(clinical["patient_id"].astype(str), clinical[spec.source]):
        if spec.edges is not None:
            out[pid] = bin_value(pd.to_numeric(v, errors="coerce"), spec.edges)
        else:
            out[pid] = UNKNOWN if pd.isna(v) else str(v)
    return out


@dataclass
class SubgroupResult:
    level: str
    n: int
    prevalence: float | None = None
    withheld: bool = False
    reason: str | None = None
    metrics: dict = field(default_factory=dict)
    confusion: dict | None = None

    def get(self, name):
        if name in self.metrics:
            return self.metrics[name]
        if self.confusion is not None:
            return self.confusion.get(name)
        return None

    def to_json(self) -> dict:
        return {"level": self.level, "n": self.n, "prevalence": self.prevalence,
                "withheld": self.withheld, "reason": self.reason,
                "metrics": self.metrics, "confusion": self.confusion}


def level_metrics(y, p, tau: float, bins: int = 10) -> tuple[dict, dict]:
    rec = fit_logistic_recalibration(y, p)
    metrics = {
        "auroc": auroc(y, p),
        "auprc": average_precision(y, p),
        "brier": brier_score(y, p),
        "ece": ece(y, p, bins),
        "intercept": rec.intercept,
        "slope": rec.slope,
        "slope_separated": rec.separated,
    }
    return metrics, confusion_at_threshold(y, p, tau).to_json()


def subgroup_metrics(y, p, groups: Sequence[str], min_size: int = 30, tau: float = 0.2,
                     bins: int = 10) -> list[SubgroupResult]:
    """Per-level metrics in lexicographic level order; small or single-class levels are withheld."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    groups = np.asarray([str(g) for g in groups], dtype=object)
    if not (y.size == p.size == groups.size):
        raise DataValidationError("labels, scores and groups must have equal length")
    results = []
    for level in sorted(set(groups)):
        m = groups == level
        n = int(m.sum())
        if n < min_size:
            results.append(SubgroupResult(level, n, withheld=True, reason="n<min_size"))
            continue
        yl, pl = y[m], p[m]
        if yl.min() == yl.max():
            results.append(SubgroupResult(level, n, withheld=True, reason="single-class"))
            continue
        metrics, conf = level_metrics(yl, pl, tau, bins)
        results.append(SubgroupResult(level, n, float(yl.mean()), metrics=metrics, confusion=conf))
    return results


PARITY_METRICS = ("auroc", "tpr", "fpr", "ppv", "predicted_positive_rate")


def parity_summary(results: Sequence[SubgroupResult]) -> dict:
    """Largest between-level gap (max - min) for each parity metric, with the attaining levels."""
    usable = [r for r in results if not r.withheld]
    out = {}
    for name in PARITY_METRICS:
        vals = [(r.get(name), r.level) for r in usable if r.get(name) is not None]
        if len(vals) < 2:
            out[name] = {"gap": None, "reason": "fewer than 2 usable levels"}
            continue
        hi = max(vals, key=lambda t: (t[0], t[1]))
        lo = min(vals, key=lambda t: (t[0], t[1]))
        out[name] = {"gap": hi[0] - lo[0], "max_level": hi[1], "min_level": lo[1],
                     "max": hi[0], "min": lo[0]}
    return out


def audit(y, p, clinical: pd.DataFrame, ids: Sequence[str], specs: Sequence[SubgroupSpec],
          min_size: int = 30, tau: float = 0.2, bins: int = 10) -> dict:
    """Run subgroup metrics and parity gaps for every subgroup variable."""
    out = {}
    for spec in specs:
        mapping = assign_subgroups(clinical, spec)
        groups = [mapping.get(pid, UNKNOWN) for pid in ids]
        res = subgroup_metrics(y, p, groups, min_size, tau, bins)
        out[spec.variable] = {"levels": [r.to_json() for r in res],
                              "parity": parity_summary(res)}
    return out


def spec_from_config(d: Mapping) -> SubgroupSpec:
    edges = d.get("edges")
    return SubgroupSpec(d["variable"], tuple(edges) if edges is not None else None, d.get("column"))
