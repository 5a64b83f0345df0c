"""Bootstrap confidence intervals, modality masking and block ablation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .calibration import brier_score, ece
from .discrimination import auroc, average_precision
from .errors import DataValidationError
from .features import FeatureMatrix
from .rng import keyed_rng

Metric = Callable[[np.ndarray, np.ndarray], float]

METRICS: dict[str, Metric] = {
    "auroc": auroc,
    "auprc": average_precision,
    "brier": brier_score,
    "ece": ece,
    "prevalence": lambda y, p: float(np.mean(y)),
    "mean_predicted": lambda y, p: float(np.mean(p)),
}

MAX_SKIP_FRACTION = 0.2


@dataclass
class BootstrapResult:
    metric: str
    point: float
    replicates: np.ndarray
    ci_low: float | None
    ci_high: float | None
    B: int
    seed: int
    skipped: int

    @property
    def flagged(self) -> bool:
        return self.skipped > MAX_SKIP_FRACTION * self.B

    def to_json(self) -> dict:
        return {"metric": self.metric, "point": self.point, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "B": self.B, "seed": self.seed,
                "skipped": self.skipped, "flagged": self.flagged}


def _replicate(y, p, metric: Metric, seed: int, b: int) -> float:
    idx = keyed_rng(seed, b).integers(0, y.size, size=y.size)
    try:
        v = metric(y[idx], p[idx])
    except (DataValidationError, ZeroDivisionError):
        return math.nan
    return float(v)


def bootstrap_ci(y, p, metric: str | Metric, B: int = 1000, seed: int = 0,
                 threads: int = 1, level: float = 0.95) -> BootstrapResult:
    """Patient-level percentile bootstrap.

    Replicate ``b`` resamples indices with a Philox stream keyed by ``(seed, b)``,
    so the replicate vector does not depend on ``threads``. Replicates where
    the metric is undefined (e.g. one class only) are skipped and counted.
    """
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    fn = METRICS[metric] if isinstance(metric, str) else metric
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    point = float(fn(y, p))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda b: _replicate(y, p, fn, seed, b), range(B)))
    else:
        reps = [_replicate(y, p, fn, seed, b) for b in range(B)]
    reps = np.asarray(reps, dtype=float)
    ok = reps[~np.isnan(reps)]
    skipped = int(B - ok.size)
    if ok.size:
        a = (1 - level) / 2
        lo, hi = np.quantile(ok, [a, 1 - a], method="linear")
        lo, hi = float(lo), float(hi)
    else:
        lo = hi = None
    return BootstrapResult(name, point, ok, lo, hi, int(B), int(seed), skipped)


@dataclass(frozen=True)
class MaskingScenario:
    modalities: tuple[str, ...]
    rho: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise DataValidationError(f"rho must lie in [0, 1], got {self.rho}")
        bad = set(self.modalities) - {"expr", "cna"}
        if bad:
            raise DataValidationError(f"unknown modalities {sorted(bad)}")

    @property
    def name(self) -> str:
        return "+".join(sorted(self.modalities)) + f"@{self.rho!r}"


def masked_columns(X: FeatureMatrix, scenario: MaskingScenario) -> list[int]:
    cols: list[int] = []
    for mod in sorted(set(scenario.modalities)):
        idx = [j for j, b in enumerate(X.blocks) if b == mod]
        if not idx:
            raise DataValidationError(f"feature matrix has no {mod!r} columns")
        k = math.floor(scenario.rho * len(idx))
        if k:
            pick = keyed_rng(scenario.seed, f"mask:{mod}").choice(len(idx), size=k, replace=False)
            cols.extend(idx[i] for i in sorted(pick))
    return sorted(cols)


def mask_modality(X: FeatureMatrix, scenario: MaskingScenario) -> FeatureMatrix:
    """Set a seeded random ``floor(rho * m)`` columns of each chosen block to 0 (the training mean)."""
    values = X.values.copy()
    cols = masked_columns(X, scenario)
    if cols:
        values[:, cols] = 0.0
    return FeatureMatrix(list(X.ids), list(X.columns), list(X.blocks), values)


ABLATIONS: dict[str, tuple[str, ...]] = {
    "clinical": ("clinical",),
    "clinical+expr": ("clinical", "expr"),
    "clinical+cna": ("clinical", "cna"),
    "all": ("clinical", "expr", "cna"),
}


def ablation_run(configs: Sequence[str], X: FeatureMatrix,
                 fit_and_score: Callable[[FeatureMatrix], Mapping[str, float]]) -> list[dict]:
    """Retrain and score once per block configuration, in the order given."""
    rows = []
    present = set(X.blocks)
    for name in configs:
        if name not in ABLATIONS:
            raise DataValidationError(f"unknown ablation config {name!r}")
        missing = set(ABLATIONS[name]) - present
        if missing:
            raise DataValidationError(f"ablation {name!r} needs absent blocks {sorted(missing)}")
        scores = dict(fit_and_score(X.select_blocks(ABLATIONS[name])))
        rows.append({"config": name, **scores})
    return rows
