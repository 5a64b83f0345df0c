"""Synthetic multimodal survival cohorts with a known proportional-hazards truth.

Writes the same four CSV inputs the pipeline ingests, plus ``truth.csv`` with
the generating linear predictor for oracle comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .io import write_csv
from .rng import keyed_rng

SUBTYPES = ("Basal", "Her2", "LumA", "LumB")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 1500
    p_clinical: int = 4
    p_expr: int = 25
    p_cna: int = 25
    # (block, index, coefficient); block in {"clinical", "expr", "cna"}
    signal: tuple[tuple[str, int, float], ...] = (
        ("expr", 0, 0.9), ("expr", 1, -0.8), ("expr", 2, 0.7),
        ("cna", 0, 0.8), ("cna", 1, -0.7),
    )
    weibull_shape: float = 1.3
    weibull_scale: float = 360.0
    censoring_rate: float = 0.55
    missing_rate: float = 0.01
    duplicate_sample_rate: float = 0.05
    seed: int = 0


@dataclass
class SyntheticCohort:
    clinical: pd.DataFrame
    expr: pd.DataFrame
    cna: pd.DataFrame
    sample_map: pd.DataFrame
    truth: pd.DataFrame


def _censor_scale(times: np.ndarray, v: np.ndarray, target: float) -> float:
    """Scale c so that uniform censoring C = c * v censors a ``target`` fraction."""
    if target <= 0:
        return np.inf
    lo, hi = 1e-9, float(times.max()) * 1e6
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        rate = np.mean(mid * v < times)
        if rate > target:
            lo = mid
        else:
            hi = mid
    return hi


def _long(ids, block_values: np.ndarray, prefix: str, rng, spec: SyntheticSpec,
          dup: np.ndarray) -> pd.DataFrame:
    n, p = block_values.shape
    genes = [f"{prefix}{j + 1:03d}" for j in range(p)]
    rows_s, rows_g, rows_v = [], [], []
    miss = rng.random((n, p)) < spec.missing_rate
    jitter = rng.normal(scale=0.05, size=(n, p))
    for i, pid in enumerate(ids):
        for j, g in enumerate(genes):
            v = np.nan if miss[i, j] else block_values[i, j]
            if dup[i]:
                # two samples whose mean equals the true value
                rows_s += [f"{pid}-01", f"{pid}-02"]
                rows_g += [g, g]
                rows_v += [v - jitter[i, j], v + jitter[i, j]]
            else:
                rows_s.append(f"{pid}-01")
                rows_g.append(g)
                rows_v.append(v)
    return pd.DataFrame({"sample_id": rows_s, "gene": rows_g, "value": rows_v})


def synth_cohort(spec: SyntheticSpec) -> SyntheticCohort:
    """Draw a cohort: standard-normal features, Weibull event times with scale * exp(-eta / shape)."""
    rng = keyed_rng(spec.seed, "synth")
    n = spec.n
    ids = [f"P{i + 1:05d}" for i in range(n)]
    age = np.round(rng.normal(61.0, 12.0, size=n), 1)
    er = np.where(rng.random(n) < 0.75, "ER+", "ER-")
    meno = np.where(age >= 50 + rng.normal(0, 3, size=n), "post", "pre")
    subtype = np.array(SUBTYPES)[rng.integers(0, len(SUBTYPES), size=n)]
    clin = rng.standard_normal((n, spec.p_clinical))
    expr = rng.standard_normal((n, spec.p_expr))
    cna = rng.standard_normal((n, spec.p_cna))
    blocks = {"clinical": clin, "expr": expr, "cna": cna}

    eta = np.zeros(n)
    for block, j, coef in spec.signal:
        eta += coef * blocks[block][:, j]
    u = rng.random(n)
    t_event = spec.weibull_scale * np.exp(-eta / spec.weibull_shape) \
        * (-np.log(u)) ** (1.0 / spec.weibull_shape)
    v = rng.random(n)
    c = _censor_scale(t_event, v, spec.censoring_rate)
    t_cens = c * v
    event = (t_event <= t_cens).astype(int)
    time = np.round(np.minimum(t_event, t_cens), 3)
    # keep times strictly positive after rounding
    time = np.maximum(time, 0.001)

    clinical = pd.DataFrame({"patient_id": ids, "time_months": time, "event": event,
                             "age": age, "er_status": er, "menopausal_state": meno,
                             "subtype": subtype})
    for j in range(spec.p_clinical):
        clinical[f"clin{j + 1:02d}"] = np.round(clin[:, j], 6)

    dup = rng.random(n) < spec.duplicate_sample_rate
    expr_long = _long(ids, np.round(expr, 6), "G", rng, spec, dup)
    cna_long = _long(ids, np.round(cna, 6), "C", rng, spec, dup)
    samples = sorted(set(expr_long["sample_id"]) | set(cna_long["sample_id"]))
    sample_map = pd.DataFrame({"sample_id": samples,
                               "patient_id": [s.rsplit("-", 1)[0] for s in samples]})
    truth = pd.DataFrame({"patient_id": ids, "eta_true": eta})
    return SyntheticCohort(clinical, expr_long, cna_long, sample_map, truth)


def write_cohort(cohort: SyntheticCohort, outdir: str | Path) -> dict[str, str]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, df in (("clinical", cohort.clinical), ("expr", cohort.expr), ("cna", cohort.cna),
                     ("sample_map", cohort.sample_map), ("truth", cohort.truth)):
        path = out / f"{name}.csv"
        write_csv(path, list(df.columns), df.itertuples(index=False, name=None))
        paths[name] = str(path)
    return paths
