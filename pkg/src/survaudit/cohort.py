"""Survival outcomes, 60-month labels, stratified splits and the cohort manifest."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .io import canonical_json
from .rng import keyed_rng

HORIZON = 60.0
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    time_months: float
    event: int

    def __post_init__(self):
        if not math.isfinite(self.time_months):
            raise DataValidationError(f"non-finite follow-up for patient {self.patient_id!r}")
        if self.time_months < 0:
            raise DataValidationError(
                f"negative follow-up for patient {self.patient_id!r}: {self.time_months}")
        if self.event not in (0, 1):
            raise DataValidationError(
                f"event must be 0 or 1 for patient {self.patient_id!r}, got {self.event!r}")


class Label(enum.Enum):
    POSITIVE = 1
    NEGATIVE = 0
    INDETERMINATE = None

    @property
    def y(self) -> int | None:
        return self.value


def fixed_horizon_label(rec: SurvivalRecord, horizon: float = HORIZON) -> Label:
    """Binary event-by-horizon label; censored-before-horizon records are indeterminate.

    A record censored exactly at the horizon reached it event-free and is
    labelled negative.
    """
    if rec.event == 1 and rec.time_months <= horizon:
        return Label.POSITIVE
    if rec.time_months >= horizon:
        return Label.NEGATIVE
    return Label.INDETERMINATE


def label_vector(records: Sequence[SurvivalRecord], horizon: float = HORIZON) -> np.ndarray:
    """Labels as floats: 1.0, 0.0 or nan for indeterminate."""
    out = np.empty(len(records))
    for i, r in enumerate(records):
        y = fixed_horizon_label(r, horizon).y
        out[i] = np.nan if y is None else y
    return out


def _parse_event(value, pid) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise DataValidationError(f"event for patient {pid!r} is not numeric: {value!r}") from None
    if f not in (0.0, 1.0):
        raise DataValidationError(f"event must be 0 or 1 for patient {pid!r}, got {value!r}")
    return int(f)


def build_outcomes(clinical: pd.DataFrame | Iterable[Mapping]) -> tuple[list[SurvivalRecord], dict]:
    """Build one SurvivalRecord per patient from clinical rows.

    Returns the records sorted by patient id and a dict of exclusion counts
    (``missing_outcome`` rows dropped, ``duplicate_rows`` collapsed).
    """
    df = clinical if isinstance(clinical, pd.DataFrame) else pd.DataFrame(list(clinical))
    for col in ("patient_id", "time_months", "event"):
        if col not in df.columns:
            raise DataValidationError(f"clinical table is missing required column {col!r}")

    missing = 0
    seen: dict[str, tuple[float, int]] = {}
    duplicates = 0
    for pid, t, e in zip(df["patient_id"], df["time_months"], df["event"]):
        if pid is None or (isinstance(pid, float) and math.isnan(pid)):
            raise DataValidationError("clinical row with missing patient_id")
        pid = str(pid)
        if pd.isna(t) or pd.isna(e):
            missing += 1
            continue
        try:
            t = float(t)
        except (TypeError, ValueError):
            raise DataValidationError(f"time for patient {pid!r} is not numeric: {t!r}") from None
        if t < 0:
            raise DataValidationError(f"negative follow-up for patient {pid!r}: {t}")
        outcome = (t, _parse_event(e, pid))
        if pid in seen:
            if seen[pid] != outcome:
                raise DataValidationError(
                    f"conflicting duplicate outcomes for patient {pid!r}: {seen[pid]} vs {outcome}")
            duplicates += 1
            continue
        seen[pid] = outcome

    records = [SurvivalRecord(pid, t, e) for pid, (t, e) in sorted(seen.items())]
    return records, {"missing_outcome": missing, "duplicate_rows": duplicates}


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    left = n - sum(counts)
    # larger remainder first; ties go to the earlier split
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratified_split(records: Sequence[SurvivalRecord], fractions=(0.6, 0.2, 0.2),
                     seed: int = 0) -> dict[str, str]:
    """Assign each patient to train/validation/test, stratified on the event indicator.

    Within each stratum patients are ordered by id, permuted by a Philox stream
    keyed on ``(seed, stratum)`` and cut into consecutive blocks whose sizes come
    from largest-remainder rounding. Returns ``{patient_id: split}``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataValidationError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataValidationError(f"fractions must sum to 1, got {sum(fractions)}")
    if len({r.patient_id for r in records}) != len(records):
        raise DataValidationError("duplicate patient ids in split input")

    strata = {0: [], 1: []}
    for r in records:
        strata[r.event].append(r.patient_id)
    if not strata[0] or not strata[1]:
        raise DataValidationError("stratified split needs at least one event and one censored record")

    assignment: dict[str, str] = {}
    for stratum in (0, 1):
        ids = sorted(strata[stratum])
        perm = keyed_rng(seed, stratum).permutation(len(ids))
        counts = _largest_remainder(len(ids), fractions)
        start = 0
        for split, c in zip(SPLITS, counts):
            for k in perm[start:start + c]:
                assignment[ids[k]] = split
            start += c

    for split in SPLITS:
        if split not in assignment.values():
            raise DataValidationError(f"split {split!r} received zero patients")
    return dict(sorted(assignment.items()))


def ids_by_split(assignment: Mapping[str, str]) -> dict[str, list[str]]:
    out = {s: [] for s in SPLITS}
    for pid, s in sorted(assignment.items()):
        out[s].append(pid)
    return out


def build_manifest(records: Sequence[SurvivalRecord], assignment: Mapping[str, str],
                   exclusions: Mapping[str, int], seed: int,
                   input_hashes: Mapping[str, str], horizon: float = HORIZON) -> dict:
    ids = {r.patient_id for r in records}
    gap = ids.symmetric_difference(assignment)
    if gap:
        raise DataValidationError(f"split assignment does not cover the cohort: {sorted(gap)[:10]}")

    splits = {s: {"size": 0, "events": 0, "defined_60": 0, "positive_60": 0, "early_censored": 0}
              for s in SPLITS}
    for r in records:
        entry = splits[assignment[r.patient_id]]
        entry["size"] += 1
        entry["events"] += r.event
        lab = fixed_horizon_label(r, horizon)
        if lab is Label.INDETERMINATE:
            entry["early_censored"] += 1
        else:
            entry["defined_60"] += 1
            entry["positive_60"] += int(lab is Label.POSITIVE)

    times = sorted(r.time_months for r in records)
    excl = dict(exclusions)
    excl["early_censored"] = sum(v["early_censored"] for v in splits.values())
    return {
        "cohort_size": len(records),
        "events": sum(r.event for r in records),
        "median_follow_up_months": float(np.median(times)) if times else None,
        "horizon_months": float(horizon),
        "seed": int(seed),
        "splits": splits,
        "exclusions": dict(sorted(excl.items())),
        "input_sha256": dict(sorted(input_hashes.items())),
    }


def manifest_text(manifest: dict) -> str:
    return canonical_json(manifest)
