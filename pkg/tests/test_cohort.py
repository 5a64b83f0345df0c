import random

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survaudit.cohort import (
    SPLITS,
    Label,
    SurvivalRecord,
    build_manifest,
    build_outcomes,
    fixed_horizon_label,
    ids_by_split,
    label_vector,
    manifest_text,
    stratified_split,
)
from survaudit.errors import DataValidationError


def cohort(n_events, n_censored, time=30.0):
    recs = [SurvivalRecord(f"E{i:03d}", time, 1) for i in range(n_events)]
    recs += [SurvivalRecord(f"C{i:03d}", time + 50, 0) for i in range(n_censored)]
    return recs


def test_build_outcomes_maps_fields():
    recs, excl = build_outcomes([{"patient_id": "A", "time_months": 30, "event": 1}])
    assert recs == [SurvivalRecord("A", 30.0, 1)]
    assert excl == {"missing_outcome": 0, "duplicate_rows": 0}


def test_negative_follow_up_rejected():
    with pytest.raises(DataValidationError, match="negative follow-up"):
        build_outcomes([{"patient_id": "A", "time_months": -2, "event": 1}])


def test_exact_duplicates_collapse_and_are_counted():
    rows = [{"patient_id": "A", "time_months": 30, "event": 1}] * 2
    recs, excl = build_outcomes(rows)
    assert len(recs) == 1 and excl["duplicate_rows"] == 1


def test_conflicting_duplicates_rejected():
    rows = [{"patient_id": "A", "time_months": 30, "event": 1},
            {"patient_id": "A", "time_months": 31, "event": 1}]
    with pytest.raises(DataValidationError, match="conflicting"):
        build_outcomes(rows)


def test_missing_outcome_is_dropped():
    df = pd.DataFrame({"patient_id": ["A", "B"], "time_months": [30, np.nan], "event": [1, 0]})
    recs, excl = build_outcomes(df)
    assert [r.patient_id for r in recs] == ["A"] and excl["missing_outcome"] == 1


@pytest.mark.parametrize("t,e,label", [
    (30, 1, Label.POSITIVE),
    (72, 0, Label.NEGATIVE),
    (30, 0, Label.INDETERMINATE),
    (60, 1, Label.POSITIVE),
    (60, 0, Label.NEGATIVE),
    (72, 1, Label.NEGATIVE),
])
def test_fixed_horizon_label(t, e, label):
    assert fixed_horizon_label(SurvivalRecord("A", t, e)) is label


@given(st.floats(0, 200, allow_nan=False), st.integers(0, 1))
def test_label_partition(t, e):
    rec = SurvivalRecord("A", t, e)
    conds = [e == 1 and t <= 60, t > 60 or (t == 60 and e == 0), e == 0 and t < 60]
    assert sum(conds) == 1
    assert fixed_horizon_label(rec) is [Label.POSITIVE, Label.NEGATIVE, Label.INDETERMINATE][
        conds.index(True)]


def test_label_vector_uses_nan_for_indeterminate():
    v = label_vector(cohort(1, 0) + [SurvivalRecord("X", 10, 0)])
    assert v[0] == 1.0 and np.isnan(v[1])


@pytest.mark.parametrize("seed", [0, 1, 7, 123])
def test_split_sizes_largest_remainder(seed):
    recs = cohort(10, 30)
    a = stratified_split(recs, (0.6, 0.2, 0.2), seed)
    by = ids_by_split(a)
    events = {s: sum(pid.startswith("E") for pid in by[s]) for s in SPLITS}
    censored = {s: sum(pid.startswith("C") for pid in by[s]) for s in SPLITS}
    assert events == {"train": 6, "validation": 2, "test": 2}
    assert censored == {"train": 18, "validation": 6, "test": 6}


def test_split_deterministic():
    recs = cohort(13, 29)
    assert stratified_split(recs, seed=5) == stratified_split(recs, seed=5)
    assert stratified_split(recs, seed=5) != stratified_split(recs, seed=6)


def test_fractions_must_sum_to_one():
    with pytest.raises(DataValidationError, match="fractions must sum to 1"):
        stratified_split(cohort(5, 5), (0.5, 0.5, 0.2))


def test_split_needs_both_strata():
    with pytest.raises(DataValidationError):
        stratified_split(cohort(5, 0))


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 60), st.integers(5, 120), st.integers(0, 2**31 - 1))
def test_split_partition_and_prevalence(n_e, n_c, seed):
    recs = cohort(n_e, n_c)
    a = stratified_split(recs, (0.6, 0.2, 0.2), seed)
    by = ids_by_split(a)
    assert sorted(sum(by.values(), [])) == sorted(r.patient_id for r in recs)
    assert sum(len(v) for v in by.values()) == len(recs)
    overall = n_e / (n_e + n_c)
    min_size = min(len(v) for v in by.values())
    for ids in by.values():
        prev = sum(pid.startswith("E") for pid in ids) / len(ids)
        assert abs(prev - overall) <= 1 / min_size


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_split_invariant_to_row_order(seed):
    recs = cohort(9, 21)
    shuffled = recs[:]
    random.Random(seed).shuffle(shuffled)
    assert stratified_split(recs, seed=3) == stratified_split(shuffled, seed=3)


def test_manifest_bookkeeping_and_bytes():
    recs = cohort(10, 29) + [SurvivalRecord("Z", 12.0, 0)]
    a = stratified_split(recs, seed=2)
    m = build_manifest(recs, a, {"missing_outcome": 0}, 2, {"clinical": "ab"})
    sizes = sorted(v["size"] for v in m["splits"].values())
    assert sizes == [8, 8, 24] and m["cohort_size"] == 40
    assert m["exclusions"]["early_censored"] == 1
    again = build_manifest(recs, a, {"missing_outcome": 0}, 2, {"clinical": "ab"})
    assert manifest_text(m) == manifest_text(again)
