import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survaudit.calibration import brier_score, ece, fit_logistic_recalibration
from survaudit.discrimination import auroc, average_precision, confusion_at_threshold
from survaudit.fairness import (
    SubgroupResult,
    SubgroupSpec,
    assign_subgroups,
    audit,
    bin_labels,
    parity_summary,
    subgroup_metrics,
)

# eight patients, two levels, threshold 0.2
#   A: y=(1,1,0,0) p=(.9,.1,.3,.05) -> tp1 fn1 fp1 tn1, AUROC 3/4
#   B: y=(1,0,0,0) p=(.25,.5,.1,.15) -> tp1 fn0 fp1 tn2, AUROC 2/3
FIX_Y = np.array([1, 1, 0, 0, 1, 0, 0, 0], float)
FIX_P = np.array([0.9, 0.1, 0.3, 0.05, 0.25, 0.5, 0.1, 0.15])
FIX_G = ["A"] * 4 + ["B"] * 4


def test_eight_patient_fixture():
    res = subgroup_metrics(FIX_Y, FIX_P, FIX_G, min_size=4, tau=0.2)
    a, b = res
    assert (a.level, b.level) == ("A", "B")
    assert a.confusion["tpr"] == 0.5 and a.confusion["fpr"] == 0.5 and a.confusion["ppv"] == 0.5
    assert b.confusion["tpr"] == 1.0 and b.confusion["fpr"] == 1 / 3 and b.confusion["ppv"] == 0.5
    assert a.metrics["auroc"] == 0.75 and b.metrics["auroc"] == 2 / 3
    gaps = parity_summary(res)
    assert gaps["tpr"]["gap"] == 0.5 and gaps["tpr"]["max_level"] == "B"
    assert gaps["fpr"]["gap"] == pytest.approx(1 / 6) and gaps["fpr"]["max_level"] == "A"
    assert gaps["ppv"]["gap"] == 0.0
    assert gaps["predicted_positive_rate"]["gap"] == 0.0
    assert gaps["auroc"]["gap"] == pytest.approx(1 / 12)


def _levels(values: dict, key: str) -> list[SubgroupResult]:
    out = []
    for level, v in values.items():
        r = SubgroupResult(level, 100, 0.2, metrics={}, confusion={})
        (r.metrics if key == "auroc" else r.confusion)[key] = v
        out.append(r)
    return out


def test_tpr_gap_across_age_levels():
    tpr = {"40–50": 1.00, "50–60": 1.00, "60–70": 0.957, "≥70": 1.00}
    assert parity_summary(_levels(tpr, "tpr"))["tpr"]["gap"] == pytest.approx(0.043, abs=1e-12)


def test_auroc_gap_across_age_levels():
    au = {"40–50": 0.969, "50–60": 0.968, "60–70": 0.957, "≥70": 0.975}
    g = parity_summary(_levels(au, "auroc"))["auroc"]
    assert g["gap"] == pytest.approx(0.018, abs=1e-12)
    assert (g["max_level"], g["min_level"]) == ("≥70", "60–70")


def test_identical_levels_have_zero_gaps():
    y = np.tile(FIX_Y, 2)
    p = np.tile(FIX_P, 2)
    res = subgroup_metrics(y, p, ["x"] * 8 + ["y"] * 8, min_size=8)
    assert res[0].metrics == res[1].metrics
    assert all(v["gap"] == 0 for v in parity_summary(res).values())


def test_gating_reasons():
    y = np.r_[np.zeros(40), FIX_Y]
    p = np.r_[np.full(40, 0.1), FIX_P]
    res = subgroup_metrics(y, p, ["neg"] * 40 + ["tiny"] * 8, min_size=30)
    by = {r.level: r for r in res}
    assert by["neg"].reason == "single-class" and by["tiny"].reason == "n<min_size"
    assert parity_summary(res)["tpr"]["gap"] is None


@pytest.mark.parametrize("age,level", [(50, "50–60"), (75, "≥70"), (39.9, "<40"), (40, "40–50"),
                                       (None, "unknown")])
def test_age_binning(age, level):
    clin = pd.DataFrame({"patient_id": ["a"], "age": [age]})
    assert assign_subgroups(clin, SubgroupSpec("age_group", (40, 50, 60, 70), "age"))["a"] == level


def test_missing_category_is_unknown():
    clin = pd.DataFrame({"patient_id": ["a", "b"], "er_status": ["ER+", None]})
    assert assign_subgroups(clin, SubgroupSpec("er_status")) == {"a": "ER+", "b": "unknown"}


def test_bin_labels():
    assert bin_labels([40, 50, 60, 70]) == ["<40", "40–50", "50–60", "60–70", "≥70"]


@st.composite
def grouped(draw):
    n = draw(st.integers(10, 120))
    y = np.array(draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), float)
    p = np.array(draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))
    g = draw(st.lists(st.sampled_from(["a", "b", "c", "unknown"]), min_size=n, max_size=n))
    return y, p, g


@settings(max_examples=80, deadline=None)
@given(grouped(), st.integers(1, 40))
def test_gating_soundness_and_counts(data, min_size):
    y, p, g = data
    res = subgroup_metrics(y, p, g, min_size=min_size)
    assert sum(r.n for r in res) == y.size
    for r in res:
        if r.withheld:
            assert r.metrics == {} and r.confusion is None and r.prevalence is None
            assert r.n < min_size or r.reason == "single-class"
        else:
            assert r.n >= min_size


@settings(max_examples=60, deadline=None)
@given(grouped())
def test_level_equals_global_on_its_rows(data):
    y, p, g = data
    g = np.asarray(g)
    for r in subgroup_metrics(y, p, g, min_size=1):
        if r.withheld:
            continue
        m = g == r.level
        yl, pl = y[m], p[m]
        assert r.metrics["auroc"] == auroc(yl, pl)
        assert r.metrics["auprc"] == average_precision(yl, pl)
        assert r.metrics["brier"] == brier_score(yl, pl)
        assert r.metrics["ece"] == ece(yl, pl)
        assert r.metrics["slope"] == fit_logistic_recalibration(yl, pl).slope
        assert r.confusion == confusion_at_threshold(yl, pl, 0.2).to_json()
        solo = subgroup_metrics(yl, pl, [r.level] * m.sum(), min_size=1)[0]
        assert solo.to_json() == r.to_json()


def test_audit_on_clinical_table():
    ids = [f"P{i}" for i in range(8)]
    clin = pd.DataFrame({"patient_id": ids, "grp": FIX_G})
    out = audit(FIX_Y, FIX_P, clin, ids, [SubgroupSpec("grp")], min_size=4)
    assert [lv["level"] for lv in out["grp"]["levels"]] == ["A", "B"]
    assert out["grp"]["parity"]["tpr"]["gap"] == 0.5
