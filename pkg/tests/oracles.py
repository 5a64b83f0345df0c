"""Slow, obviously-correct reference implementations used as test oracles."""
from __future__ import annotations

import numpy as np


def auroc_pairs(y, p) -> float:
    """Count (positive, negative) pairs; a tie earns half credit."""
    y = np.asarray(y)
    p = np.asarray(p, dtype=float)
    pos = p[y == 1]
    neg = p[y == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (pos.size * neg.size)


def average_precision_prefix(y, p) -> float:
    """Sum of precision times recall increment at every distinct threshold, high to low."""
    y = np.asarray(y)
    p = np.asarray(p, dtype=float)
    total_pos = int((y == 1).sum())
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(p.tolist()), reverse=True):
        sel = p >= t
        tp = int((y[sel] == 1).sum())
        recall = tp / total_pos
        ap += (recall - prev_recall) * (tp / int(sel.sum()))
        prev_recall = recall
    return ap


def isotonic_pooling(scores, y) -> dict[float, float]:
    """Isotonic fit at each distinct score by naive exhaustive pooling.

    Equal-score points form one weighted block. The leftmost adjacent violating
    pair is merged and the scan restarts from the beginning, until no violation
    is left. Comparisons use integer cross-multiplication, so integer targets
    give exact block means.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y)
    levels = sorted(set(scores.tolist()))
    blocks = [[int(sum(int(v) for v in y[scores == s])), int((scores == s).sum()), [s]]
              for s in levels]
    merged = True
    while merged:
        merged = False
        for i in range(len(blocks) - 1):
            (s1, c1, l1), (s2, c2, l2) = blocks[i], blocks[i + 1]
            if s1 * c2 > s2 * c1:
                blocks[i:i + 2] = [[s1 + s2, c1 + c2, l1 + l2]]
                merged = True
                break
    return {lv: s / c for s, c, members in blocks for lv in members}


def cox_loss_naive(eta, times, events) -> float:
    """Breslow negative log partial likelihood, one risk set per event, no tricks."""
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times, dtype=float)
    total = 0.0
    for i in np.flatnonzero(np.asarray(events) == 1):
        at_risk = times >= times[i]
        total -= eta[i] - np.log(np.exp(eta[at_risk]).sum())
    return total


def central_diff(f, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def nelson_aalen(times, events) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    grid = np.unique(times[events == 1])
    inc = [((times == t) & (events == 1)).sum() / (times >= t).sum() for t in grid]
    return grid, np.cumsum(inc)
