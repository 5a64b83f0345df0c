"""Probability calibration: scores, curves, logistic recalibration and isotonic maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError

CLIP = 1e-6


def _check(y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape or y.ndim != 1:
        raise DataValidationError("labels and probabilities must be 1-D arrays of equal length")
    if y.size == 0:
        raise DataValidationError("empty input")
    return y, p


def brier_score(y, p) -> float:
    y, p = _check(y, p)
    return float(np.mean((y - p) ** 2))


def _ece_bins(p, bins):
    return np.minimum(np.floor(p * bins).astype(np.int64), bins - 1)


def ece(y, p, bins: int = 10) -> float:
    """Expected calibration error over equal-width bins of [0, 1]; p = 1 falls in the last bin."""
    y, p = _check(y, p)
    if bins < 1:
        raise DataValidationError("bins must be >= 1")
    idx = np.clip(_ece_bins(p, bins), 0, bins - 1)
    total = 0.0
    for b in range(bins):
        m = idx == b
        nb = int(m.sum())
        if nb:
            total += nb / y.size * abs(p[m].mean() - y[m].mean())
    return float(total)


@dataclass
class CurvePoint:
    mean_predicted: float
    observed_rate: float
    count: int


def calibration_curve_quantile(y, p, bins: int = 10) -> list[CurvePoint]:
    """Sort by prediction and cut into ``bins`` groups of near-equal size (extras go first)."""
    y, p = _check(y, p)
    if y.size < bins:
        raise DataValidationError(f"need at least {bins} points for {bins} quantile bins")
    order = np.argsort(p, kind="stable")
    return [CurvePoint(float(p[g].mean()), float(y[g].mean()), int(g.size))
            for g in np.array_split(order, bins)]


def _logit(p):
    p = np.clip(p, CLIP, 1 - CLIP)
    return np.log(p) - np.log1p(-p)


@dataclass
class LogisticRecalibration:
    intercept: float
    slope: float
    separated: bool = False
    converged: bool = True
    citl: float | None = None  # intercept with slope fixed at 1


def _newton(X, y, offset, max_iter=100, tol=1e-10):
    coef = np.zeros(X.shape[1])
    converged = False
    for _ in range(max_iter):
        z = X @ coef + offset
        mu = 1.0 / (1.0 + np.exp(-z))
        w = mu * (1 - mu)
        grad = X.T @ (y - mu)
        hess = X.T @ (X * w[:, None])
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        coef = coef + delta
        if not np.all(np.isfinite(coef)) or np.max(np.abs(coef)) > 50:
            break
        if np.max(np.abs(delta)) < tol:
            converged = True
            break
    return coef, converged


def fit_logistic_recalibration(y, p) -> LogisticRecalibration:
    """Maximum-likelihood fit of logit P(y=1) = a + b * logit(p) by Newton-Raphson.

    Separation shows up as diverging coefficients; the result is then flagged
    ``separated`` rather than raising.
    """
    y, p = _check(y, p)
    if y.min() == y.max():
        raise DataValidationError("logistic recalibration needs both classes")
    lp = _logit(p)
    X = np.column_stack([np.ones_like(lp), lp])
    coef, conv = _newton(X, y, np.zeros_like(lp))
    citl, conv1 = _newton(X[:, :1], y, lp)
    # (quasi-)complete separation on the logit scale makes the MLE diverge
    split = lp[y == 0].max() <= lp[y == 1].min() or lp[y == 1].max() <= lp[y == 0].min()
    separated = bool(split or not conv or not np.all(np.isfinite(coef))
                     or np.max(np.abs(coef)) > 50)
    return LogisticRecalibration(float(coef[0]), float(coef[1]), separated, conv,
                                 float(citl[0]) if conv1 else None)


@dataclass
class CalibrationReport:
    n: int
    prevalence: float
    mean_predicted: float
    brier: float
    ece: float
    intercept: float | None
    slope: float | None
    citl: float | None
    separated: bool
    curve: list[CurvePoint] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"n": self.n, "prevalence": self.prevalence, "mean_predicted": self.mean_predicted,
                "brier": self.brier, "ece": self.ece, "intercept": self.intercept,
                "slope": self.slope, "calibration_in_the_large": self.citl,
                "separated": self.separated,
                "curve": [[c.mean_predicted, c.observed_rate, c.count] for c in self.curve]}


def calibration_report(y, p, bins: int = 10) -> CalibrationReport:
    y, p = _check(y, p)
    if y.min() != y.max():
        rec = fit_logistic_recalibration(y, p)
        a, b, citl, sep = rec.intercept, rec.slope, rec.citl, rec.separated
    else:
        a = b = citl = None
        sep = False
    curve = calibration_curve_quantile(y, p, bins) if y.size >= bins else []
    return CalibrationReport(int(y.size), float(y.mean()), float(p.mean()), brier_score(y, p),
                             ece(y, p, bins), a, b, citl, sep, curve)


# ----------------------------------------------------------------------------
# isotonic regression
# ----------------------------------------------------------------------------

def _pool(sums, weights) -> np.ndarray:
    """PAVA over points given as (weighted sum, weight) pairs; returns one value per point."""
    bsum: list[float] = []
    bw: list[float] = []
    size: list[int] = []
    for s, w in zip(sums, weights):
        bsum.append(float(s))
        bw.append(float(w))
        size.append(1)
        while len(bsum) > 1 and bsum[-2] / bw[-2] > bsum[-1] / bw[-1]:
            s2, w2, k2 = bsum.pop(), bw.pop(), size.pop()
            bsum[-1] += s2
            bw[-1] += w2
            size[-1] += k2
    return np.repeat([s / w for s, w in zip(bsum, bw)], size)


def pava(values, weights=None) -> np.ndarray:
    """Weighted pool-adjacent-violators: non-decreasing least-squares fit to ``values``."""
    values = np.asarray(values, dtype=float)
    w = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    return _pool(values * w, w)


@dataclass
class IsotonicMap:
    breakpoints: np.ndarray
    fitted: np.ndarray
    interpolate: bool = True

    def __call__(self, scores) -> np.ndarray:
        return apply_isotonic(self, scores)

    def to_json(self) -> dict:
        return {"breakpoints": self.breakpoints, "fitted": self.fitted,
                "interpolate": self.interpolate}

    @classmethod
    def from_json(cls, d: dict) -> "IsotonicMap":
        return cls(np.asarray(d["breakpoints"], float), np.asarray(d["fitted"], float),
                   bool(d.get("interpolate", True)))


def fit_isotonic(scores, y, interpolate: bool = True) -> IsotonicMap:
    """Isotonic least-squares map from scores to targets.

    Targets sharing a score are first averaged into one weighted point, then
    PAVA runs over the distinct scores in increasing order.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    if scores.shape != y.shape or scores.size < 2:
        raise DataValidationError("isotonic fit needs at least two (score, target) pairs")
    uniq, inv, counts = np.unique(scores, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=y)
    fitted = _pool(sums, counts)
    return IsotonicMap(uniq, fitted, interpolate)


def apply_isotonic(m: IsotonicMap, scores) -> np.ndarray:
    """Evaluate the map; linear between breakpoints (or right-continuous steps), clamped outside."""
    s = np.asarray(scores, dtype=float)
    if m.interpolate:
        return np.interp(s, m.breakpoints, m.fitted)
    idx = np.searchsorted(m.breakpoints, s, side="right") - 1
    return m.fitted[np.clip(idx, 0, m.fitted.size - 1)]


def isotonic_fit_values(scores, y) -> np.ndarray:
    """Fitted value for each input point (the PAVA solution in input order)."""
    m = fit_isotonic(scores, y, interpolate=False)
    return apply_isotonic(m, scores)
