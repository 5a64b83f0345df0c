"""Elastic-net penalized Cox regression fitted by proximal gradient descent."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataValidationError, NumericalError
from .cox import BreslowTable, CoxLossState, breslow_cumhaz, cox_gradient, cox_neg_log_pl

logger = logging.getLogger(__name__)

ARMIJO = 1e-4


def soft_threshold(z, t):
    """sign(z) * max(|z| - t, 0)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class CoxNetModel:
    coef: np.ndarray
    lam: float
    alpha: float
    columns: list[str]
    baseline: BreslowTable | None = None
    converged: bool = True
    n_iter: int = 0
    objective: float = float("nan")
    history: list[float] = field(default_factory=list, repr=False)

    def predict_eta(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.coef.size:
            raise DataValidationError(
                f"CoxNet expects {self.coef.size} columns, got shape {X.shape}")
        # row-major per-row sums: a patient's score never depends on which other rows share the call
        return (X * self.coef).sum(axis=1)

    def to_json(self) -> dict:
        return {"kind": "coxnet", "columns": self.columns, "coef": self.coef,
                "lambda": self.lam, "alpha": self.alpha, "converged": self.converged,
                "n_iter": self.n_iter, "objective": self.objective,
                "baseline": None if self.baseline is None else self.baseline.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "CoxNetModel":
        base = None if d.get("baseline") is None else BreslowTable.from_json(d["baseline"])
        return cls(np.asarray(d["coef"], float), float(d["lambda"]), float(d["alpha"]),
                   list(d["columns"]), base, bool(d.get("converged", True)),
                   int(d.get("n_iter", 0)), float(d.get("objective") or float("nan")))


class _Objective:
    """Smooth part (1/n) * negative log PL + lam * (1 - alpha) * ||beta||^2 and its gradient."""

    def __init__(self, X, times, events, lam, alpha):
        self.X = X
        self.n = X.shape[0]
        self.l2 = lam * (1.0 - alpha)
        self.l1 = lam * alpha
        self.state = CoxLossState(np.zeros(self.n), times, events)

    def smooth(self, beta) -> float:
        s = self.state.with_eta(self.X @ beta)
        return cox_neg_log_pl(s) / self.n + self.l2 * float(beta @ beta)

    def grad(self, beta) -> np.ndarray:
        s = self.state.with_eta(self.X @ beta)
        return self.X.T @ cox_gradient(s) / self.n + 2.0 * self.l2 * beta

    def total(self, beta) -> float:
        return self.smooth(beta) + self.l1 * float(np.abs(beta).sum())


def fit_coxnet(X, times, events, lam: float, alpha: float, tol: float = 1e-7,
               max_iter: int = 10_000, columns=None, beta0=None,
               grad_tol: float = 1e-6) -> CoxNetModel:
    """Fit an elastic-net Cox model.

    Minimizes ``(1/n) * negloglik(X beta) + lam * (alpha * |beta|_1 + (1 - alpha) * |beta|_2^2)``
    by proximal gradient steps. The step size starts from twice the last
    accepted one and is halved until the composite objective drops by at least
    ``1e-4 / step * |beta_new - beta|^2``. Iteration stops once the relative
    objective decrease falls below ``tol`` and the largest entry of the
    proximal gradient mapping ``(beta - beta_new) / step`` is below
    ``grad_tol``; hitting ``max_iter`` leaves ``converged=False`` on the model.
    """
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if lam < 0:
        raise DataValidationError(f"lambda must be non-negative, got {lam}")
    if not 0.0 <= alpha <= 1.0:
        raise DataValidationError(f"alpha must lie in [0, 1], got {alpha}")
    n, p = X.shape
    obj = _Objective(X, times, events, lam, alpha)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    f = obj.total(beta)
    if not math.isfinite(f):
        raise NumericalError("objective is not finite at the starting point")

    step = 1.0
    history = [f]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = obj.grad(beta)
        step = min(step * 2.0, 1e6)
        accepted = False
        while step >= 1e-14:
            cand = soft_threshold(beta - step * g, step * obj.l1)
            d = cand - beta
            f_new = obj.total(cand)
            if math.isnan(f_new):
                raise NumericalError("NaN in CoxNet objective")
            if f_new <= f - ARMIJO / step * float(d @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no descent possible at machine precision
            converged = True
            break
        decrease = f - f_new
        beta, f = cand, f_new
        history.append(f)
        mapping = float(np.abs(d).max()) / step if d.size else 0.0
        if decrease / max(abs(f), 1e-12) < tol and mapping < grad_tol:
            converged = True
            break
    if not converged:
        logger.warning("CoxNet did not converge in %d iterations (lambda=%g, alpha=%g)",
                       max_iter, lam, alpha)

    cols = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    model = CoxNetModel(beta, float(lam), float(alpha), cols, converged=converged,
                        n_iter=it, objective=f, history=history)
    model.baseline = breslow_cumhaz(times, events, model.predict_eta(X))
    return model


def kkt_residual(model: CoxNetModel, X, times, events) -> float:
    """Largest violation of the elastic-net stationarity conditions."""
    obj = _Objective(np.asarray(X, float), times, events, model.lam, model.alpha)
    beta = model.coef
    g_smooth = obj.X.T @ cox_gradient(obj.state.with_eta(obj.X @ beta)) / obj.n
    nz = beta != 0
    r = np.zeros_like(beta)
    r[nz] = np.abs(g_smooth[nz] + 2 * obj.l2 * beta[nz] + obj.l1 * np.sign(beta[nz]))
    r[~nz] = np.maximum(np.abs(g_smooth[~nz]) - obj.l1, 0.0)
    return float(r.max()) if r.size else 0.0


def lambda_max(X, times, events, alpha: float) -> float:
    """Smallest lambda at which the all-zero coefficient vector is optimal."""
    X = np.asarray(X, float)
    s = CoxLossState(np.zeros(X.shape[0]), times, events)
    g = X.T @ cox_gradient(s) / X.shape[0]
    return float(np.abs(g).max() / alpha) if alpha > 0 else float("inf")
