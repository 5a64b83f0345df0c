"""Cox partial likelihood, its derivatives in the linear predictor, and the Breslow baseline.

Tied event times use the Breslow approximation throughout: every event at
time t shares the denominator sum over the full risk set {j : T_j >= t}.
Risk-set sums are evaluated in log space over a descending-time sort, so the
cost is O(n log n) for the sort and O(n) after it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DataValidationError

logger = logging.getLogger(__name__)

ETA_CAP = 30.0


@dataclass
class CoxLossState:
    """Linear predictors with outcomes and the cached descending-time sort."""

    eta: np.ndarray
    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.events = np.asarray(self.events, dtype=float)
        n = self.eta.size
        if self.times.size != n or self.events.size != n:
            raise DataValidationError("eta, times and events must have equal length")
        if not np.any(self.events == 1):
            raise DataValidationError("Cox partial likelihood needs at least one event")
        self.order = np.lexsort((np.arange(n), -self.times))
        t = self.times[self.order]
        new_group = np.r_[True, t[1:] != t[:-1]]
        self.group = np.cumsum(new_group) - 1
        self.group_start = np.flatnonzero(new_group)
        self.group_end = np.r_[self.group_start[1:], n] - 1

    def with_eta(self, eta) -> "CoxLossState":
        state = object.__new__(CoxLossState)
        state.__dict__.update(self.__dict__)
        state.eta = np.asarray(eta, dtype=float)
        return state

    def log_denominators(self) -> np.ndarray:
        """log sum_{j in R(T_i)} exp(eta_j), in sorted (descending time) order."""
        cum = np.logaddexp.accumulate(self.eta[self.order])
        return cum[self.group_end][self.group]

    def _event_sums(self, power: int) -> np.ndarray:
        """log sum over events k with T_k <= T_i of exp(-power * logD_k), original order."""
        log_d = self.log_denominators()
        ev = self.events[self.order] == 1
        terms = np.where(ev, -power * log_d, -np.inf)
        # suffix over descending-time positions = events at equal or earlier times
        suffix = np.logaddexp.accumulate(terms[::-1])[::-1]
        out = np.empty_like(suffix)
        out[self.order] = suffix[self.group_start][self.group]
        return out


def cox_neg_log_pl(state: CoxLossState) -> float:
    ev = state.events[state.order] == 1
    log_d = state.log_denominators()
    return float(-np.sum(state.eta[state.order][ev] - log_d[ev]))


def cox_gradient(state: CoxLossState) -> np.ndarray:
    """Derivative of the negative log partial likelihood with respect to each eta_i."""
    with np.errstate(over="ignore"):
        return np.exp(state.eta + state._event_sums(1)) - state.events


def cox_hessian_diag(state: CoxLossState) -> np.ndarray:
    """Diagonal second derivative: sum over risk sets containing i of w_ik - w_ik^2."""
    with np.errstate(over="ignore"):
        a = np.exp(state.eta + state._event_sums(1))
        b = np.exp(2.0 * state.eta + state._event_sums(2))
    return np.maximum(a - b, 0.0)


def cox_derivatives(state: CoxLossState) -> tuple[np.ndarray, np.ndarray]:
    log_a = state._event_sums(1)
    log_b = state._event_sums(2)
    with np.errstate(over="ignore"):
        a = np.exp(state.eta + log_a)
        b = np.exp(2.0 * state.eta + log_b)
    return a - state.events, np.maximum(a - b, 0.0)


@dataclass
class BreslowTable:
    """Step-function baseline cumulative hazard at the distinct event times."""

    times: np.ndarray
    cumhaz: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.cumhaz = np.asarray(self.cumhaz, dtype=float)

    def __call__(self, t) -> np.ndarray | float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.cumhaz[np.maximum(idx, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def to_json(self) -> dict:
        return {"times": self.times, "cumhaz": self.cumhaz}

    @classmethod
    def from_json(cls, d: dict) -> "BreslowTable":
        return cls(np.asarray(d["times"], float), np.asarray(d["cumhaz"], float))


def breslow_cumhaz(times, events, eta) -> BreslowTable:
    """Breslow estimate of the baseline cumulative hazard from training outcomes and predictors."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not np.any(events == 1):
        raise DataValidationError("Breslow estimator needs at least one event")
    if np.any(eta > ETA_CAP):
        logger.warning("capped %d linear predictors at %s in Breslow estimate",
                       int(np.sum(eta > ETA_CAP)), ETA_CAP)
    risk = np.exp(np.minimum(eta, ETA_CAP))
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    at_risk = np.cumsum(risk[order][::-1])[::-1]  # sum over T_j >= t_sorted[i]
    uniq, deaths = np.unique(times[events == 1], return_counts=True)
    first = np.searchsorted(t_sorted, uniq, side="left")
    increments = deaths / at_risk[first]
    return BreslowTable(uniq, np.cumsum(increments))


def fixed_horizon_risk(eta, table: BreslowTable, horizon: float = 60.0):
    """Probability of the event by ``horizon``: 1 - exp(-H0(horizon) * exp(eta))."""
    h0 = table(horizon)
    with np.errstate(over="ignore"):
        p = -np.expm1(-h0 * np.exp(np.asarray(eta, dtype=float)))
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p
