"""Gradient-boosted regression trees under the Cox partial likelihood.

Each round takes the first and diagonal second derivatives of the negative
log partial likelihood at the current linear predictor, grows one
depth-limited tree by exact greedy search over all (feature, threshold)
pairs, and adds the shrunken tree output to the predictor.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DataValidationError
from ..rng import keyed_rng
from .cox import BreslowTable, CoxLossState, breslow_cumhaz, cox_derivatives, cox_neg_log_pl


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    subsample: float = 0.8
    n_rounds: int = 300

    def __post_init__(self):
        if self.max_depth < 0:
            raise DataValidationError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise DataValidationError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise DataValidationError("reg_lambda, gamma and min_child_weight must be >= 0")
        if not 0 < self.subsample <= 1:
            raise DataValidationError("subsample must lie in (0, 1]")
        if self.n_rounds < 0:
            raise DataValidationError("n_rounds must be >= 0")


def tree_split_gain(g_left, h_left, g_right, h_right, reg_lambda, gamma):
    """Second-order loss reduction of a split, minus the gain floor ``gamma``."""
    return 0.5 * (g_left ** 2 / (h_left + reg_lambda)
                  + g_right ** 2 / (h_right + reg_lambda)
                  - (g_left + g_right) ** 2 / (h_left + h_right + reg_lambda)) - gamma


def leaf_weight(g: float, h: float, reg_lambda: float) -> float:
    if h == 0 or h + reg_lambda == 0:
        return 0.0
    return -g / (h + reg_lambda)


@dataclass
class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            go_left = X[rows, np.where(internal, feat, 0)] < self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)

    def to_nested(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                "left": self.to_nested(int(self.left[i])),
                "right": self.to_nested(int(self.right[i]))}

    @classmethod
    def from_nested(cls, d: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def visit(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in node:
                value[i] = float(node["leaf"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = visit(node["left"])
                right[i] = visit(node["right"])
            return i

        visit(d)
        return cls(np.array(feature, np.int64), np.array(threshold, float),
                   np.array(left, np.int64), np.array(right, np.int64), np.array(value, float))

    @property
    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)


def _best_split(Xs, g, h, order, in_node, params: TreeParams):
    """Best (gain, feature, threshold) for the rows flagged in ``in_node``, or None."""
    p = Xs.shape[1]
    sel = order[in_node[order]].reshape(p, -1)  # per-feature sorted node rows
    m = sel.shape[1]
    if m < 2:
        return None
    vals = Xs[sel, np.arange(p)[:, None]]
    cg = np.cumsum(g[sel], axis=1)
    ch = np.cumsum(h[sel], axis=1)
    G, H = cg[0, -1], ch[0, -1]
    gl, hl = cg[:, :-1], ch[:, :-1]
    gr, hr = G - gl, H - hl
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = tree_split_gain(gl, hl, gr, hr, params.reg_lambda, params.gamma)
    valid = (vals[:, :-1] < vals[:, 1:]) & (hl >= params.min_child_weight) \
        & (hr >= params.min_child_weight) & np.isfinite(gain)
    gain = np.where(valid, gain, -np.inf)
    # argmax returns the first maximum: lowest feature, then lowest threshold
    flat = int(np.argmax(gain))
    j, i = divmod(flat, m - 1)
    best = gain[j, i]
    if not best > 0:
        return None
    lo, hi = vals[j, i], vals[j, i + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo < thr <= hi:
        thr = hi
    return float(best), int(j), float(thr)


def grow_tree(Xs: np.ndarray, g: np.ndarray, h: np.ndarray, params: TreeParams) -> Tree:
    """Exact greedy depth-limited tree on the rows of ``Xs`` (nodes numbered in preorder)."""
    order = np.argsort(Xs, axis=0, kind="stable").T
    feature, threshold, left, right, value = [], [], [], [], []

    def build(in_node, depth):
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        split = _best_split(Xs, g, h, order, in_node, params) if depth < params.max_depth else None
        if split is None:
            value[i] = leaf_weight(float(g[in_node].sum()), float(h[in_node].sum()),
                                   params.reg_lambda)
            return i
        _, j, thr = split
        go_left = Xs[:, j] < thr
        feature[i], threshold[i] = j, thr
        left[i] = build(in_node & go_left, depth + 1)
        right[i] = build(in_node & ~go_left, depth + 1)
        return i

    build(np.ones(Xs.shape[0], dtype=bool), 0)
    return Tree(np.array(feature, np.int64), np.array(threshold, float),
                np.array(left, np.int64), np.array(right, np.int64), np.array(value, float))


@dataclass
class GbcoxModel:
    trees: list[Tree]
    params: TreeParams
    n_features: int
    columns: list[str] = field(default_factory=list)
    baseline: BreslowTable | None = None
    loss_trace: list[float] = field(default_factory=list, repr=False)
    seed: int = 0

    def predict_eta(self, X) -> np.ndarray:
        return predict_gbcox(self, X)

    def to_json(self) -> dict:
        return {"kind": "gbcox", "columns": self.columns, "n_features": self.n_features,
                "params": asdict(self.params), "seed": self.seed,
                "trees": [t.to_nested() for t in self.trees],
                "baseline": None if self.baseline is None else self.baseline.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "GbcoxModel":
        base = None if d.get("baseline") is None else BreslowTable.from_json(d["baseline"])
        return cls([Tree.from_nested(t) for t in d["trees"]], TreeParams(**d["params"]),
                   int(d["n_features"]), list(d["columns"]), base, seed=int(d.get("seed", 0)))


def predict_gbcox(model: GbcoxModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataValidationError(
            f"GBCox expects {model.n_features} columns, got shape {X.shape}")
    eta = np.zeros(X.shape[0])
    for tree in model.trees:
        eta = eta + model.params.learning_rate * tree.predict(X)
    return eta


def fit_gbcox(X, times, events, params: TreeParams = TreeParams(), seed: int = 0,
              columns=None) -> GbcoxModel:
    """Boost ``params.n_rounds`` Cox trees; row subsampling for round r uses stream (seed, r)."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    state = CoxLossState(np.zeros(n), times, events)
    eta = np.zeros(n)
    n_sub = max(1, int(np.floor(params.subsample * n)))
    trees = []
    trace = [cox_neg_log_pl(state)]
    for r in range(params.n_rounds):
        grad, hess = cox_derivatives(state.with_eta(eta))
        if n_sub < n:
            rows = np.sort(keyed_rng(seed, r).choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)
        tree = grow_tree(X[rows], grad[rows], hess[rows], params)
        trees.append(tree)
        eta = eta + params.learning_rate * tree.predict(X)
        trace.append(cox_neg_log_pl(state.with_eta(eta)))
    cols = list(columns) if columns is not None else [f"x{j}" for j in range(p)]
    model = GbcoxModel(trees, params, p, cols, loss_trace=trace, seed=seed)
    model.baseline = breslow_cumhaz(times, events, eta)
    model.train_eta = eta
    return model
