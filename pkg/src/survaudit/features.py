"""Multimodal feature preparation.

Long-format omics tables are aggregated to one value per (patient, feature),
filtered on coverage and variance, pivoted wide, imputed and standardized,
and optionally reduced with a randomized truncated SVD. Every fitted
statistic is computed from training rows only, processed in sorted patient
order, so fitting on the full cohort and fitting on the training rows alone
give bit-identical state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .rng import keyed_rng, subseed

BLOCKS = ("clinical", "expr", "cna")


@dataclass(frozen=True)
class FilterConfig:
    tau_cov: float = 0.8
    tau_var: float = 0.0
    top_k: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.tau_cov <= 1.0:
            raise DataValidationError(f"tau_cov must lie in [0, 1], got {self.tau_cov}")
        if self.tau_var < 0:
            raise DataValidationError(f"tau_var must be non-negative, got {self.tau_var}")
        if self.top_k is not None and self.top_k < 1:
            raise DataValidationError(f"top_k must be positive, got {self.top_k}")


@dataclass
class FeatureMatrix:
    """Patient-aligned dense matrix with block-tagged columns."""

    ids: list[str]
    columns: list[str]
    blocks: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise DataValidationError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.ids)} ids x {len(self.columns)} columns")
        if len(self.blocks) != len(self.columns):
            raise DataValidationError("one block tag per column required")

    def rows(self, ids: Sequence[str]) -> "FeatureMatrix":
        index = {pid: i for i, pid in enumerate(self.ids)}
        try:
            take = [index[pid] for pid in ids]
        except KeyError as exc:
            raise DataValidationError(f"patient {exc.args[0]!r} not in feature matrix") from None
        return FeatureMatrix(list(ids), list(self.columns), list(self.blocks), self.values[take])

    def select_blocks(self, blocks: Sequence[str]) -> "FeatureMatrix":
        keep = [j for j, b in enumerate(self.blocks) if b in set(blocks)]
        return FeatureMatrix(list(self.ids), [self.columns[j] for j in keep],
                             [self.blocks[j] for j in keep], self.values[:, keep])

    def block_counts(self) -> dict[str, int]:
        return {b: self.blocks.count(b) for b in BLOCKS if b in self.blocks}


# ----------------------------------------------------------------------------
# long-format handling
# ----------------------------------------------------------------------------

def aggregate_samples(rows: pd.DataFrame, mapping: Mapping[str, str],
                      policy: str = "mean") -> pd.DataFrame:
    """Collapse sample-level long rows to one value per (patient_id, feature).

    ``rows`` has columns ``sample_id, gene, value``. ``policy="first"`` keeps the
    value of the lexicographically smallest sample id; ``"mean"`` averages the
    non-missing values.
    """
    policy = policy.lower()
    if policy not in ("first", "mean"):
        raise DataValidationError(f"unknown aggregation policy {policy!r}")
    df = rows.loc[:, ["sample_id", "gene", "value"]].copy()
    df["sample_id"] = df["sample_id"].astype(str)
    df["gene"] = df["gene"].astype(str)
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    unmapped = sorted(set(df["sample_id"]) - set(mapping))
    if unmapped:
        raise DataValidationError(f"unmapped sample ids: {unmapped[:20]}"
                                  + (" ..." if len(unmapped) > 20 else ""))
    df["patient_id"] = df["sample_id"].map(mapping).astype(str)
    df = df.sort_values(["patient_id", "gene", "sample_id"], kind="mergesort")
    grouped = df.groupby(["patient_id", "gene"], sort=True)
    if policy == "first":
        out = grouped["value"].agg(lambda s: s.iloc[0])
    else:
        out = grouped["value"].mean()
    return out.rename("value").reset_index()


def _sample_var(values: np.ndarray) -> float:
    v = values[~np.isnan(values)]
    if v.size < 2:
        return 0.0
    return float(np.var(v, ddof=1))


def filter_features(patient_rows: pd.DataFrame, config: FilterConfig,
                    train_ids: Sequence[str]) -> list[str]:
    """Names of features passing the coverage and variance thresholds on training patients."""
    train_ids = sorted(set(map(str, train_ids)))
    if not train_ids:
        raise DataValidationError("filter_features needs at least one training patient")
    train = patient_rows[patient_rows["patient_id"].isin(train_ids)]
    wide = train.pivot(index="patient_id", columns="gene", values="value")
    wide = wide.reindex(index=train_ids, columns=sorted(wide.columns))
    n_train = len(train_ids)

    passed: list[tuple[str, float]] = []
    for gene in wide.columns:
        col = wide[gene].to_numpy(dtype=float)
        coverage = np.count_nonzero(~np.isnan(col)) / n_train
        var = _sample_var(col)
        if coverage >= config.tau_cov and var >= config.tau_var:
            passed.append((gene, var))
    if config.top_k is not None:
        passed = sorted(passed, key=lambda gv: (-gv[1], gv[0]))[:config.top_k]
    retained = sorted(g for g, _ in passed)
    if not retained:
        raise DataValidationError("no features retained; relax tau_cov / tau_var")
    return retained


def pivot_long_to_wide(patient_rows: pd.DataFrame, retained: Sequence[str],
                       patient_ids: Sequence[str]) -> np.ndarray:
    """Dense patient x feature matrix (rows follow ``patient_ids``, columns ``sorted(retained)``)."""
    if not retained:
        raise DataValidationError("pivot needs at least one retained feature")
    keep = patient_rows[patient_rows["gene"].isin(set(retained))]
    wide = keep.pivot(index="patient_id", columns="gene", values="value")
    wide = wide.reindex(index=list(patient_ids), columns=sorted(retained))
    # fixed memory layout keeps downstream BLAS reductions bit-reproducible
    return np.ascontiguousarray(wide.to_numpy(dtype=float))


# ----------------------------------------------------------------------------
# imputation / standardization
# ----------------------------------------------------------------------------

@dataclass
class StandardizeStats:
    mean: np.ndarray
    sd: np.ndarray
    constant: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[1] != self.mean.size:
            raise DataValidationError(
                f"column count {values.shape[1]} does not match fitted {self.mean.size}")
        filled = np.where(np.isnan(values), self.mean, values)
        return (filled - self.mean) / self.sd

    def to_json(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "constant": self.constant}

    @classmethod
    def from_json(cls, d: dict) -> "StandardizeStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["sd"], float),
                   np.asarray(d["constant"], bool))


def fit_standardize(train_values: np.ndarray, columns: Sequence[str] | None = None) -> StandardizeStats:
    """Training mean (imputation value) and sample sd per column; constant columns get sd 1."""
    train_values = np.asarray(train_values, dtype=float)
    p = train_values.shape[1]
    mean = np.empty(p)
    sd = np.empty(p)
    constant = np.zeros(p, dtype=bool)
    for j in range(p):
        col = train_values[:, j]
        obs = col[~np.isnan(col)]
        if obs.size == 0:
            name = columns[j] if columns is not None else j
            raise DataValidationError(f"column {name!r} has no observed training values")
        mean[j] = obs.mean()
        s = float(np.std(obs, ddof=1)) if obs.size > 1 else 0.0
        if s > 0:
            sd[j] = s
        else:
            sd[j] = 1.0
            constant[j] = True
    return StandardizeStats(mean, sd, constant)


def impute_and_standardize(matrix: FeatureMatrix, train_ids: Sequence[str]) -> tuple[FeatureMatrix, StandardizeStats]:
    train_ids = sorted(train_ids)
    stats = fit_standardize(matrix.rows(train_ids).values, matrix.columns)
    out = FeatureMatrix(list(matrix.ids), list(matrix.columns), list(matrix.blocks),
                        stats.apply(matrix.values))
    return out, stats


# ----------------------------------------------------------------------------
# truncated SVD
# ----------------------------------------------------------------------------

@dataclass
class TsvdProjection:
    components: np.ndarray  # p x k, orthonormal columns
    singular_values: np.ndarray
    center: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def to_json(self) -> dict:
        return {"components": self.components, "singular_values": self.singular_values,
                "center": self.center}

    @classmethod
    def from_json(cls, d: dict) -> "TsvdProjection":
        comps = np.asarray(d["components"], float)
        if comps.ndim == 1:
            comps = comps.reshape(-1, 0)
        return cls(comps, np.asarray(d["singular_values"], float), np.asarray(d["center"], float))


def _orth(a: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(a)
    return q


def fit_tsvd(train_values: np.ndarray, k: int, seed: int = 0, oversample: int = 10,
             power_iters: int = 7) -> TsvdProjection:
    """Top-``k`` right singular vectors of the centered training matrix.

    Randomized range finder with ``oversample`` extra columns and
    ``power_iters`` rounds of re-orthonormalized subspace iteration; the sketch
    is drawn from a Philox stream keyed by ``seed``. Each basis vector's sign is
    fixed so its largest-magnitude entry is positive.
    """
    a = np.ascontiguousarray(train_values, dtype=float)
    n, p = a.shape
    if k < 1 or k > min(n, p):
        raise DataValidationError(f"TSVD k={k} exceeds rank bound min({n}, {p})")
    center = a.mean(axis=0)
    a = a - center
    width = min(k + oversample, n, p)
    omega = keyed_rng(seed, "tsvd").standard_normal((p, width))
    q = _orth(a @ omega)
    for _ in range(power_iters):
        z = _orth(a.T @ q)
        q = _orth(a @ z)
    b = q.T @ a
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    v = vt[:k].T.copy()
    for j in range(k):
        i = np.argmax(np.abs(v[:, j]))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return TsvdProjection(v, s[:k].copy(), center)


def apply_tsvd(proj: TsvdProjection, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != proj.center.size:
        raise DataValidationError(
            f"TSVD expects {proj.center.size} columns, got shape {values.shape}")
    return (values - proj.center) @ proj.components


# ----------------------------------------------------------------------------
# clinical block and assembly
# ----------------------------------------------------------------------------

def one_hot_levels(train_values: Sequence) -> list[str]:
    """Observed non-missing categories in lexicographic order."""
    return sorted({str(v) for v in train_values if not pd.isna(v)})


def encode_clinical(clinical: pd.DataFrame, ids: Sequence[str], numeric: Sequence[str],
                    categorical: Mapping[str, Sequence[str]]) -> FeatureMatrix:
    """Clinical block: numeric columns as-is, categoricals one-hot with the first level dropped.

    ``categorical`` maps column name to its (fitted) sorted levels. Missing
    categories give missing indicators, imputed downstream.
    """
    frame = clinical.set_index("patient_id").reindex(list(ids))
    cols: list[str] = []
    data: list[np.ndarray] = []
    for name in sorted(numeric):
        cols.append(name)
        data.append(pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float))
    for name in sorted(categorical):
        levels = list(categorical[name])
        raw = frame[name]
        for level in levels[1:]:
            col = np.where(raw.isna(), np.nan, (raw.astype(str) == level).astype(float))
            cols.append(f"{name}={level}")
            data.append(col)
    order = sorted(range(len(cols)), key=cols.__getitem__)
    cols = [cols[j] for j in order]
    values = np.column_stack([data[j] for j in order]) if data else np.empty((len(ids), 0))
    return FeatureMatrix(list(ids), cols, ["clinical"] * len(cols), values)


def assemble_feature_matrix(*parts: FeatureMatrix) -> FeatureMatrix:
    """Concatenate block matrices column-wise in clinical, expr, cna order."""
    if not parts:
        raise DataValidationError("nothing to assemble")
    ref = parts[0]
    for part in parts[1:]:
        if set(part.ids) != set(ref.ids):
            diff = sorted(set(part.ids).symmetric_difference(ref.ids))
            raise DataValidationError(f"patient sets differ across blocks: {diff[:20]}")
    ids = list(ref.ids)
    ordered = sorted(parts, key=lambda m: min((BLOCKS.index(b) for b in m.blocks), default=0))
    aligned = [m.rows(ids) for m in ordered]
    return FeatureMatrix(ids, [c for m in aligned for c in m.columns],
                         [b for m in aligned for b in m.blocks],
                         np.hstack([m.values for m in aligned]))


# ----------------------------------------------------------------------------
# fitted pipeline
# ----------------------------------------------------------------------------

@dataclass
class OmicsBlockState:
    name: str
    retained: list[str]
    stats: StandardizeStats
    tsvd: TsvdProjection | None

    def transform(self, patient_rows: pd.DataFrame, ids: Sequence[str]) -> FeatureMatrix:
        raw = pivot_long_to_wide(patient_rows, self.retained, ids)
        z = self.stats.apply(raw)
        if self.tsvd is not None:
            z = apply_tsvd(self.tsvd, z)
            cols = [f"{self.name}_svd{j + 1:03d}" for j in range(self.tsvd.k)]
        else:
            cols = [f"{self.name}:{g}" for g in self.retained]
        return FeatureMatrix(list(ids), cols, [self.name] * len(cols), z)

    def to_json(self) -> dict:
        return {"retained": self.retained, "standardize": self.stats.to_json(),
                "tsvd": None if self.tsvd is None else self.tsvd.to_json()}

    @classmethod
    def from_json(cls, name: str, d: dict) -> "OmicsBlockState":
        tsvd = None if d["tsvd"] is None else TsvdProjection.from_json(d["tsvd"])
        return cls(name, list(d["retained"]), StandardizeStats.from_json(d["standardize"]), tsvd)


def fit_omics_block(name: str, patient_rows: pd.DataFrame, train_ids: Sequence[str],
                    config: FilterConfig, tsvd_k: int | None, seed: int) -> OmicsBlockState:
    train_ids = sorted(train_ids)
    retained = filter_features(patient_rows, config, train_ids)
    raw = pivot_long_to_wide(patient_rows, retained, train_ids)
    stats = fit_standardize(raw, retained)
    tsvd = None
    if tsvd_k:
        k = min(int(tsvd_k), len(train_ids), len(retained))
        tsvd = fit_tsvd(stats.apply(raw), k, seed=seed)
    return OmicsBlockState(name, retained, stats, tsvd)


@dataclass
class FeaturePipeline:
    """Fitted preprocessing state for all three blocks plus a final standardization."""

    numeric: list[str]
    categorical: dict[str, list[str]]
    omics: dict[str, OmicsBlockState]
    final: StandardizeStats | None = None
    columns: list[str] = field(default_factory=list)
    blocks: list[str] = field(default_factory=list)

    def _assemble(self, clinical: pd.DataFrame, omics_rows: Mapping[str, pd.DataFrame],
                  ids: Sequence[str]) -> FeatureMatrix:
        parts = [encode_clinical(clinical, ids, self.numeric, self.categorical)]
        for name in ("expr", "cna"):
            if name in self.omics:
                parts.append(self.omics[name].transform(omics_rows[name], ids))
        return assemble_feature_matrix(*parts)

    def transform(self, clinical: pd.DataFrame, omics_rows: Mapping[str, pd.DataFrame],
                  ids: Sequence[str]) -> FeatureMatrix:
        m = self._assemble(clinical, omics_rows, ids)
        if m.columns != self.columns:
            raise DataValidationError("assembled columns differ from the fitted pipeline")
        return FeatureMatrix(m.ids, m.columns, m.blocks, self.final.apply(m.values))

    def to_json(self) -> dict:
        return {
            "numeric": self.numeric,
            "categorical": self.categorical,
            "omics": {k: v.to_json() for k, v in sorted(self.omics.items())},
            "final_standardize": self.final.to_json(),
            "columns": self.columns,
            "blocks": self.blocks,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FeaturePipeline":
        return cls(list(d["numeric"]), {k: list(v) for k, v in d["categorical"].items()},
                   {k: OmicsBlockState.from_json(k, v) for k, v in d["omics"].items()},
                   StandardizeStats.from_json(d["final_standardize"]),
                   list(d["columns"]), list(d["blocks"]))


def fit_pipeline(clinical: pd.DataFrame, omics_rows: Mapping[str, pd.DataFrame],
                 train_ids: Sequence[str], numeric: Sequence[str], categorical: Sequence[str],
                 filters: Mapping[str, FilterConfig], tsvd_k: Mapping[str, int | None],
                 seed: int) -> FeaturePipeline:
    """Fit all preprocessing on the training patients.

    ``omics_rows`` maps block name to aggregated patient-level long rows
    (``patient_id, gene, value``).
    """
    train_ids = sorted(set(train_ids))
    clin_train = clinical[clinical["patient_id"].isin(train_ids)].sort_values(
        "patient_id", kind="mergesort")
    levels = {c: one_hot_levels(clin_train[c]) for c in sorted(categorical)}
    omics = {}
    for name in ("expr", "cna"):
        if name in omics_rows:
            omics[name] = fit_omics_block(name, omics_rows[name], train_ids,
                                          filters.get(name, FilterConfig()),
                                          tsvd_k.get(name), seed=subseed(seed, f"tsvd:{name}"))
    pipe = FeaturePipeline(sorted(numeric), levels, omics)
    m = pipe._assemble(clinical, omics_rows, train_ids)
    pipe.final = fit_standardize(m.values, m.columns)
    pipe.columns = m.columns
    pipe.blocks = m.blocks
    return pipe
