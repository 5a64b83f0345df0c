"""Pipeline configuration: JSON file with a versioned schema, merged over defaults."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .io import canonical_json, file_sha256, read_json, text_sha256

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "inputs": {"clinical": None, "expr": None, "cna": None, "sample_map": None},
    # optional per-input {name in file: schema name} renames for foreign exports
    "column_map": {},
    "output_dir": None,
    "seed": None,
    "horizon_months": 60.0,
    "split": {"fractions": [0.6, 0.2, 0.2]},
    "features": {
        "aggregation": "mean",
        "clinical_numeric": None,
        "clinical_categorical": None,
        "exclude": ["age_group"],
        "expr": {"tau_cov": 0.8, "tau_var": 0.0, "top_k": None, "tsvd_k": 50},
        "cna": {"tau_cov": 0.8, "tau_var": 0.0, "top_k": None, "tsvd_k": 50},
    },
    "model": {
        "type": "coxnet",
        "coxnet": {"lambda": [0.1, 0.05, 0.02, 0.01, 0.005, 0.002], "alpha": [0.5, 1.0],
                   "tol": 1e-7, "max_iter": 10000},
        "gbcox": {"max_depth": [2, 3], "learning_rate": [0.05, 0.1], "reg_lambda": [1.0],
                  "gamma": [0.0], "min_child_weight": [1.0], "subsample": [0.8],
                  "n_rounds": [300]},
    },
    "calibration": {"bins": 10, "isotonic": True, "interpolate": True},
    "fairness": {
        "variables": [
            {"variable": "age_group", "column": "age", "edges": [40, 50, 60, 70]},
            {"variable": "er_status"},
            {"variable": "subtype"},
            {"variable": "menopausal_state"},
        ],
        "min_size": 30,
        "tau": 0.2,
    },
    "robustness": {
        "B": 1000,
        "metrics": ["auroc", "auprc", "brier", "ece"],
        "subgroup_variable": "age_group",
        "subgroup_metrics": ["auroc", "ece"],
        "rho": [0.2],
        "modalities": [["expr"], ["cna"], ["expr", "cna"]],
        "ablation": ["clinical", "clinical+expr", "clinical+cna", "all"],
    },
}

INPUT_KEYS = ("clinical", "expr", "cna", "sample_map")


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("inputs", "column_map"):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(raw: dict, base_dir: str | Path | None = None, check_files: bool = True) -> dict:
    """Merge ``raw`` over defaults, resolve relative input paths, and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    cfg = _merge(DEFAULTS, raw)
    if cfg["seed"] is None or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("config needs a non-negative integer 'seed'")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in INPUT_KEYS:
        p = cfg["inputs"].get(key)
        if p is None:
            raise ConfigError(f"missing input path inputs.{key}")
        path = Path(p) if Path(p).is_absolute() else base / p
        if check_files and not path.is_file():
            raise ConfigError(f"input file not found: {path}")
        cfg["inputs"][key] = str(path)
    if cfg["output_dir"] is not None:
        out = Path(cfg["output_dir"])
        cfg["output_dir"] = str(out if out.is_absolute() else base / out)
    if not isinstance(cfg["column_map"], dict):
        raise ConfigError("column_map must be an object keyed by input name")
    for key, renames in cfg["column_map"].items():
        if key not in INPUT_KEYS or not isinstance(renames, dict) or not all(
                isinstance(a, str) and isinstance(b, str) for a, b in renames.items()):
            raise ConfigError(f"column_map.{key} must map column names to column names "
                              f"for one of {list(INPUT_KEYS)}")
    fr = cfg["split"]["fractions"]
    if len(fr) != 3:
        raise ConfigError("split.fractions needs three entries")
    if cfg["model"]["type"] not in ("coxnet", "gbcox"):
        raise ConfigError(f"model.type must be 'coxnet' or 'gbcox', got {cfg['model']['type']!r}")
    if cfg["features"]["aggregation"] not in ("mean", "first"):
        raise ConfigError("features.aggregation must be 'mean' or 'first'")
    return cfg


def load_config(path: str | Path, overrides: dict | None = None, check_files: bool = True) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = read_json(path)
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if overrides:
        raw = _merge_raw(raw, overrides)
    return resolve(raw, path.parent, check_files)


def _merge_raw(raw: dict, over: dict) -> dict:
    out = copy.deepcopy(raw)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_raw(out[k], v)
        else:
            out[k] = v
    return out


def config_hash(cfg: dict) -> str:
    """Hash of the resolved config, excluding the output location.

    Input files enter by content digest rather than path, so relocating a
    dataset leaves the hash (and every artifact) unchanged.
    """
    hashed = {k: v for k, v in cfg.items() if k != "output_dir"}
    hashed["inputs"] = {k: file_sha256(v) if v is not None and Path(v).is_file() else v
                        for k, v in cfg["inputs"].items()}
    return text_sha256(canonical_json(hashed))[:16]
