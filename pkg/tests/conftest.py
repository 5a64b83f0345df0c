import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from survaudit.synth import SyntheticSpec, synth_cohort, write_cohort  # noqa: E402


def make_dataset(root: Path, n: int = 400, seed: int = 0, **config) -> Path:
    """Write a small synthetic cohort and a config next to it; return the config path."""
    spec = SyntheticSpec(n=n, p_expr=12, p_cna=10, seed=seed)
    write_cohort(synth_cohort(spec), root)
    cfg = {
        "schema_version": 1,
        "seed": seed,
        "inputs": {k: f"{k}.csv" for k in ("clinical", "expr", "cna", "sample_map")},
        "output_dir": "results",
        "features": {"expr": {"tsvd_k": 8}, "cna": {"tsvd_k": 6}},
        "model": {"coxnet": {"lambda": [0.05, 0.01], "alpha": [0.5]}},
        "robustness": {"B": 50},
    }
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory) -> Path:
    return make_dataset(tmp_path_factory.mktemp("small"))


@pytest.fixture(scope="session")
def small_run(small_dataset):
    from survaudit.config import load_config
    from survaudit.pipeline import run_pipeline

    return run_pipeline(load_config(small_dataset))
