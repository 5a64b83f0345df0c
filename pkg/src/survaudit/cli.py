"""Command-line entry point: ``survaudit <stage> --config run.json``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, SurvauditError
from .io import write_json
from .pipeline import STAGES, Run, leakage_gate
from .synth import SyntheticSpec, synth_cohort, write_cohort

logger = logging.getLogger("survaudit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _stage_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for parallel stages; results do not depend on it")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survaudit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "split": "build outcomes, stratified splits and the cohort manifest",
        "prepare": "fit preprocessing on the training split and write features",
        "train": "fit the configured model over its grid, select on validation",
        "calibrate": "fit the isotonic recalibration map on validation",
        "evaluate": "test-split discrimination and calibration metrics and curves",
        "audit": "subgroup fairness metrics and parity gaps",
        "bootstrap": "percentile bootstrap confidence intervals",
        "stress": "missing-modality masking at test time",
        "ablate": "retrain on block subsets",
        "report": "render report.md from metrics.json",
        "run": "all stages in order",
        "leakage": "refit preprocessing on training rows only and diff against pipeline.json",
    }
    for name, text in helps.items():
        _stage_parser(sub, name, text)

    s = sub.add_parser("synth", help="write a synthetic cohort and a matching config")
    s.add_argument("--out", required=True, help="directory for the CSV inputs")
    s.add_argument("--n", type=int, default=SyntheticSpec.n)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--censoring-rate", type=float, default=SyntheticSpec.censoring_rate)
    s.add_argument("--weibull-scale", type=float, default=SyntheticSpec.weibull_scale)
    s.add_argument("--weibull-shape", type=float, default=SyntheticSpec.weibull_shape)
    s.add_argument("--model", choices=["coxnet", "gbcox"], default="coxnet")
    return parser


def _synth(args) -> int:
    spec = SyntheticSpec(n=args.n, seed=args.seed, censoring_rate=args.censoring_rate,
                         weibull_scale=args.weibull_scale, weibull_shape=args.weibull_shape)
    cohort = synth_cohort(spec)
    out = Path(args.out)
    write_cohort(cohort, out)
    config = {
        "schema_version": 1,
        "seed": args.seed,
        "inputs": {k: f"{k}.csv" for k in ("clinical", "expr", "cna", "sample_map")},
        "output_dir": "results",
        "features": {"expr": {"tsvd_k": spec.p_expr}, "cna": {"tsvd_k": spec.p_cna}},
        "model": {"type": args.model},
    }
    write_json(out / "config.json", config)
    print(f"wrote synthetic cohort ({spec.n} patients) and config.json to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth":
        return _synth(args)

    stage = args.command
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        outdir = args.out or cfg["output_dir"]
        if outdir is None:
            raise ConfigError("no output directory: pass --out or set output_dir")
        run = Run(cfg, Path(outdir), max(1, args.threads))
        if stage == "leakage":
            ok = leakage_gate(run)
            print("leakage gate:", "PASS" if ok else "FAIL")
            return EXIT_OK if ok else EXIT_DATA
        names = list(STAGES) if stage == "run" else [stage]
        for name in names:
            stage = name
            logger.info("stage %s", name)
            STAGES[name](run)
    except SurvauditError as exc:
        print(f"survaudit: error in stage '{stage}': {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, ArithmeticError, OSError) as exc:
        print(f"survaudit: unexpected failure in stage '{stage}': {exc!r}", file=sys.stderr)
        return 1
    print(f"{args.command}: ok ({run.outdir})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
