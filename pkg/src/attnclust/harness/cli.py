"""Command line interface: ``attnclust <experiment> [--preset P] [--config F] ...``."""
from __future__ import annotations

import argparse
import sys

from ..errors import AttnClustError
from .config import EXPERIMENTS, PRESETS, deep_merge, load_config, preset, validate
from .experiments import WORKERS_ENV, run_experiment
from .output import write_result

_HELP = {
    "train": "train heads with projected SGD over several seeds",
    "verify-risk": "check closed-form risks against enumeration and Monte Carlo",
    "verify-moments": "check Gaussian moment identities against Monte Carlo",
    "sweep-reg": "final distance as a function of the regularization strength",
    "sweep-dim": "final minimal RMSE as a function of the dimension",
    "ctx-stats": "moments of the parameter-free layer on in-context data",
    "embed": "PCA point clouds of inputs and embeddings",
    "critical-points": "critical point families of the degenerate risk",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnclust",
        description="Attention heads as mixture-model quantizers: training and verification experiments.",
        epilog=f"Set {WORKERS_ENV}=N to run independent seeds in N processes. "
        f"Presets: {', '.join(sorted(PRESETS))}.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--preset", help="named default configuration")
        p.add_argument("--config", help="JSON config file; its keys override the preset")
        p.add_argument("--seed", type=int, help="base seed; run i uses seed + i")
        p.add_argument("--runs", type=int, help="number of runs")
        p.add_argument("--out", help="output directory")
    return parser


def resolve_config(args) -> dict:
    raw = {}
    if args.preset:
        raw = preset(args.preset)
        if raw.get("experiment", args.experiment) != args.experiment:
            raise AttnClustError(f"preset {args.preset!r} is a {raw['experiment']!r} experiment")
    if args.config:
        user = load_config(args.config)
        if not isinstance(user, dict):
            raise AttnClustError("config must be a JSON object")
        if user.get("experiment", args.experiment) != args.experiment:
            raise AttnClustError(f"config is a {user['experiment']!r} experiment")
        raw = deep_merge(raw, user)
    raw["experiment"] = args.experiment
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.runs is not None:
        raw["n_runs"] = args.runs
    if args.out is not None:
        raw["output"] = args.out
    return validate(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = run_experiment(cfg)
        paths = write_result(result, cfg["output"])
    except (AttnClustError, OSError) as exc:
        print(f"attnclust: error: {exc}", file=sys.stderr)
        return 2
    flagged = result.summary.get("flagged_runs") or []
    for key in ("rows", "summary"):
        print(f"wrote {paths[key]}")
    if flagged:
        print(f"warning: {len(flagged)} run(s) produced non-finite values and were flagged", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
