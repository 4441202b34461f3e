"""Command line entry point: ``sebm {simulate,mle-study,infer,report}``."""
from __future__ import annotations

import argparse
import json
import sys

from .harness import RunConfig, cmd_infer, cmd_mle_study, cmd_report, cmd_simulate


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--replicates", type=int)
    p.add_argument("--prior", choices=("gaussian", "uniform"))
    p.add_argument("--obs-preset", dest="obs_preset", choices=("6", "2", "all"))
    p.add_argument("--L", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sebm", description="Joint state-parameter estimation for a stochastic "
                                     "energy balance model on the sphere.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate a truth and its observations")
    _common(p)
    p = sub.add_parser("mle-study", help="condition numbers and MLE errors over replicates")
    _common(p)
    p.add_argument("--mle-length", dest="mle_length", type=int)
    p = sub.add_parser("infer", help="particle Gibbs inference and diagnostics")
    _common(p)
    p.add_argument("--obs", help="observations CSV (step,node_index,value); simulated when omitted")
    p.add_argument("--truth", help="true trajectory CSV used for state metrics")
    p = sub.add_parser("report", help="aggregate inference runs into summary tables")
    p.add_argument("runs", nargs="+", help="run directories or manifest files")
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> RunConfig:
    keys = ("seed", "out", "replicates", "prior", "obs_preset", "L", "M", "N", "workers", "mle_length")
    overrides = {k: getattr(args, k, None) for k in keys}
    return RunConfig.from_json(args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            res = cmd_report(args.runs, args.out)
            print(json.dumps({k: str(v) for k, v in res["paths"].items()}))
            return 0
        cfg = _config(args)
        if args.command == "simulate":
            paths = cmd_simulate(cfg)
        elif args.command == "mle-study":
            paths = cmd_mle_study(cfg)
        else:
            mans = cmd_infer(cfg, obs_path=args.obs, truth_path=args.truth)
            paths = {"runs": len(mans), "out": cfg.out}
        print(json.dumps({k: str(v) for k, v in paths.items()}))
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"sebm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
