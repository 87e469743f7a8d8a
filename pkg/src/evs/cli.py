"""Command-line interface.

Subcommands: gen, run, sweep, frontier, report, train.  Exit codes:
0 success, 2 usage, 3 config, 4 I/O, 5 numeric.
"""

from __future__ import annotations

import argparse
import sys

from . import bench
from .config import apply_set_overrides, resolve_config
from .errors import ConfigError, NumericError, ParameterError, UsageError
from .io import read_json


def _add_common(parser, dataset=False):
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key, e.g. --set pipeline.t_V=6",
    )
    if dataset:
        parser.add_argument("--dataset", required=True, help="dataset directory from `evs gen`")


def _load_config(args) -> dict:
    overrides = read_json(args.config) if args.config else {}
    overrides = apply_set_overrides(overrides, args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return resolve_config(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evs",
        description="Two-model latent video refinement lab: datasets, pipelines, sweeps, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an input dataset")
    _add_common(p)
    p.add_argument("--styled", action="store_true", help="styled off-prior inputs instead of degraded ones")

    p = sub.add_parser("run", help="run one pipeline over a dataset")
    p.add_argument("pipeline", nargs="?", choices=bench.PIPELINES, help="pipeline name")
    _add_common(p, dataset=False)
    p.add_argument("--dataset", help="dataset directory from `evs gen`")
    p.add_argument("--from-manifest", help="re-execute a recorded run manifest")
    p.add_argument("--single-thread", action="store_true", default=True,
                   help="bit-reproducible sequential mode (always on)")
    p.add_argument("--trajectories", action="store_true",
                   help="dump per-step latents (t2i/t2v pipelines only)")

    p = sub.add_parser("sweep", help="sweep one hyperparameter of the encapsulated pipeline")
    p.add_argument("axis", choices=bench.SWEEP_AXES)
    p.add_argument("--grid", required=True, help="comma-separated grid, e.g. 5,10,15,20")
    _add_common(p, dataset=True)

    p = sub.add_parser("frontier", help="compare temporal-block modes on styled inputs")
    _add_common(p, dataset=True)
    p.add_argument("--net", help="pre-trained net weights (.evsnet); trains one when omitted")

    p = sub.add_parser("report", help="aggregate run manifests into a summary table")
    p.add_argument("manifests", nargs="+", help="run manifest JSON files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the tapped temporal denoiser")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            cfg = _load_config(args)
            if args.styled:
                cfg["dataset"]["styled"] = True
            path = bench.cmd_gen(cfg, args.out)
        elif args.command == "run":
            if args.from_manifest:
                path = bench.rerun_from_manifest(args.from_manifest, args.out)
            else:
                if not args.pipeline or not args.dataset:
                    raise UsageError("run needs a pipeline and --dataset (or --from-manifest)")
                cfg = _load_config(args)
                path = bench.cmd_run(
                    args.pipeline, cfg, args.dataset, args.out,
                    single_thread=args.single_thread, trajectories=args.trajectories,
                )
        elif args.command == "sweep":
            cfg = _load_config(args)
            grid = [float(x) if "." in x else int(x) for x in args.grid.split(",") if x]
            path = bench.cmd_sweep(args.axis, grid, cfg, args.dataset, args.out)
        elif args.command == "frontier":
            cfg = _load_config(args)
            if args.net:
                cfg["net"]["weights"] = args.net
            path = bench.cmd_frontier(cfg, args.dataset, args.out)
        elif args.command == "report":
            path = bench.cmd_report(args.manifests, args.out)
        elif args.command == "train":
            cfg = _load_config(args)
            path = bench.cmd_train(cfg, args.out)
        else:  # pragma: no cover - argparse enforces choices
            raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 5
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
