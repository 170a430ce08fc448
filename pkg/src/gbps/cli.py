"""Command line entry point: ``gbps run`` and ``gbps diagnose``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .analysis import diagnose
from .experiments import ConfigError, apply_smoke, parse_config, run_experiment
from .samplers import read_skeleton
from .targets import make_target

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 2, 1


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config (JSON)")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--smoke", action="store_true", help="10x shorter paths and fewer replications")

    p = sub.add_parser("diagnose", help="recompute diagnostics for a skeleton CSV")
    p.add_argument("skeleton")
    p.add_argument("--n", type=int, help="number of discretization points (default: path length)")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    return parser


def cmd_run(args) -> int:
    try:
        spec = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        spec.out_dir = args.out
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.smoke:
        spec = apply_smoke(spec)
    bundle = run_experiment(spec, workers=max(1, args.workers))
    n_cells = len(bundle.results)
    n_fail = len(bundle.manifest["failures"])
    print(f"{spec.experiment}: {n_cells - n_fail}/{n_cells} cells ok -> {bundle.out_dir}")
    for f in bundle.manifest["failures"]:
        print(f"  failed {f['id']} rep {f['rep']}: {f['error']}", file=sys.stderr)
    return EXIT_PARTIAL if bundle.partial else EXIT_OK


def cmd_diagnose(args) -> int:
    path = Path(args.skeleton)
    skel = read_skeleton(path)
    target = None
    if "target" in skel.meta:
        try:
            # logistic data paths are relative to the bundle root, two levels up
            target = make_target(skel.meta["target"], base_dir=path.parent.parent.parent)
        except (ValueError, OSError, KeyError):
            target = None
    report = diagnose(skel, target=target, n=args.n, seed=args.seed, meta=skel.meta)
    text = report.to_json(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return cmd_run(args) if args.command == "run" else cmd_diagnose(args)


if __name__ == "__main__":
    sys.exit(main())
