"""Run the four experiment configs and print a short summary of each bundle.

    python3 scripts/reproduce_experiments.py [--smoke] [--workers N] [--only mixture ...]

Bundles land in results/<experiment>/ (see configs/*.json).
"""
import argparse
import csv
import time
from pathlib import Path

import numpy as np

from gbps.experiments import EXPERIMENTS, apply_smoke, parse_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def column_medians(path, group=None):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    ids = [k for k in rows[0] if k not in ("rep", "component", "statistic", "metric")]
    if group is not None:
        rows = [r for r in rows if r.get("statistic", r.get("metric")) == group]
    out = {}
    for i in ids:
        vals = [abs(float(r[i])) for r in rows if r[i] != ""]
        out[i] = float(np.median(vals)) if vals else float("nan")
    return out


def summarize(bundle):
    out = bundle.out_dir
    print(f"  bundle: {out}  ({len(bundle.manifest['files'])} files, partial={bundle.partial})")
    if (out / "ess.csv").exists():
        print("  median ESS:", {k: round(v) for k, v in column_medians(out / "ess.csv").items()})
    if (out / "moments.csv").exists():
        med = column_medians(out / "moments.csv", "second_moment_error")
        print("  median |second-moment error|:", {k: round(v, 4) for k, v in med.items()})
    if (out / "w2.csv").exists():
        med = column_medians(out / "w2.csv", "w2_joint")
        print("  median joint W2:", {k: round(v, 4) for k, v in med.items()})
    if (out / "reducibility.csv").exists():
        with open(out / "reducibility.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                print(f"  {r['id']}: reducible={r['reducible']} quadrants={r['quadrants']} "
                      f"min_radius={float(r['min_radius']):.3f}")
    if (out / "posterior.csv").exists():
        with open(out / "posterior.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        for comp in sorted({r["component"] for r in rows}):
            parts = [f"{r['id']} {float(r['mean']):+.3f}±{float(r['se']):.3f}"
                     for r in rows if r["component"] == comp]
            print(f"  {comp}: " + ", ".join(parts))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--smoke", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=EXPERIMENTS)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    for exp in args.only or EXPERIMENTS:
        spec = parse_config(ROOT / "configs" / f"{exp}.json")
        spec.out_dir = str(Path(args.out) / exp)
        if args.smoke:
            spec = apply_smoke(spec)
        t0 = time.perf_counter()
        bundle = run_experiment(spec, workers=args.workers)
        print(f"{exp}: {spec.replications} replication(s), {len(spec.samplers)} sampler(s), "
              f"{time.perf_counter() - t0:.1f}s")
        summarize(bundle)


if __name__ == "__main__":
    main()
