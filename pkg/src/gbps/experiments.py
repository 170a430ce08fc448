"""Config-driven experiment runner: cells, per-run outputs, aggregate tables, manifest."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import diagnose
from .samplers import MHConfig, RunConfig, run, run_mh, write_skeleton
from .targets import LogisticModel, generate_logistic_data, make_target, posterior_mode

log = logging.getLogger(__name__)

EXPERIMENTS = ("gauss-reducibility", "gauss-sweep", "mixture", "logistic")
SAMPLER_KINDS = ("bps", "gbps", "gbps_subsampled", "mh")
SWEEP_RATES = (0.01, 0.1, 0.2, 0.5, 1.0)
MIXTURE_RATES = (0.01, 0.1, 1.0)


class ConfigError(ValueError):
    pass


@dataclass
class SamplerBlock:
    id: str
    sampler: str
    path_length: float = 1e4
    lambda_ref: float | None = None
    x0: list | None = None
    batch_size: int = 1
    n_iter: int | None = None


@dataclass
class ExperimentSpec:
    experiment: str
    replications: int
    samplers: list
    target: dict
    out_dir: str
    master_seed: int = 0
    n_points: int | None = None
    w2_subsample: int = 500
    kde_grid: list | None = None
    data: dict | None = None
    smoke: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def cell_seed(master_seed: int, experiment: str, sampler_id: str, rep: int) -> int:
    """Stable 64-bit seed for one (sampler, replication) cell."""
    key = f"{master_seed}|{experiment}|{sampler_id}|{rep}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _defaults(experiment: str) -> dict:
    if experiment == "gauss-reducibility":
        return {
            "replications": 1,
            "target": {"id": "gaussian", "d": 2},
            "samplers": [
                {"id": "bps_pure_mode", "sampler": "bps", "lambda_ref": 0.0, "x0": [0.0, 0.0], "path_length": 1000},
                {"id": "bps_pure_offmode", "sampler": "bps", "lambda_ref": 0.0, "x0": [2.0, 1.0], "path_length": 1000},
                {"id": "gbps_mode", "sampler": "gbps", "x0": [0.0, 0.0], "path_length": 1000},
                {"id": "gbps_offmode", "sampler": "gbps", "x0": [2.0, 1.0], "path_length": 1000},
            ],
        }
    if experiment == "gauss-sweep":
        return {"replications": 50, "target": {"id": "gaussian", "d": 2}, "path_length": 1e4,
                "lambda_refs": list(SWEEP_RATES)}
    if experiment == "mixture":
        return {"replications": 50, "path_length": 1e4, "lambda_refs": list(MIXTURE_RATES),
                "target": {"id": "mixture", "p": 0.5, "sigmas": [1.0, 1.5, 2.0, 1.0]},
                "kde_grid": [-6.0, 9.0, 301]}
    return {"replications": 1, "path_length": 1000,
            "data": {"d": 5, "N": 100, "subsample_size": 10},
            "mh": {"n_iter": 200_000}}


def _fail(msg):
    raise ConfigError(msg)


def build_spec(raw: dict, source: str = "<config>") -> ExperimentSpec:
    """Validate a config mapping and fill in the default settings."""
    if not isinstance(raw, dict):
        _fail(f"{source}: top level must be an object")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        _fail(f"{source}: field 'experiment' must be one of {EXPERIMENTS}, got {exp!r}")
    cfg = _defaults(exp)
    cfg.update(raw)
    reps = cfg["replications"]
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        _fail(f"{source}: field 'replications' must be an integer >= 1, got {reps!r}")
    seed = cfg.get("master_seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        _fail(f"{source}: field 'master_seed' must be an unsigned 64-bit integer")

    path_length = float(cfg.get("path_length", 1e4))
    blocks = cfg.get("samplers")
    if blocks is None:
        if exp in ("gauss-sweep", "mixture"):
            rates = cfg.get("lambda_refs", [])
            blocks = [{"id": f"bps_ref{r:g}", "sampler": "bps", "lambda_ref": r} for r in rates]
            blocks.append({"id": "gbps", "sampler": "gbps"})
        else:
            m = cfg.get("data", {}).get("subsample_size", 10)
            blocks = [{"id": "gbps_subsampled", "sampler": "gbps_subsampled", "batch_size": m},
                      {"id": "mh", "sampler": "mh", "n_iter": cfg.get("mh", {}).get("n_iter", 200_000)}]
    samplers = []
    seen = set()
    for i, b in enumerate(blocks):
        where = f"{source}: samplers[{i}]"
        if not isinstance(b, dict):
            _fail(f"{where} must be an object")
        b = {"path_length": path_length, **b}
        unknown = set(b) - set(SamplerBlock.__dataclass_fields__)
        if unknown:
            _fail(f"{where}: unknown field(s) {sorted(unknown)}")
        if b.get("sampler") not in SAMPLER_KINDS:
            _fail(f"{where}.sampler must be one of {SAMPLER_KINDS}, got {b.get('sampler')!r}")
        b.setdefault("id", b["sampler"])
        if b["id"] in seen:
            _fail(f"{where}.id {b['id']!r} is duplicated")
        seen.add(b["id"])
        if not float(b["path_length"]) > 0:
            _fail(f"{where}.path_length must be > 0")
        if b["sampler"] == "bps":
            if b.get("lambda_ref") is None or float(b["lambda_ref"]) < 0:
                _fail(f"{where}.lambda_ref must be given and >= 0 for bps")
        if b["sampler"] in ("gbps_subsampled", "mh") and exp != "logistic":
            _fail(f"{where}: sampler {b['sampler']!r} is only valid for the logistic experiment")
        if exp == "logistic" and b["sampler"] == "bps":
            _fail(f"{where}: bps has no bound clock for the logistic target here")
        samplers.append(SamplerBlock(**b))

    target = dict(cfg.get("target") or {"id": "logistic"})
    if exp == "logistic":
        target = {"id": "logistic", "data_csv": "data.csv",
                  "subsample_size": cfg["data"].get("subsample_size", 10)}
    out = cfg.get("out") or f"results/{exp}"
    spec = ExperimentSpec(
        experiment=exp, replications=reps, samplers=samplers, target=target,
        out_dir=str(out), master_seed=seed, n_points=cfg.get("n_points"),
        w2_subsample=int(cfg.get("w2_subsample", 500)), kde_grid=cfg.get("kde_grid"),
        data=cfg.get("data"),
        notes=["path statistics use the full path (no burn-in)"]
        + (["logistic chains start at the maximum-likelihood point"] if exp == "logistic" else []),
    )
    if spec.w2_subsample < 1:
        _fail(f"{source}: field 'w2_subsample' must be >= 1")
    return spec


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return build_spec(raw, str(path))


def apply_smoke(spec: ExperimentSpec) -> ExperimentSpec:
    """Shrink path lengths and replications tenfold."""
    spec = copy.deepcopy(spec)
    spec.smoke = True
    spec.replications = max(1, spec.replications // 10)
    for b in spec.samplers:
        b.path_length = b.path_length / 10
        if b.n_iter is not None:
            b.n_iter = max(1000, b.n_iter // 10)
    if spec.n_points is not None:
        spec.n_points = max(10, spec.n_points // 10)
    return spec


# -- cells ------------------------------------------------------------------

def _quadrants(points) -> int:
    signs = {(bool(a >= 0), bool(b >= 0)) for a, b in points[:, :2]}
    return len(signs)


def _run_cell(spec_dict: dict, block_dict: dict, rep: int) -> dict:
    """Run one (sampler, replication) cell and write its files."""
    out = Path(spec_dict["out_dir"])
    block = SamplerBlock(**block_dict)
    seed = cell_seed(spec_dict["master_seed"], spec_dict["experiment"], block.id, rep)
    cell_dir = out / "runs" / block.id
    cell_dir.mkdir(parents=True, exist_ok=True)
    stem = cell_dir / f"rep{rep:03d}"
    target = make_target(spec_dict["target"], base_dir=out)
    grid = spec_dict.get("kde_grid")
    result = {"id": block.id, "rep": rep, "seed": seed}
    x0 = block.x0
    if x0 is None and isinstance(target, LogisticModel):
        # both chains start at the likelihood maximum to skip the transient
        x0 = posterior_mode(target)
    try:
        if block.sampler == "mh":
            res = run_mh(target, MHConfig(n_iter=block.n_iter or 200_000, seed=seed, x0=x0))
            _write_samples(res.samples, stem.with_suffix(".samples.csv"))
            report = diagnose(res.samples, target=target, w2_m=spec_dict["w2_subsample"],
                              seed=seed, grid=grid, meta=res.meta)
        else:
            cfg = RunConfig(target, block.sampler, block.path_length, block.lambda_ref, seed,
                            x0=x0, batch_size=block.batch_size)
            skel = run(cfg)
            write_skeleton(skel, stem.with_suffix(".csv"),
                           {"target": spec_dict["target"], "cell": block.id, "rep": rep})
            n = spec_dict.get("n_points")
            report = diagnose(skel, target=target, n=n, w2_m=spec_dict["w2_subsample"],
                              seed=seed, grid=grid, meta=skel.meta)
            if report.reducibility is not None:
                report.reducibility["quadrants"] = _quadrants(skel.positions)
                report.reducibility["n_events"] = skel.meta.get("n_events")
        report.to_json(stem.with_suffix(".report.json"))
        result["report"] = report.to_dict()
    except Exception as exc:  # recorded per cell, the sweep continues
        log.exception("cell %s rep %d failed", block.id, rep)
        result["error"] = f"{type(exc).__name__}: {exc}"
    return result


def _write_samples(samples, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(samples.shape[1])])
        for row in samples:
            w.writerow([repr(float(a)) for a in row])


# -- aggregation ------------------------------------------------------------

def _true_moments(target_spec: dict):
    if target_spec["id"] == "gaussian":
        d = target_spec.get("d", 2)
        return [0.0] * d, [1.0] * d
    if target_spec["id"] == "mixture":
        m = make_target(target_spec)
        return m.true_moments()
    return None


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _aggregate(spec: ExperimentSpec, results: list, out: Path) -> list:
    ids = [b.id for b in spec.samplers]
    ok = {(r["id"], r["rep"]): r["report"] for r in results if "report" in r}
    d = next((len(rep["mean"]) for rep in ok.values()), 0)
    written = []

    def cell(i, rep, fn):
        r = ok.get((i, rep))
        return fn(r) if r is not None else ""

    truth = _true_moments(spec.target)
    if truth is not None:
        mu, sec = truth
        rows = []
        for rep in range(spec.replications):
            for k in range(d):
                rows.append([rep, "mean_error", f"x{k + 1}"] +
                            [cell(i, rep, lambda r: r["mean"][k] - mu[k]) for i in ids])
                rows.append([rep, "second_moment_error", f"x{k + 1}"] +
                            [cell(i, rep, lambda r: r["second"][k] - sec[k]) for i in ids])
        _write_table(out / "moments.csv", ["rep", "statistic", "component"] + ids, rows)
        written.append("moments.csv")

    rows = [[rep, f"x{k + 1}"] + [cell(i, rep, lambda r: r["ess"][k]) for i in ids]
            for rep in range(spec.replications) for k in range(d)]
    _write_table(out / "ess.csv", ["rep", "component"] + ids, rows)
    written.append("ess.csv")

    if any(r.get("w2_2d") is not None for r in ok.values()):
        rows = []
        for rep in range(spec.replications):
            rows.append([rep, "w2_joint"] + [cell(i, rep, lambda r: r["w2_2d"]) for i in ids])
            for k in range(d):
                rows.append([rep, f"w2_x{k + 1}"] + [cell(i, rep, lambda r: r["w2_marginals"][k]) for i in ids])
        _write_table(out / "w2.csv", ["rep", "metric"] + ids, rows)
        written.append("w2.csv")

    for i in ids:
        r = ok.get((i, 0))
        if r is None:
            continue
        rows = []
        for comp, entry in r["kde"].items():
            true = entry.get("true")
            for j, (g, dens) in enumerate(zip(entry["grid"], entry["density"])):
                rows.append([comp, g, dens] + ([true[j]] if true is not None else []))
        header = ["component", "x", "density"] + (["true"] if "true" in next(iter(r["kde"].values())) else [])
        _write_table(out / f"kde_{i}.csv", header, rows)
        written.append(f"kde_{i}.csv")

    if spec.experiment == "gauss-reducibility":
        rows = [[i, rep, r["reducibility"]["reducible"], r["reducibility"]["max_deviation"],
                 r["reducibility"]["min_radius"], r["reducibility"]["quadrants"],
                 r["reducibility"]["n_events"]]
                for (i, rep), r in sorted(ok.items()) if r.get("reducibility")]
        _write_table(out / "reducibility.csv",
                     ["id", "rep", "reducible", "max_deviation", "min_radius", "quadrants", "n_events"], rows)
        written.append("reducibility.csv")

    if spec.experiment == "logistic":
        rows = [[i, rep, f"x{k + 1}", r["mean"][k], r["se_mean"][k], r["ess"][k]]
                for (i, rep), r in sorted(ok.items()) for k in range(d)]
        _write_table(out / "posterior.csv", ["id", "rep", "component", "mean", "se", "ess"], rows)
        written.append("posterior.csv")
    return written


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class Bundle:
    out_dir: Path
    manifest: dict
    results: list

    @property
    def partial(self) -> bool:
        return self.manifest["partial"]


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> Bundle:
    """Run every (sampler, replication) cell and write the result bundle."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if spec.experiment == "logistic":
        data = spec.data or {}
        rng = np.random.default_rng(cell_seed(spec.master_seed, spec.experiment, "data", 0))
        d = int(data.get("d", 5))
        x_true = rng.standard_normal(d)
        model = generate_logistic_data(d, int(data.get("N", 100)), x_true, rng,
                                       int(data.get("subsample_size", 10)))
        model.to_csv(out / "data.csv")
        (out / "data.meta.json").write_text(json.dumps({"x_true": x_true.tolist()}, indent=2) + "\n")

    spec_dict = spec.to_dict()
    jobs = [(spec_dict, asdict(b), rep) for b in spec.samplers for rep in range(spec.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, *zip(*jobs)))
    else:
        results = [_run_cell(*job) for job in jobs]

    _aggregate(spec, results, out)
    failures = [{"id": r["id"], "rep": r["rep"], "error": r["error"]} for r in results if "error" in r]
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "experiment": spec.experiment,
        "master_seed": spec.master_seed,
        "spec": spec_dict,
        "partial": bool(failures),
        "failures": failures,
        "notes": spec.notes,
        "cells": [{"id": r["id"], "rep": r["rep"], "seed": r["seed"]} for r in results],
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Bundle(out, manifest, results)
