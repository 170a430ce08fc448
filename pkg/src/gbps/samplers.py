"""Event-driven drivers: BPS, GBPS, subsampled GBPS, and a random-walk Metropolis baseline."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .clocks import InvalidBound, exponential_variate, sample_arrival
from .core import (
    ContractViolation,
    DegenerateGradient,
    Skeleton,
    event_rate,
    gbps_kernel,
    reflect,
    uniform_direction,
)
from .targets import LogisticModel, TargetModel

SAMPLERS = ("bps", "gbps", "gbps_subsampled")


class RunawayChain(RuntimeError):
    """The event count passed ``max_events`` before the path ended."""


@dataclass
class RunConfig:
    target: TargetModel
    sampler: str = "gbps"
    path_length: float = 1e4
    lambda_ref: float | None = None
    seed: int = 0
    x0: np.ndarray | None = None
    v0: np.ndarray | None = None
    max_events: int = 50_000_000
    batch_size: int = 1

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ContractViolation(f"unknown sampler {self.sampler!r}")
        if not self.path_length > 0:
            raise ContractViolation("path_length must be > 0")
        if self.sampler == "bps":
            if self.lambda_ref is None:
                raise ContractViolation("BPS needs lambda_ref (0 for pure BPS)")
            if self.lambda_ref < 0:
                raise ContractViolation("lambda_ref must be >= 0")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")


@dataclass
class MHConfig:
    step_scale: float | None = None
    n_iter: int = 100_000
    burn_in: int | None = None
    seed: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.step_scale is not None and not self.step_scale > 0:
            raise ContractViolation("step_scale must be > 0")
        if self.n_iter < 1:
            raise ContractViolation("n_iter must be >= 1")
        if self.burn_in is None:
            self.burn_in = self.n_iter // 10
        if not 0 <= self.burn_in < self.n_iter:
            raise ContractViolation("burn_in must lie in [0, n_iter)")


@dataclass
class MHResult:
    samples: np.ndarray
    acceptance_rate: float
    step_scale: float
    meta: dict = field(default_factory=dict)


def _start(config: RunConfig):
    d = config.target.d
    x0 = np.zeros(d) if config.x0 is None else np.asarray(config.x0, dtype=float).copy()
    if x0.shape != (d,):
        raise ContractViolation(f"x0 must have length {d}")
    return x0, np.random.default_rng(config.seed)


def _finish(times, xs, vs, x, v, T, L, meta) -> Skeleton:
    if L > T:
        xs.append(x + (L - T) * v)
        vs.append(v)
        times.append(L)
    return Skeleton(np.array(times), np.array(xs), np.array(vs), meta)


def run_bps(config: RunConfig) -> Skeleton:
    """Bouncy particle sampler with an exponential refreshment clock."""
    target, L, lam_ref = config.target, float(config.path_length), float(config.lambda_ref)
    x, rng = _start(config)
    d = target.d
    v = uniform_direction(d, rng) if config.v0 is None else np.asarray(config.v0, dtype=float)
    T = 0.0
    times, xs, vs = [0.0], [x], [v]
    bounces = refreshes = proposals = 0
    while True:
        res = sample_arrival(target.clock(x, v), rng, horizon=L - T)
        proposals += res.proposals
        tau = res.tau if res.accepted else math.inf
        tau_ref = exponential_variate(rng) / lam_ref if lam_ref > 0 else math.inf
        if tau <= tau_ref:
            if T + tau >= L:
                break
            T += tau
            x = x + tau * v
            try:
                v = reflect(v, target.grad_log_pi(x))
            except DegenerateGradient:
                v = uniform_direction(d, rng)
            bounces += 1
        else:
            if T + tau_ref >= L:
                break
            T += tau_ref
            x = x + tau_ref * v
            v = uniform_direction(d, rng)
            refreshes += 1
        times.append(T)
        xs.append(x)
        vs.append(v)
        if bounces + refreshes > config.max_events:
            raise RunawayChain(f"more than {config.max_events} events before T={L}")
    meta = {"sampler": "bps", "seed": config.seed, "lambda_ref": lam_ref,
            "n_events": bounces + refreshes, "n_bounces": bounces,
            "n_refreshes": refreshes, "proposals": proposals}
    return _finish(times, xs, vs, x, v, T, L, meta)


def run_gbps(config: RunConfig) -> Skeleton:
    """Generalized BPS: no refreshment, randomized velocity at each event."""
    target, L = config.target, float(config.path_length)
    x, rng = _start(config)
    d = target.d
    v = rng.standard_normal(d) if config.v0 is None else np.asarray(config.v0, dtype=float)
    T = 0.0
    times, xs, vs = [0.0], [x], [v]
    events = proposals = 0
    while True:
        res = sample_arrival(target.clock(x, v), rng, horizon=L - T)
        proposals += res.proposals
        if not res.accepted or T + res.tau >= L:
            break
        T += res.tau
        x = x + res.tau * v
        try:
            v = gbps_kernel(v, target.grad_log_pi(x), rng)
        except DegenerateGradient:
            v = rng.standard_normal(d)
        events += 1
        times.append(T)
        xs.append(x)
        vs.append(v)
        if events > config.max_events:
            raise RunawayChain(f"more than {config.max_events} events before T={L}")
    meta = {"sampler": "gbps", "seed": config.seed, "n_events": events, "proposals": proposals}
    return _finish(times, xs, vs, x, v, T, L, meta)


PROPOSAL_BLOCK = 256


def _next_single(target, x, v, bound, L_left, rng):
    """One proposal at a time against the full gradient.

    With a single datum every minibatch estimate equals the full gradient, so
    this draws exactly what the thinned full-gradient clock draws.
    """
    s, n = 0.0, 0
    while True:
        s += exponential_variate(rng) / bound
        n += 1
        if s > L_left:
            return None, n
        q = event_rate(v, target.grad_log_pi(x + s * v)) / bound
        if q > 1.0 + 1e-9:
            raise InvalidBound(f"acceptance ratio {q!r} > 1")
        if rng.random() < q:
            return s, n


def _next_blocked(Y, z, x, v, bound, scale, m, L_left, rng, block=PROPOSAL_BLOCK):
    """Vectorized thinning: draw proposals in blocks, keep the first accepted one.

    Between events the bound is constant, so proposal gaps, batches and
    uniforms are i.i.d.; draws past the first acceptance are discarded.
    """
    N = z.size
    Yx, Yv = Y @ x, Y @ v
    s, n = 0.0, 0
    while True:
        cum = s + np.cumsum(rng.standard_exponential(block)) / bound
        idx = (rng.random((block, m)) * N).astype(np.intp)
        u = rng.random(block)
        yv = Yv[idx]
        resid = z[idx] - expit(Yx[idx] + cum[:, None] * yv)
        q = np.maximum(0.0, -scale * np.einsum("ij,ij->i", resid, yv)) / bound
        live = cum <= L_left
        hit = np.flatnonzero((u < q) & live)
        last = int(hit[0]) if hit.size else block - 1
        if q[:last + 1].max() > 1.0 + 1e-9:
            raise InvalidBound(f"acceptance ratio {q[:last + 1].max()!r} > 1")
        if hit.size:
            return (float(cum[last]), idx[last]), n + last + 1
        if not live[-1]:
            return None, n + int(np.argmin(live)) + 1
        s, n = float(cum[-1]), n + block


def run_gbps_subsampled(config: RunConfig) -> Skeleton:
    """GBPS with the gradient replaced by an unbiased minibatch estimate.

    Proposals come from the constant bound of the current velocity; each is
    accepted with probability max(0, -<v, Delta>) / bound where Delta is
    (N / m) times the summed scores of m data drawn with replacement. Only
    accepted events are recorded.
    """
    target = config.target
    if not isinstance(target, LogisticModel):
        raise ContractViolation("subsampled GBPS needs a LogisticModel target")
    L, m, N = float(config.path_length), config.batch_size, target.N
    x, rng = _start(config)
    d = target.d
    v = rng.standard_normal(d) if config.v0 is None else np.asarray(config.v0, dtype=float)
    T = 0.0
    times, xs, vs = [0.0], [x], [v]
    events = proposals = 0
    Y, z, scale = target.Y, target.z, N / m
    while True:
        bound = target.bound(v)
        if not bound > 0:
            break
        if N == 1:
            found, n = _next_single(target, x, v, bound, L - T, rng)
        else:
            found, n = _next_blocked(Y, z, x, v, bound, scale, m, L - T, rng)
        proposals += n
        if found is None:
            break
        s, idx = (found, None) if N == 1 else found
        if T + s >= L:
            break
        T += s
        x = x + s * v
        try:
            g = target.grad_log_pi(x) if idx is None else target.grad_batch(x, idx)
            v = gbps_kernel(v, g, rng)
        except DegenerateGradient:
            v = rng.standard_normal(d)
        events += 1
        times.append(T)
        xs.append(x)
        vs.append(v)
        if events > config.max_events:
            raise RunawayChain(f"more than {config.max_events} events before T={L}")
    meta = {"sampler": "gbps_subsampled", "seed": config.seed, "n_events": events,
            "proposals": proposals, "batch_size": m,
            "acceptance_rate": events / proposals if proposals else 0.0}
    return _finish(times, xs, vs, x, v, T, L, meta)


def run(config: RunConfig) -> Skeleton:
    return {"bps": run_bps, "gbps": run_gbps, "gbps_subsampled": run_gbps_subsampled}[config.sampler](config)


def _mh_chain(logp, x0, scale, n, rng):
    d = x0.size
    out = np.empty((n, d))
    x, lp = x0.copy(), logp(x0)
    accepted = 0
    steps = rng.standard_normal((n, d)) * scale
    logu = np.log(rng.random(n))
    for i in range(n):
        y = x + steps[i]
        ly = logp(y)
        if logu[i] < ly - lp:
            x, lp = y, ly
            accepted += 1
        out[i] = x
    return out, accepted / n


def tune_mh_scale(target: TargetModel, x0, rng, lo=0.2, hi=0.5, pilot=2000, rounds=40) -> float:
    """Pilot runs rescaling the proposal until acceptance falls in [lo, hi]."""
    x = np.asarray(x0, dtype=float)
    scale = 2.4 / math.sqrt(target.d)
    for _ in range(rounds):
        chain, acc = _mh_chain(target.log_density, x, scale, pilot, rng)
        x = chain[-1]
        if lo <= acc <= hi:
            return scale
        # aim for ~0.3; clip the factor to avoid overshooting from a bad pilot
        scale *= min(3.0, max(1 / 3, math.exp(2.0 * (acc - 0.3))))
    return scale


def run_mh(target: TargetModel, config: MHConfig) -> MHResult:
    """Random-walk Metropolis with isotropic Gaussian proposals."""
    rng = np.random.default_rng(config.seed)
    x0 = np.zeros(target.d) if config.x0 is None else np.asarray(config.x0, dtype=float)
    scale = config.step_scale
    if scale is None:
        scale = tune_mh_scale(target, x0, rng)
    chain, acc = _mh_chain(target.log_density, x0, scale, config.n_iter, rng)
    samples = chain[config.burn_in:]
    meta = {"sampler": "mh", "seed": config.seed, "step_scale": scale,
            "acceptance_rate": acc, "n_iter": config.n_iter, "burn_in": config.burn_in}
    return MHResult(samples, acc, scale, meta)


# -- skeleton files ---------------------------------------------------------

def skeleton_to_csv(skel: Skeleton, path=None) -> str:
    d = skel.d
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["T"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)])
    for t, x, v in zip(skel.times, skel.positions, skel.velocities):
        w.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in v])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def write_skeleton(skel: Skeleton, csv_path, extra_meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<name>.csv`` plus a ``<name>.meta.json`` sidecar."""
    csv_path = Path(csv_path)
    skeleton_to_csv(skel, csv_path)
    meta = dict(skel.meta)
    meta.update({"d": skel.d, "t_final": skel.t_final, "n_records": len(skel)})
    if extra_meta:
        meta.update(extra_meta)
    meta_path = csv_path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, meta_path


def read_skeleton(csv_path) -> Skeleton:
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "T" or (len(header) - 1) % 2:
        raise ValueError(f"{csv_path}: expected columns T, x1..xd, v1..vd")
    d = (len(header) - 1) // 2
    data = np.array([[float(a) for a in r] for r in body]).reshape(-1, 2 * d + 1)
    meta_path = csv_path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Skeleton(data[:, 0], data[:, 1:d + 1], data[:, d + 1:], meta)
