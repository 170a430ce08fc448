"""Estimators built from skeletons and the diagnostics suite."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ContractViolation, Skeleton


@dataclass
class DiscretizedSample:
    points: np.ndarray
    times: np.ndarray
    source: str = ""
    estimate: float | np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]


def discretize_path(skeleton: Skeleton, n: int | None = None,
                    h: Callable | None = None) -> DiscretizedSample:
    """Positions at the equally spaced times i * T / n, i = 1..n.

    ``n`` defaults to round(T), i.e. unit gap. With ``h`` the sample mean of
    ``h`` over the points is returned as ``estimate``.
    """
    T = skeleton.t_final
    if n is None:
        n = max(1, int(round(T)))
    if n < 1:
        raise ContractViolation("n must be >= 1")
    times = T * np.arange(1, n + 1) / n
    points = skeleton.position_at(times)
    est = None
    if h is not None:
        vals = np.array([h(p) for p in points], dtype=float)
        est = vals.mean(axis=0)
    return DiscretizedSample(points, times, str(skeleton.meta.get("sampler", "")), est)


def autocorrelation(x) -> np.ndarray:
    """Empirical autocorrelation at all lags (biased, FFT based)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def ess(series) -> float:
    """Effective sample size by Geyer's initial positive sequence.

    Sums autocorrelation pairs rho_{2k} + rho_{2k+1} while they stay
    positive. Antithetic chains can exceed n; the integrated time is floored
    at 1/log10(n). A zero-variance series returns n.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 10:
        raise ContractViolation("ESS needs at least 10 values")
    if np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    if rho[0] == 0:
        return float(n)
    m = (n - 1) // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m:2]
    nonpos = np.nonzero(pairs <= 0)[0]
    k = nonpos[0] if nonpos.size else pairs.size
    tau = -1.0 + 2.0 * float(np.sum(pairs[:k]))
    tau = max(tau, 1.0 / math.log10(n))
    return n / tau


def moments(sample) -> dict:
    """Per-component mean and raw second moment, with ESS-based standard errors.

    The ESS used for the standard errors is capped at n so a noisy estimate on
    an antithetic chain never claims better than independent draws.
    """
    pts = np.asarray(sample.points if isinstance(sample, DiscretizedSample) else sample, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n < 1:
        raise ContractViolation("empty sample")
    mean = pts.mean(axis=0)
    second = (pts ** 2).mean(axis=0)
    se_mean, se_second, ess_mean, ess_second = [], [], [], []
    for k in range(d):
        for col, se_list, ess_list in ((pts[:, k], se_mean, ess_mean),
                                       (pts[:, k] ** 2, se_second, ess_second)):
            e = min(ess(col), float(n)) if n >= 10 else float(n)
            ess_list.append(e)
            se_list.append(float(np.std(col) / math.sqrt(e)))
    return {"n": n, "mean": mean.tolist(), "second": second.tolist(),
            "se_mean": se_mean, "se_second": se_second,
            "ess_mean": ess_mean, "ess_second": ess_second}


def _match_sizes(a, b, rng):
    if a.shape[0] == b.shape[0]:
        return a, b
    if a.shape[0] < b.shape[0]:
        return a[rng.integers(a.shape[0], size=b.shape[0])], b
    return a, b[rng.integers(b.shape[0], size=a.shape[0])]


def wasserstein2_1d(a, b, seed: int = 0) -> float:
    """W2 between two 1-d empirical measures by the sorted (quantile) coupling.

    Unequal sizes: the smaller sample is resampled with replacement up to
    the larger size.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractViolation("empty sample")
    a, b = _match_sizes(a, b, np.random.default_rng(seed))
    diff = np.sort(a) - np.sort(b)
    return math.sqrt(math.fsum(diff * diff) / diff.size)


def assignment_w2(a, b) -> float:
    """Exact W2 between two equal-size point clouds via optimal assignment."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(math.fsum(cost[rows, cols]) / a.shape[0])


def wasserstein2_2d(a, b, m: int = 500, seed: int = 0) -> float:
    """W2 on uniform m-point subsamples of each set, solved as an assignment.

    When both sets have the same size the same row indices are used for
    both, so identical inputs give exactly zero.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if m < 1:
        raise ContractViolation("m must be >= 1")
    if m > min(a.shape[0], b.shape[0]):
        raise ContractViolation(f"m={m} exceeds sample sizes {a.shape[0]}, {b.shape[0]}")
    rng = np.random.default_rng(seed)
    ia = np.sort(rng.choice(a.shape[0], m, replace=False))
    ib = ia if b.shape[0] == a.shape[0] else np.sort(rng.choice(b.shape[0], m, replace=False))
    return assignment_w2(a[ia], b[ib])


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if spread <= 0:
        # single point or constant data
        return 1.0
    return 0.9 * spread * n ** (-0.2)


def make_grid(spec) -> np.ndarray:
    if isinstance(spec, np.ndarray):
        return spec
    spec = tuple(spec)
    if len(spec) == 3:
        lo, hi, num = spec
        return np.linspace(float(lo), float(hi), int(num))
    return np.asarray(spec, dtype=float)


def kde_marginal(values, grid=(-4.0, 4.0, 201), bandwidth: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE on a uniform grid; returns (grid, density)."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ContractViolation("empty sample")
    g = make_grid(grid)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    dens = np.empty(g.size)
    norm = 1.0 / (x.size * h * math.sqrt(2 * math.pi))
    chunk = max(1, 4_000_000 // x.size)
    for s in range(0, g.size, chunk):
        u = (g[s:s + chunk, None] - x[None, :]) / h
        dens[s:s + chunk] = np.exp(-0.5 * u * u).sum(axis=1) * norm
    return g, dens


@dataclass
class Collinearity:
    reducible: bool
    max_deviation: float
    extent: float


def collinearity_check(skeleton, direction=None) -> Collinearity:
    """Does the path stay on the line through x_0 along v_0?

    Accepts a Skeleton or an (n, d) array of points; for bare points the
    direction defaults to x_1 - x_0.
    """
    if isinstance(skeleton, Skeleton):
        pts = skeleton.positions
        if direction is None:
            direction = skeleton.velocities[0]
    else:
        pts = np.atleast_2d(np.asarray(skeleton, dtype=float))
    if pts.shape[0] < 2:
        raise ContractViolation("need at least two points")
    x0 = pts[0]
    if direction is None:
        direction = pts[1] - pts[0]
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    rel = pts - x0
    along = rel @ u
    perp = rel - along[:, None] * u
    dev = float(np.max(np.linalg.norm(perp, axis=1)))
    extent = float(np.max(np.linalg.norm(rel, axis=1)))
    return Collinearity(dev < 1e-6 * (1.0 + extent), dev, extent)


@dataclass
class DiagnosticsReport:
    n: int
    mean: list
    second: list
    se_mean: list
    se_second: list
    ess: list
    w2_2d: float | None = None
    w2_marginals: list | None = None
    kde: dict = field(default_factory=dict)
    reducibility: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def diagnose(source, target=None, n: int | None = None, reference=None,
             w2_m: int = 500, seed: int = 0, grid=None, meta=None) -> DiagnosticsReport:
    """Full diagnostics for a skeleton (discretized first) or a point sample.

    The reference for the W2 distances is ``reference`` if given, otherwise
    an exact draw of the same size from ``target`` when it has one.
    """
    red = None
    if isinstance(source, Skeleton):
        c = collinearity_check(source) if len(source) >= 2 else None
        if c is not None:
            red = {"reducible": c.reducible, "max_deviation": c.max_deviation,
                   "min_radius": float(np.min(np.linalg.norm(source.positions, axis=1)))}
        pts = discretize_path(source, n).points
    else:
        pts = np.atleast_2d(np.asarray(source, dtype=float))
    npts, d = pts.shape
    mom = moments(pts)
    rng = np.random.default_rng(seed)
    if reference is None and target is not None:
        reference = target.exact_sample(npts, rng)
    w2, w2m = None, None
    if reference is not None:
        reference = np.atleast_2d(np.asarray(reference, dtype=float))
        m = min(w2_m, npts, reference.shape[0])
        w2 = wasserstein2_2d(pts, reference, m=m, seed=seed)
        w2m = [wasserstein2_1d(pts[:, k], reference[:, k], seed=seed) for k in range(d)]
    kde = {}
    for k in range(d):
        col = pts[:, k]
        if grid is None:
            lo, hi = col.mean() - 4 * col.std() - 1e-9, col.mean() + 4 * col.std() + 1e-9
            gspec = (lo, hi, 201)
        else:
            gspec = grid
        g, dens = kde_marginal(col, gspec)
        entry = {"grid": g.tolist(), "density": dens.tolist()}
        if target is not None and hasattr(target, "marginal_pdf"):
            entry["true"] = np.asarray(target.marginal_pdf(k, g)).tolist()
        kde[f"x{k + 1}"] = entry
    return DiagnosticsReport(
        n=npts, mean=mom["mean"], second=mom["second"], se_mean=mom["se_mean"],
        se_second=mom["se_second"], ess=mom["ess_mean"], w2_2d=w2, w2_marginals=w2m,
        kde=kde, reducibility=red, meta=dict(meta or {}),
    )
