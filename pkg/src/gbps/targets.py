"""Target distributions: log-density gradients, event clocks and rate bounds."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import norm

from .clocks import AbsLinear, Constant, Linear, Superposition, Thinned
from .core import ContractViolation, event_rate


class TargetModel:
    """Interface the samplers rely on.

    Subclasses provide ``grad_log_pi`` and ``clock``; ``log_density`` and
    ``exact_sample`` are optional (MH baseline and reference draws).
    """

    name = "target"
    d: int

    def grad_log_pi(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x: np.ndarray) -> float:
        raise NotImplementedError(f"{self.name} has no log density")

    def clock(self, x: np.ndarray, v: np.ndarray):
        """Event clock along the ray ``x + t v``."""
        raise NotImplementedError

    def exact_sample(self, n: int, rng: np.random.Generator) -> np.ndarray | None:
        return None

    def describe(self) -> dict:
        return {"id": self.name, "d": self.d}


class IsotropicGaussian(TargetModel):
    name = "gaussian"

    def __init__(self, d: int = 2):
        if d < 1:
            raise ContractViolation("dimension must be >= 1")
        self.d = d

    def grad_log_pi(self, x):
        return gaussian_grad(x)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * float(x @ x)

    def clock(self, x, v):
        return gaussian_clock(x, v)

    def exact_sample(self, n, rng):
        return rng.standard_normal((n, self.d))

    def marginal_pdf(self, k: int, grid) -> np.ndarray:
        return norm.pdf(grid)


def gaussian_grad(x) -> np.ndarray:
    return -np.asarray(x, dtype=float)


def gaussian_clock(x, v) -> Linear:
    # <v, x + t v> = <v, x> + t |v|^2
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return Linear(float(v @ x), float(v @ v))


class GaussianMixture2D(TargetModel):
    """Two axis-aligned Gaussians centred at (3, 0) and (0, 3).

    Component one has weight ``p`` and scales (s1, s2); component two has
    weight ``1 - p`` and scales (s3, s4).
    """

    name = "mixture"
    d = 2

    def __init__(self, p: float = 0.5, sigmas=(1.0, 1.5, 2.0, 1.0)):
        if not 0.0 <= p <= 1.0:
            raise ContractViolation(f"weight p must lie in [0, 1], got {p}")
        sigmas = tuple(float(s) for s in sigmas)
        if len(sigmas) != 4 or min(sigmas) <= 0:
            raise ContractViolation(f"need four positive scales, got {sigmas}")
        self.p = float(p)
        self.sigmas = sigmas
        s1, s2, s3, s4 = sigmas
        self._logw = (
            math.log(p) - math.log(2 * math.pi * s1 * s2) if p > 0 else -math.inf,
            math.log(1 - p) - math.log(2 * math.pi * s3 * s4) if p < 1 else -math.inf,
        )

    def _component_logs(self, x):
        s1, s2, s3, s4 = self.sigmas
        x1, x2 = float(x[0]), float(x[1])
        l1 = self._logw[0] - (x1 - 3.0) ** 2 / (2 * s1 * s1) - x2 * x2 / (2 * s2 * s2)
        l2 = self._logw[1] - x1 * x1 / (2 * s3 * s3) - (x2 - 3.0) ** 2 / (2 * s4 * s4)
        return l1, l2

    def log_density(self, x):
        return float(np.logaddexp(*self._component_logs(x)))

    def grad_log_pi(self, x):
        return mixture_grad(self, x)

    def clock(self, x, v):
        return mixture_clock(self, x, v)

    def exact_sample(self, n, rng):
        s1, s2, s3, s4 = self.sigmas
        first = rng.random(n) < self.p
        eps = rng.standard_normal((n, 2))
        out = np.empty((n, 2))
        out[:, 0] = np.where(first, 3.0 + s1 * eps[:, 0], s3 * eps[:, 0])
        out[:, 1] = np.where(first, s2 * eps[:, 1], 3.0 + s4 * eps[:, 1])
        return out

    def marginal_pdf(self, k: int, grid) -> np.ndarray:
        s1, s2, s3, s4 = self.sigmas
        p = self.p
        if k == 0:
            return p * norm.pdf(grid, 3.0, s1) + (1 - p) * norm.pdf(grid, 0.0, s3)
        return p * norm.pdf(grid, 0.0, s2) + (1 - p) * norm.pdf(grid, 3.0, s4)

    def true_moments(self):
        """Per-component means and raw second moments."""
        s1, s2, s3, s4 = self.sigmas
        p, q = self.p, 1.0 - self.p
        mean = [3.0 * p, 3.0 * q]
        second = [p * (9.0 + s1 * s1) + q * s3 * s3, p * s2 * s2 + q * (9.0 + s4 * s4)]
        return mean, second

    def describe(self):
        return {"id": self.name, "d": 2, "p": self.p, "sigmas": list(self.sigmas)}


def mixture_grad(model: GaussianMixture2D, x) -> np.ndarray:
    """grad pi / pi, weighting each component's score by its responsibility."""
    s1, s2, s3, s4 = model.sigmas
    l1, l2 = model._component_logs(x)
    top = max(l1, l2)
    e1, e2 = math.exp(l1 - top), math.exp(l2 - top)
    w1 = e1 / (e1 + e2)
    w2 = 1.0 - w1 if l2 != -math.inf else 0.0
    x1, x2 = float(x[0]), float(x[1])
    return np.array([
        w1 * (-(x1 - 3.0) / (s1 * s1)) + w2 * (-x1 / (s3 * s3)),
        w1 * (-x2 / (s2 * s2)) + w2 * (-(x2 - 3.0) / (s4 * s4)),
    ])


def mixture_clock(model: GaussianMixture2D, x, v) -> Thinned:
    """Thinned event clock under the four-term |.| bound times |v|."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    s1, s2, s3, s4 = model.sigmas
    speed = float(np.linalg.norm(v))
    x1, x2, v1, v2 = float(x[0]), float(x[1]), float(v[0]), float(v[1])
    bound = Superposition((
        AbsLinear(x1, v1, 3.0, s1, speed),
        AbsLinear(x1, v1, 0.0, s3, speed),
        AbsLinear(x2, v2, 0.0, s2, speed),
        AbsLinear(x2, v2, 3.0, s4, speed),
    ))

    def true_rate(t):
        return event_rate(v, mixture_grad(model, x + t * v))

    return Thinned(bound, true_rate)


class LogisticModel(TargetModel):
    """Bayesian logistic regression posterior under a flat prior.

    ``Y`` is the (N, d) covariate matrix, ``z`` the 0/1 labels.
    """

    name = "logistic"

    def __init__(self, Y, z, subsample_size: int = 10):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        z = np.asarray(z, dtype=float).reshape(-1)
        if Y.shape[0] != z.size or z.size < 1:
            raise ContractViolation("need one label per covariate row")
        if not np.all((z == 0) | (z == 1)):
            raise ContractViolation("labels must be 0 or 1")
        self.Y = Y
        self.z = z
        self.N, self.d = Y.shape
        self.subsample_size = int(subsample_size)
        # per-coordinate max_j |y_j^k|, drives the subsampling bound
        self._ymax = np.max(np.abs(Y), axis=0)

    def log_density(self, x):
        s = self.Y @ np.asarray(x, dtype=float)
        return float(np.sum(self.z * s - np.logaddexp(0.0, s)))

    def grad_log_pi(self, x):
        return logistic_grad(self, x)

    def grad_batch(self, x, idx) -> np.ndarray:
        """(N / m) * sum of per-datum scores over the index batch ``idx``."""
        Yb = self.Y[idx]
        r = self.z[idx] - expit(Yb @ x)
        return (self.N / len(idx)) * (Yb.T @ r)

    def bound(self, v) -> float:
        return logistic_bound(self, v)

    def lambda_plus(self) -> float:
        """max_k sum_j |y_j^k|, the velocity-free bound on each partial derivative."""
        return float(np.max(np.sum(np.abs(self.Y), axis=0)))

    def clock(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)

        def true_rate(t):
            return event_rate(v, self.grad_log_pi(x + t * v))

        return Thinned(Constant(self.bound(v)), true_rate)

    def describe(self):
        return {"id": self.name, "d": self.d, "N": self.N, "subsample_size": self.subsample_size}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"y{k + 1}" for k in range(self.d)] + ["z"])
        for row, label in zip(self.Y, self.z):
            w.writerow([repr(float(a)) for a in row] + [int(label)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path, subsample_size: int = 10) -> "LogisticModel":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "z":
            raise ValueError(f"{path}: last column must be 'z'")
        data = np.array([[float(a) for a in r] for r in body])
        return cls(data[:, :-1], data[:, -1], subsample_size)


def logistic_grad(model: LogisticModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = model.z - expit(model.Y @ x)
    return model.Y.T @ r


def posterior_mode(model: LogisticModel, x0=None) -> np.ndarray:
    """Maximum-likelihood point by BFGS; the origin if the optimizer diverges."""
    x0 = np.zeros(model.d) if x0 is None else np.asarray(x0, dtype=float)
    res = minimize(lambda x: -model.log_density(x), x0, jac=lambda x: -logistic_grad(model, x),
                   method="BFGS")
    return res.x if np.all(np.isfinite(res.x)) and np.linalg.norm(res.x) < 1e3 else x0


def logistic_grad_subsampled(model: LogisticModel, x, index: int) -> np.ndarray:
    """N times the score of datum ``index`` (0-based); unbiased for the full gradient."""
    if not 0 <= index < model.N:
        raise IndexError(f"datum index {index} outside [0, {model.N})")
    return model.grad_batch(np.asarray(x, dtype=float), [index])


def logistic_bound(model: LogisticModel, v) -> float:
    """sum_k |v_k| N max_j |y_j^k|; dominates max(0, -<v, Delta>) for any index."""
    v = np.asarray(v, dtype=float)
    return float(model.N * (np.abs(v) @ model._ymax))


def generate_logistic_data(d: int, N: int, x_true, rng: np.random.Generator,
                           subsample_size: int = 10) -> LogisticModel:
    if d < 1 or N < 1:
        raise ContractViolation("d and N must be >= 1")
    x_true = np.asarray(x_true, dtype=float)
    Y = rng.standard_normal((N, d))
    z = (rng.random(N) < expit(Y @ x_true)).astype(float)
    return LogisticModel(Y, z, subsample_size)


def make_target(spec: dict, base_dir=None) -> TargetModel:
    """Build a target from its ``describe()``-style dict."""
    kind = spec.get("id")
    if kind == "gaussian":
        return IsotropicGaussian(int(spec.get("d", 2)))
    if kind == "mixture":
        return GaussianMixture2D(spec.get("p", 0.5), spec.get("sigmas", (1.0, 1.5, 2.0, 1.0)))
    if kind == "logistic":
        path = Path(spec["data_csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return LogisticModel.from_csv(path, spec.get("subsample_size", 10))
    raise ValueError(f"unknown target id {kind!r}")
