"""Phase-space types, the event rate, BPS reflection and the GBPS velocity kernel."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ContractViolation(ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateGradient(ArithmeticError):
    """Gradient too small for the reflection / decomposition to be defined."""


def grad_tolerance(v: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.linalg.norm(v)))


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.v.shape or self.x.size < 1:
            raise ContractViolation(
                f"position and velocity must be 1-d of equal length, got {self.x.shape} and {self.v.shape}"
            )
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ContractViolation("phase state has non-finite entries")

    @property
    def d(self) -> int:
        return self.x.size


@dataclass
class Skeleton:
    """Event records of one PDMP trajectory.

    Row ``i`` holds the event time ``T_i`` together with the position and the
    velocity *after* the event. The last row is the truncation point of the
    path, so ``times[-1] == t_final``; its velocity is the one in force on the
    final segment.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape != self.velocities.shape:
            raise ContractViolation("positions/velocities must be (n, d) arrays of equal shape")
        if self.times.shape != (self.positions.shape[0],) or self.times.size < 1:
            raise ContractViolation("need one time per record and at least one record")

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def position_at(self, t) -> np.ndarray:
        """Position on the piecewise-linear path at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        idx = np.clip(idx, 0, self.times.size - 1)
        dt = (t - self.times[idx])[..., None]
        return self.positions[idx] + dt * self.velocities[idx]

    def velocity_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.velocities[np.clip(idx, 0, self.times.size - 1)]

    def check_flight(self, rtol: float = 1e-9) -> float:
        """Largest relative violation of ``x_{i+1} = x_i + (T_{i+1}-T_i) v_i``."""
        if self.times.size < 2:
            return 0.0
        dt = np.diff(self.times)[:, None]
        pred = self.positions[:-1] + dt * self.velocities[:-1]
        err = np.abs(pred - self.positions[1:])
        scale = 1.0 + np.abs(self.positions[1:])
        return float(np.max(err / scale))


def _check_pair(v, g):
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float)
    if v.shape != g.shape:
        raise ContractViolation(f"dimension mismatch: velocity {v.shape} vs gradient {g.shape}")
    return v, g


def event_rate(v, g) -> float:
    """max(0, -<v, g>) with ``g`` the gradient of the log target."""
    v, g = _check_pair(v, g)
    return max(0.0, -float(v @ g))


def decompose(v, g) -> tuple[np.ndarray, np.ndarray]:
    """Split ``v`` into its component along ``g`` and the orthogonal remainder."""
    v, g = _check_pair(v, g)
    gg = float(g @ g)
    if np.sqrt(gg) <= grad_tolerance(v):
        raise DegenerateGradient("gradient norm below tolerance")
    v_par = (float(v @ g) / gg) * g
    return v_par, v - v_par


def reflect(v, g) -> np.ndarray:
    """BPS bounce: mirror ``v`` in the hyperplane orthogonal to ``g``."""
    v, g = _check_pair(v, g)
    gg = float(g @ g)
    if np.sqrt(gg) <= grad_tolerance(v):
        raise DegenerateGradient("gradient norm below tolerance")
    return v - (2.0 * float(v @ g) / gg) * g


def orthonormal_complement(g) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to ``g``, shape (d, d-1).

    Gram-Schmidt on the standard basis, skipping the axis most aligned with
    ``g``. Deterministic in ``g``.
    """
    g = np.asarray(g, dtype=float)
    d = g.size
    u = g / np.linalg.norm(g)
    skip = int(np.argmax(np.abs(u)))
    basis = [u]
    for k in range(d):
        if k == skip:
            continue
        w = np.zeros(d)
        w[k] = 1.0
        for b in basis:
            w -= (w @ b) * b
        # second pass keeps the basis orthogonal to machine precision
        for b in basis:
            w -= (w @ b) * b
        basis.append(w / np.linalg.norm(w))
    return np.array(basis[1:]).T.reshape(d, d - 1)


def gbps_kernel(v, g, rng: np.random.Generator) -> np.ndarray:
    """GBPS transition: flip the part of ``v`` along ``g``, redraw the rest.

    The orthogonal part is a standard normal on the hyperplane orthogonal to
    ``g``. Raises DegenerateGradient when ``g`` is (numerically) zero; the
    samplers then redraw the full velocity.
    """
    v_par, _ = decompose(v, g)
    d = v_par.size
    if d == 1:
        return -v_par
    basis = orthonormal_complement(g)
    return -v_par + basis @ rng.standard_normal(d - 1)


def uniform_direction(d: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        w = rng.standard_normal(d)
        n = np.linalg.norm(w)
        if n > 0:
            return w / n
