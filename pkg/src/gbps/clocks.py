"""First-arrival times of Poisson clocks along a flight ray.

A clock describes an intensity ``t -> rate(t)`` for ``t >= 0`` measured from
the current state. Analytic clocks are simulated by inverting the integrated
rate at an exponential variate; everything else goes through superposition
and thinning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import ContractViolation

MAX_PROPOSALS = 10_000_000


class NoArrival(Exception):
    """The clock has finite total mass and may never fire."""


class InvalidBound(ValueError):
    """A thinning bound was found below the true rate."""


class BoundTooLoose(RuntimeError):
    """Thinning exceeded the proposal safety cap."""


@dataclass
class ArrivalResult:
    tau: float
    proposals: int = 1
    accepted: bool = True


def exponential_variate(rng) -> float:
    """-log(V), V ~ U(0, 1)."""
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return -math.log(u)


def linear_inverse(a: float, b: float, z: float) -> float:
    """Inverse of t -> int_0^t max(0, a + b s) ds evaluated at z.

    Returns inf when the integrated rate never reaches z.
    """
    if b < 0:
        raise ContractViolation(f"linear clock slope must be >= 0, got {b}")
    if b == 0.0:
        return z / a if a > 0 else math.inf
    if a >= 0:
        # a t + b t^2 / 2 = z, rationalized root
        return 2.0 * z / (a + math.sqrt(a * a + 2.0 * b * z))
    return -a / b + math.sqrt(2.0 * z / b)


def abs_linear_inverse(x: float, v: float, mu: float, sigma: float, z: float) -> float:
    """Inverse of the integrated rate |x + s v - mu| / sigma^2 at z.

    The four sign cases of (x - mu, v). Roots of the form sqrt(A) - B are
    written as (A - B^2) / (sqrt(A) + B) to avoid cancellation; the values are
    the same closed forms.
    """
    if sigma <= 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")
    s2 = sigma * sigma
    d = x - mu
    if v == 0.0:
        if d == 0.0:
            return math.inf
        return z * s2 / abs(d)
    r = d / v
    if d > 0 and v > 0:  # i) moving away above mu
        q = 2.0 * s2 * z / v
        return q / (math.sqrt(q + r * r) + r)
    if d <= 0 and v < 0:  # ii) moving away below mu (or starting at it)
        q = -2.0 * s2 * z / v
        return q / (math.sqrt(q + r * r) + r)
    t0 = -r
    if d > 0:  # iii) v < 0, heading down through mu
        corner = -d * d / (2.0 * v * s2)
        if z > corner:
            return t0 + math.sqrt(max(0.0, -2.0 * s2 * z / v - r * r))
        q = -2.0 * s2 * z / v
        return q / (t0 + math.sqrt(max(0.0, r * r - q)))
    # iv) d <= 0, v > 0, heading up through mu
    corner = d * d / (2.0 * v * s2)
    if z > corner:
        return t0 + math.sqrt(max(0.0, 2.0 * s2 * z / v - r * r))
    q = 2.0 * s2 * z / v
    return q / (t0 + math.sqrt(max(0.0, r * r - q)))


@dataclass(frozen=True)
class Constant:
    rate_value: float

    def __post_init__(self):
        if self.rate_value < 0:
            raise ContractViolation(f"constant rate must be >= 0, got {self.rate_value}")

    def rate(self, t: float) -> float:
        return self.rate_value

    def shifted(self, t: float) -> "Constant":
        return self

    def _draw(self, rng, horizon=math.inf):
        if self.rate_value == 0.0:
            return math.inf, 0
        return exponential_variate(rng) / self.rate_value, 1


@dataclass(frozen=True)
class Linear:
    """Rate max(0, a + b t)."""

    a: float
    b: float

    def __post_init__(self):
        if self.b < 0:
            raise ContractViolation(f"linear clock slope must be >= 0, got {self.b}")

    def rate(self, t: float) -> float:
        return max(0.0, self.a + self.b * t)

    def shifted(self, t: float) -> "Linear":
        return Linear(self.a + self.b * t, self.b)

    def _draw(self, rng, horizon=math.inf):
        if self.b == 0.0 and self.a <= 0.0:
            return math.inf, 0
        return linear_inverse(self.a, self.b, exponential_variate(rng)), 1


@dataclass(frozen=True)
class AbsLinear:
    """Rate scale_mult * |x + t v - mu| / sigma^2 on a scalar coordinate ray."""

    x: float
    v: float
    mu: float
    sigma: float
    scale_mult: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ContractViolation(f"sigma must be > 0, got {self.sigma}")
        if self.scale_mult < 0:
            raise ContractViolation(f"scale_mult must be >= 0, got {self.scale_mult}")

    def rate(self, t: float) -> float:
        return self.scale_mult * abs(self.x + t * self.v - self.mu) / (self.sigma * self.sigma)

    def shifted(self, t: float) -> "AbsLinear":
        return AbsLinear(self.x + t * self.v, self.v, self.mu, self.sigma, self.scale_mult)

    def _draw(self, rng, horizon=math.inf):
        if self.scale_mult == 0.0 or (self.v == 0.0 and self.x == self.mu):
            return math.inf, 0
        z = exponential_variate(rng) / self.scale_mult
        return abs_linear_inverse(self.x, self.v, self.mu, self.sigma, z), 1


@dataclass(frozen=True)
class Superposition:
    clocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "clocks", tuple(self.clocks))
        if not self.clocks:
            raise ContractViolation("superposition needs at least one clock")

    def rate(self, t: float) -> float:
        return sum(c.rate(t) for c in self.clocks)

    def shifted(self, t: float) -> "Superposition":
        return Superposition(tuple(c.shifted(t) for c in self.clocks))

    def _draw_indexed(self, rng, horizon=math.inf):
        best, best_i, n = math.inf, -1, 0
        for i, c in enumerate(self.clocks):
            tau, k = c._draw(rng, horizon)
            n += k
            if tau < best:
                best, best_i = tau, i
        return best, best_i, n

    def _draw(self, rng, horizon=math.inf):
        tau, _, n = self._draw_indexed(rng, horizon)
        return tau, n


@dataclass(frozen=True)
class Thinned:
    """True rate ``true_rate(t)`` simulated by thinning a dominating clock."""

    bound: object
    true_rate: Callable[[float], float]

    def rate(self, t: float) -> float:
        return self.true_rate(t)

    def shifted(self, t: float) -> "Thinned":
        f = self.true_rate
        return Thinned(self.bound.shifted(t), lambda s: f(t + s))

    def _draw(self, rng, horizon=math.inf):
        res = _thin(self.bound, self.true_rate, rng, horizon)
        return res.tau, res.proposals


ClockSpec = Constant | Linear | AbsLinear | Superposition | Thinned


def _thin(bound, true_rate, rng, horizon=math.inf, max_proposals=MAX_PROPOSALS) -> ArrivalResult:
    t = 0.0
    clock = bound
    proposals = 0
    while True:
        tau, _ = clock._draw(rng)
        if tau == math.inf:
            return ArrivalResult(math.inf, proposals, False)
        proposals += 1
        t += tau
        if t > horizon:
            return ArrivalResult(t, proposals, False)
        lam_bound = bound.rate(t)
        lam = true_rate(t)
        if lam > lam_bound * (1.0 + 1e-9) + 1e-300:
            raise InvalidBound(f"true rate {lam!r} exceeds bound {lam_bound!r} at t={t!r}")
        ratio = lam / lam_bound if lam_bound > 0 else 0.0
        if rng.random() < ratio:
            return ArrivalResult(t, proposals, True)
        if proposals >= max_proposals:
            raise BoundTooLoose(f"no acceptance after {proposals} proposals")
        clock = bound.shifted(t)


def sample_arrival(clock, rng, horizon=math.inf) -> ArrivalResult:
    """First arrival of any clock; ``tau`` is inf when it never fires.

    With a finite ``horizon`` a thinned clock stops at the first proposal past
    it and reports ``accepted=False``; the caller truncates there anyway.
    """
    if isinstance(clock, Thinned):
        return _thin(clock.bound, clock.true_rate, rng, horizon)
    tau, n = clock._draw(rng, horizon)
    return ArrivalResult(tau, n, tau < math.inf)


def first_arrival_constant(rate: float, rng) -> float:
    if rate < 0:
        raise ContractViolation(f"rate must be >= 0, got {rate}")
    if rate == 0:
        raise NoArrival("zero rate")
    return exponential_variate(rng) / rate


def first_arrival_linear(a: float, b: float, rng) -> float:
    if b < 0:
        raise ContractViolation(f"slope must be >= 0, got {b}")
    if a <= 0 and b == 0:
        raise NoArrival("rate max(0, a) with a <= 0 is identically zero")
    return linear_inverse(a, b, exponential_variate(rng))


def first_arrival_abs_linear(x: float, v: float, mu: float, sigma: float, z: float) -> float:
    if x == mu and v == 0:
        raise NoArrival("rate is identically zero")
    return abs_linear_inverse(x, v, mu, sigma, z)


def first_arrival_superposition(clocks: Sequence, rng) -> tuple[float, int]:
    """Minimum over independent sub-clocks and the index of the winner."""
    tau, idx, _ = Superposition(tuple(clocks))._draw_indexed(rng)
    if tau == math.inf:
        raise NoArrival("no sub-clock fires")
    return tau, idx


def first_arrival_thinned(bound, true_rate: Callable[[float], float], rng,
                          max_proposals: int = MAX_PROPOSALS) -> ArrivalResult:
    res = _thin(bound, true_rate, rng, max_proposals=max_proposals)
    if res.tau == math.inf:
        raise NoArrival("bound clock never fires")
    return res
