import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gbps.analysis import (
    collinearity_check,
    diagnose,
    discretize_path,
    ess,
    kde_marginal,
    moments,
    silverman_bandwidth,
    wasserstein2_1d,
    wasserstein2_2d,
)
from gbps.core import ContractViolation, Skeleton
from gbps.samplers import RunConfig, run_gbps
from gbps.targets import GaussianMixture2D, IsotropicGaussian


def two_segment():
    # (0,0) heading +x until T=1, then +y until T=3
    return Skeleton([0.0, 1.0, 3.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]],
                    [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])


# -- discretization ------------------------------------------------------------------

def test_discretize_single_segment():
    sk = Skeleton([0.0, 2.0], [[0.0, 0.0], [2.0, 0.0]], [[1.0, 0.0], [1.0, 0.0]])
    ds = discretize_path(sk, 2)
    np.testing.assert_array_equal(ds.points, [[1.0, 0.0], [2.0, 0.0]])
    assert ds.n == 2


def test_discretize_two_segments():
    ds = discretize_path(two_segment(), 6)
    np.testing.assert_array_equal(ds.times, [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    np.testing.assert_array_equal(ds.points, [[0.5, 0], [1, 0], [1, 0.5], [1, 1], [1, 1.5], [1, 2]])


def test_discretize_constant_h():
    sk = run_gbps(RunConfig(IsotropicGaussian(2), "gbps", 37.0, seed=0))
    assert discretize_path(sk, h=lambda x: 1.0).estimate == 1.0
    assert discretize_path(sk).n == 37


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 500))
def test_discretize_points_on_segments(seed, n):
    sk = run_gbps(RunConfig(IsotropicGaussian(2), "gbps", 30.0, seed=seed))
    ds = discretize_path(sk, n)
    # dense reconstruction: walk the skeleton segment by segment
    for t, p in zip(ds.times, ds.points):
        i = max(0, np.searchsorted(sk.times, t, side="right") - 1)
        expect = sk.positions[i] + (t - sk.times[i]) * sk.velocities[i]
        np.testing.assert_allclose(p, expect, rtol=0, atol=1e-12)


# -- moments and ESS ---------------------------------------------------------------------

def test_moments_examples():
    mo = moments(np.array([[1.0, 1.0], [-1.0, -1.0]]))
    assert mo["mean"] == [0.0, 0.0] and mo["second"] == [1.0, 1.0]
    mo = moments(np.full((50, 2), 3.0))
    assert mo["mean"] == [3.0, 3.0] and mo["se_mean"] == [0.0, 0.0] and mo["second"] == [9.0, 9.0]


def test_moments_iid_normal():
    x = np.random.default_rng(0).standard_normal(100_000)
    mo = moments(x)
    assert abs(mo["mean"][0]) < 3 / math.sqrt(1e5)
    assert mo["ess_mean"][0] <= 1e5


def test_ess_iid():
    x = np.random.default_rng(1).standard_normal(10_000)
    assert 8_000 <= ess(x) <= 12_000


def test_ess_ar1():
    rng = np.random.default_rng(2)
    n, rho = 100_000, 0.9
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho ** 2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    expect = n * (1 - rho) / (1 + rho)
    assert abs(ess(x) - expect) <= 0.2 * expect


def test_ess_alternating_and_constant():
    alt = np.tile([1.0, -1.0], 500)
    assert ess(alt) >= alt.size
    assert ess(np.ones(100)) == 100
    with pytest.raises(ContractViolation):
        ess(np.arange(5.0))


# -- Wasserstein ------------------------------------------------------------------------

def test_w2_1d_examples():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(1000)
    assert wasserstein2_1d(a, a) == 0.0
    assert wasserstein2_1d(a, a + 2.5) == pytest.approx(2.5, rel=1e-12)
    b = rng.normal(1.0, 1.0, 10_000)
    assert abs(wasserstein2_1d(rng.standard_normal(10_000), b) - 1.0) < 0.05
    with pytest.raises(ContractViolation):
        wasserstein2_1d([], [1.0])


def test_w2_1d_unequal_sizes():
    rng = np.random.default_rng(4)
    assert wasserstein2_1d(rng.standard_normal(300), rng.standard_normal(1000)) < 0.3


def brute_w2(a, b):
    m = a.shape[0]
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    perms = np.array(list(itertools.permutations(range(m))))
    return math.sqrt(cost[np.arange(m), perms].sum(axis=1).min() / m)


def test_w2_2d_brute_force_m8():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a, b = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
        assert wasserstein2_2d(a, b, m=8) == pytest.approx(brute_w2(a, b), rel=1e-12)


def test_w2_2d_examples():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((800, 2))
    assert wasserstein2_2d(a, a) == 0.0
    assert wasserstein2_2d(a, a + [1.0, 0.0]) == pytest.approx(1.0, rel=1e-12)
    b = rng.standard_normal((800, 2))
    small, large = wasserstein2_2d(a, b, m=50, seed=1), wasserstein2_2d(a, b, m=500, seed=1)
    assert 0 < large < small
    with pytest.raises(ContractViolation):
        wasserstein2_2d(a, b, m=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_w2_metric_properties(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal((40, 2)) * rng.uniform(0.5, 2) for _ in range(3))
    ab, ba = wasserstein2_2d(a, b, m=40), wasserstein2_2d(b, a, m=40)
    assert ab == pytest.approx(ba, rel=1e-12)
    assert ab <= wasserstein2_2d(a, c, m=40) + wasserstein2_2d(c, b, m=40) + 1e-12
    x, y, w = (rng.standard_normal(100) for _ in range(3))
    assert wasserstein2_1d(x, y) <= wasserstein2_1d(x, w) + wasserstein2_1d(w, y) + 1e-12


# -- KDE -------------------------------------------------------------------------------

def test_kde_normal():
    x = np.random.default_rng(7).standard_normal(100_000)
    g, dens = kde_marginal(x, (-3, 3, 121))
    assert np.max(np.abs(dens - stats.norm.pdf(g))) < 0.02


def test_kde_single_point():
    g, dens = kde_marginal([0.3], (-8, 8, 4001))
    assert abs(np.trapezoid(dens, g) - 1.0) < 1e-3
    assert silverman_bandwidth([0.3]) == 1.0


def test_kde_mixture_exact():
    t = GaussianMixture2D()
    pts = t.exact_sample(100_000, np.random.default_rng(8))
    for k in range(2):
        g, dens = kde_marginal(pts[:, k], (-6, 9, 301))
        assert np.max(np.abs(dens - t.marginal_pdf(k, g))) < 0.02


# -- collinearity -------------------------------------------------------------------------

def test_collinearity_examples():
    c = collinearity_check(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), direction=[1.0, 0.0])
    assert c.reducible and c.max_deviation == 0.0
    assert not collinearity_check(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])).reducible
    with pytest.raises(ContractViolation):
        collinearity_check(np.zeros((1, 2)))


# -- report -----------------------------------------------------------------------------

def test_diagnose_report(tmp_path):
    t = GaussianMixture2D()
    sk = run_gbps(RunConfig(t, "gbps", 600.0, seed=3))
    rep = diagnose(sk, target=t, w2_m=100, grid=(-6, 9, 61))
    d = json.loads(rep.to_json(tmp_path / "r.json"))
    assert d["n"] == 600 and len(d["ess"]) == 2
    assert all(e <= d["n"] for e in d["ess"])
    assert d["reducibility"]["reducible"] is False
    assert set(d["kde"]) == {"x1", "x2"} and "true" in d["kde"]["x1"]
    assert all(np.isfinite(v) for v in d["w2_marginals"] + [d["w2_2d"]])


def test_se_shrinks_as_inverse_sqrt_path_length():
    # SE ~ 1/sqrt(T): doubling the path gives sqrt(2), quadrupling gives 2
    t = IsotropicGaussian(2)
    se = {}
    for L in (2500.0, 5000.0, 10_000.0):
        se[L] = np.mean([moments(discretize_path(run_gbps(RunConfig(t, "gbps", L, seed=s))))["se_mean"]
                         for s in range(6)])
    assert abs(se[2500.0] / se[5000.0] - math.sqrt(2)) < 0.25
    assert abs(se[2500.0] / se[10_000.0] - 2.0) < 0.35
