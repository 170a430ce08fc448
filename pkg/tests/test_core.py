import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gbps.core import (
    ContractViolation,
    DegenerateGradient,
    PhaseState,
    Skeleton,
    decompose,
    event_rate,
    gbps_kernel,
    orthonormal_complement,
    reflect,
    uniform_direction,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def pairs(draw, min_d=1, max_d=8):
    d = draw(st.integers(min_d, max_d))
    v = draw(arrays(float, d, elements=finite))
    g = draw(arrays(float, d, elements=finite))
    return v, g


def nondegenerate(v, g):
    return np.linalg.norm(g) > 1e-3 * max(1.0, np.linalg.norm(v))


# -- event rate ---------------------------------------------------------------

def test_event_rate_examples():
    assert event_rate([1.0, 0.0], [-2.0, 0.0]) == 2.0
    assert event_rate([1.0, 0.0], [2.0, 0.0]) == 0.0
    assert event_rate([0.0, 1.0], [5.0, 0.0]) == 0.0


def test_event_rate_dimension_mismatch():
    with pytest.raises(ContractViolation):
        event_rate([1.0, 0.0], [1.0, 0.0, 0.0])


@given(pairs())
def test_rate_identity_exact(vg):
    v, g = vg
    dot = float(v @ g)
    assert event_rate(v, g) - event_rate(-v, g) + dot == 0.0


@given(pairs())
def test_rate_nonnegative(vg):
    assert event_rate(*vg) >= 0.0


# -- reflection ----------------------------------------------------------------

def test_reflect_example():
    np.testing.assert_allclose(reflect([1.0, 1.0], [1.0, 0.0]), [-1.0, 1.0])


def test_reflect_degenerate():
    with pytest.raises(DegenerateGradient):
        reflect([1.0, 1.0], [0.0, 0.0])


@given(pairs())
def test_reflect_involution_and_norm(vg):
    v, g = vg
    if not nondegenerate(v, g):
        return
    r = reflect(v, g)
    scale = 1.0 + np.linalg.norm(v)
    assert abs(np.linalg.norm(r) - np.linalg.norm(v)) <= 1e-9 * scale
    np.testing.assert_allclose(reflect(r, g), v, atol=1e-9 * scale)
    # the component along g changes sign
    assert abs(float(r @ g) + float(v @ g)) <= 1e-9 * scale * np.linalg.norm(g)


# -- decomposition / kernel ----------------------------------------------------

def test_decompose_example():
    par, perp = decompose([3.0, 4.0], [0.0, 2.0])
    np.testing.assert_allclose(par, [0.0, 4.0])
    np.testing.assert_allclose(perp, [3.0, 0.0])


@given(pairs())
def test_decompose_reconstructs(vg):
    v, g = vg
    if not nondegenerate(v, g):
        return
    par, perp = decompose(v, g)
    scale = 1.0 + np.linalg.norm(v)
    np.testing.assert_allclose(par + perp, v, atol=1e-9 * scale)
    assert abs(float(perp @ g)) <= 1e-9 * scale * np.linalg.norm(g)


@given(arrays(float, st.integers(2, 9), elements=finite))
def test_orthonormal_complement(g):
    if np.linalg.norm(g) < 1e-6:
        return
    B = orthonormal_complement(g)
    d = g.size
    assert B.shape == (d, d - 1)
    np.testing.assert_allclose(B.T @ B, np.eye(d - 1), atol=1e-10)
    np.testing.assert_allclose(B.T @ (g / np.linalg.norm(g)), 0.0, atol=1e-10)


@given(pairs(min_d=2), st.integers(0, 2 ** 32))
def test_kernel_flips_parallel_part(vg, seed):
    v, g = vg
    if not nondegenerate(v, g):
        return
    w = gbps_kernel(v, g, np.random.default_rng(seed))
    u = g / np.linalg.norm(g)
    assert abs(float(w @ u) + float(v @ u)) <= 1e-8 * (1.0 + np.linalg.norm(v))


def test_kernel_1d_is_flip():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(gbps_kernel(np.array([0.7]), np.array([-2.0]), rng), [-0.7])


def test_kernel_orthogonal_law():
    # orthogonal part ~ N(0, I) on the hyperplane: coordinates in the basis are iid N(0,1)
    rng = np.random.default_rng(3)
    g = np.array([1.0, 2.0, -0.5])
    v = np.array([0.3, -0.1, 0.9])
    B = orthonormal_complement(g)
    coef = np.array([B.T @ gbps_kernel(v, g, rng) for _ in range(20000)])
    se = 1.0 / np.sqrt(coef.shape[0])
    assert np.all(np.abs(coef.mean(axis=0)) < 4 * se)
    assert np.all(np.abs(coef.var(axis=0) - 1.0) < 4 * np.sqrt(2) * se)
    assert abs(np.mean(coef[:, 0] * coef[:, 1])) < 4 * se


def test_kernel_preserves_standard_normal():
    # v ~ N(0, I) stays N(0, I) after the kernel for a fixed gradient
    rng = np.random.default_rng(11)
    g = np.array([0.5, -1.5])
    out = np.array([gbps_kernel(rng.standard_normal(2), g, rng) for _ in range(20000)])
    se = 1.0 / np.sqrt(out.shape[0])
    np.testing.assert_array_less(np.abs(out.mean(axis=0)), 4 * se)
    np.testing.assert_array_less(np.abs(np.cov(out.T) - np.eye(2)), 5 * np.sqrt(2) * se)


def test_uniform_direction_unit():
    rng = np.random.default_rng(1)
    for d in (1, 2, 5):
        assert abs(np.linalg.norm(uniform_direction(d, rng)) - 1.0) < 1e-12


# -- state types ---------------------------------------------------------------

def test_phase_state_validation():
    assert PhaseState([0.0, 1.0], [1.0, 0.0]).d == 2
    with pytest.raises(ContractViolation):
        PhaseState([0.0, 1.0], [1.0])
    with pytest.raises(ContractViolation):
        PhaseState([np.nan], [1.0])


def test_skeleton_interpolation():
    sk = Skeleton([0.0, 1.0, 3.0], [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]],
                  [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(sk.position_at(0.5), [0.5, 0.0])
    np.testing.assert_array_equal(sk.position_at(2.0), [1.0, 1.0])
    np.testing.assert_array_equal(sk.velocity_at(1.5), [0.0, 1.0])
    assert sk.check_flight() == 0.0
    assert sk.t_final == 3.0 and len(sk) == 3 and sk.d == 2
