import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semot.cost import (
    ReferenceModel,
    brownian_reference,
    dual_value,
    ell_rate,
    ell_tr,
    entropy_rate,
    primal_cost,
    trace_decompose,
)
from semot.grid import make_grid
from semot.pde import identity_sigma
from semot.poisson import constant_scheme

# Frozen extended-precision evaluations of the closed forms.
ELL_TR_DIAG = 0.30785887828552433  # Sigma_1 = diag(2, 0.5), Brownian reference, d = 2
SCHEME_I = 0.15342640972002736  # (1 - ln 2) / 2
SCHEME_II = 0.38629436111989057  # 2 ln 2 - 1

REF2 = brownian_reference(2)
REF1 = brownian_reference(1)


def test_trace_decompose_examples():
    dec = trace_decompose(np.eye(2), REF2)
    assert dec.lambda1 == 1.0
    np.testing.assert_array_equal(dec.sigma1bar, np.eye(2))
    dec = trace_decompose(np.diag([2.0, 0.5]), REF2)
    assert dec.lambda1 == pytest.approx(1.25, abs=1e-15)
    np.testing.assert_allclose(dec.sigma1bar, np.diag([1.6, 0.4]), atol=1e-15)
    dec = trace_decompose(np.zeros((2, 2)), REF2)
    assert dec.lambda1 == 0.0 and dec.degenerate


def test_trace_decompose_rejects_bad_input():
    with pytest.raises(ValueError):
        trace_decompose(np.array([[1.0, 0.5], [0.0, 1.0]]), REF2)
    with pytest.raises(ValueError):
        trace_decompose(np.diag([1.0, -1.0]), REF2)


def test_ell_tr_case_table():
    assert ell_tr(0.0, None, np.eye(2), REF2) == pytest.approx(0.0, abs=1e-15)
    assert ell_tr(0.0, None, np.zeros((2, 2)), REF2) == 1.0
    assert ell_tr(0.0, None, np.diag([2.0, 0.5]), REF2) == pytest.approx(ELL_TR_DIAG, abs=1e-14)
    expected = 1.25 * math.log(1.25) - 0.25 - 0.625 * math.log(0.64)
    assert ELL_TR_DIAG == pytest.approx(expected, abs=1e-15)
    assert ell_tr(0.0, None, np.diag([1.0, 0.0]), REF2) == math.inf


def test_ell_tr_uses_reference_intensity():
    ref = ReferenceModel(dim=1, lambda2=lambda t, x: 2.0, b_lo=1.0, b_hi=3.0)
    assert ell_tr(0.0, np.zeros(1), np.zeros((1, 1)), ref) == 2.0
    assert ell_tr(0.0, np.zeros(1), np.array([[2.0]]), ref) == pytest.approx(0.0, abs=1e-15)


def test_reference_bounds_are_enforced():
    ref = ReferenceModel(dim=1, lambda2=lambda t, x: 5.0, b_lo=1.0, b_hi=3.0)
    with pytest.raises(ValueError):
        ell_tr(0.0, np.zeros(1), np.eye(1), ref)


def test_entropy_rate_schemes():
    one = np.ones((1, 1))
    assert entropy_rate(1.0, one, 1.0, one) == 0.0
    assert float(entropy_rate(1.0, 2 * one, 1.0, one)) == pytest.approx(SCHEME_I, abs=1e-15)
    assert float(entropy_rate(2.0, one, 1.0, one)) == pytest.approx(SCHEME_II, abs=1e-15)
    assert SCHEME_II > SCHEME_I


def test_ell_rate_on_schemes():
    s1 = constant_scheme(10, 1.0, [[2.0]])
    s2 = constant_scheme(10, 1.0, [[1.0]])
    assert ell_rate(0.0, np.zeros(1), s1, s2) == pytest.approx(SCHEME_I, abs=1e-15)
    assert ell_rate(0.0, np.zeros(1), s2, s2) == 0.0


def test_primal_cost_examples():
    g = make_grid(1, 16, 10, 1.0)
    p = np.ones((11, 16))
    assert primal_cost(identity_sigma(g), p, g) == pytest.approx(0.0, abs=1e-15)
    assert primal_cost(2 * identity_sigma(g), p, g) == pytest.approx(SCHEME_II, abs=1e-14)


def test_primal_cost_rejects_singular_field():
    g = make_grid(2, 4, 2, 1.0)
    sigma = identity_sigma(g)
    sigma[1, 0, 0] = np.diag([1.0, 0.0])
    with pytest.raises(ValueError):
        primal_cost(sigma, np.ones((3, 4, 4)), g)


def test_dual_value_examples():
    g = make_grid(1, 32, 4, 1.0)
    zero = np.zeros(32)
    one = np.ones(32)
    assert dual_value(zero, one, zero, one, g) == 0.0
    assert dual_value(np.full(32, 3.0), one, np.full(32, 3.0), one, g) == pytest.approx(0.0, abs=1e-15)
    sine = np.sin(2 * np.pi * g.nodes)
    assert abs(dual_value(sine, one, zero, one, g)) < 1e-12
    phi = np.stack([np.full(32, 2.0)] * 5)
    assert dual_value(phi, one, zero, one, g) == pytest.approx(2.0, abs=1e-15)


def _spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T) + 1e-2 * np.eye(d)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_ell_tr_nonnegative_and_convex(d, seed):
    rng = np.random.default_rng(seed)
    ref = brownian_reference(d)
    A, B = _spd(rng, d), _spd(rng, d)
    s = rng.uniform(0.01, 0.99)
    la, lb = ell_tr(0, None, A, ref), ell_tr(0, None, B, ref)
    assert la >= -1e-14 and lb >= -1e-14
    assert ell_tr(0, None, s * A + (1 - s) * B, ref) <= s * la + (1 - s) * lb + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_entropy_rate_nonnegative_with_equality_on_diagonal(d, seed):
    rng = np.random.default_rng(seed)
    l1, l2 = rng.uniform(0.1, 5, size=2)
    S1, S2 = _spd(rng, d), _spd(rng, d)
    assert entropy_rate(l1, S1, l2, S2) >= -1e-12
    assert entropy_rate(l1, S1, l1, S1) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_rate_matches_tr_on_trace_normalized_slice(d, seed):
    rng = np.random.default_rng(seed)
    ref = brownian_reference(d)
    S1 = _spd(rng, d)
    dec = trace_decompose(S1, ref)
    assert np.trace(dec.sigma1bar) == pytest.approx(d, rel=1e-12)
    rate = entropy_rate(dec.lambda1, dec.sigma1bar, 1.0, np.eye(d))
    assert rate == pytest.approx(ell_tr(0, None, S1, ref), rel=1e-10, abs=1e-12)
