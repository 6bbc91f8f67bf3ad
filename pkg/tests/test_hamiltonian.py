import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semot.cost import brownian_reference, ell_tr_batch
from semot.hamiltonian import hamiltonian, hamiltonian_1d, hamiltonian_2x2, solve_mu

# Frozen from a 50-digit mpmath evaluation: root of mu^2 + mu - 1 = 0, then the closed form.
DIAG20_MU = 0.6180339887498949
DIAG20_H = 0.46343733682571964
DIAG20_SIGMA = (0.2049487002384136, 0.8681766261101471)


def sym(a, b, c):
    return np.array([[a, b], [b, c]])


def test_mu_trivial_cases():
    assert solve_mu(np.zeros((2, 2))) == pytest.approx(1.0, abs=1e-15)
    assert solve_mu(np.eye(2)) == pytest.approx(0.0, abs=1e-15)


def test_mu_golden_ratio():
    mu = solve_mu(np.diag([2.0, 0.0]))
    assert mu == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-15)
    assert mu == pytest.approx(DIAG20_MU, abs=1e-15)


def test_mu_matches_bisection_oracle():
    G = np.array([[3.0, 1.0, -2.0], [1.0, -4.0, 0.5], [-2.0, 0.5, 1.0]])
    w = np.linalg.eigvalsh(G)
    # positive-definite branch: Gamma + mu I > 0
    lo, hi = max(1 - w[-1], -w[0]), 1 - w[0]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if np.sum(1 / (w + mid)) > 3 else (lo, mid)
    assert solve_mu(G) == pytest.approx(0.5 * (lo + hi), abs=1e-12)


def test_hamiltonian_1d_values():
    H, s = hamiltonian_1d(np.array([0.0, 2.0]))
    assert (H[0], s[0]) == (0.0, 1.0)
    assert H[1] == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert s[1] == pytest.approx(math.exp(-1), abs=1e-15)


def test_hamiltonian_1d_grid_search_oracle():
    # inf over a > 0 of a*gamma/2 + a ln a - a + 1 at gamma = 2
    a = np.arange(1, 10_000_001) * 1e-6
    vals = a + a * np.log(a) - a + 1
    assert vals.min() == pytest.approx(1 - math.exp(-1), abs=1e-10)
    assert a[np.argmin(vals)] == pytest.approx(math.exp(-1), abs=1e-6)


def test_hamiltonian_diag20():
    res = hamiltonian(np.diag([2.0, 0.0]))
    assert res.mu == pytest.approx(DIAG20_MU, abs=1e-14)
    assert res.h_value == pytest.approx(DIAG20_H, abs=1e-14)
    np.testing.assert_allclose(np.diag(res.sigma_star), DIAG20_SIGMA, atol=1e-14)
    assert res.sigma_star[0, 1] == 0.0


def test_hamiltonian_rejects_asymmetric():
    with pytest.raises(ValueError):
        hamiltonian(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_vectorized_2x2_matches_general():
    rng = np.random.default_rng(3)
    g = rng.uniform(-20, 20, size=(200, 3))
    H, sxx, sxy, syy, mu = hamiltonian_2x2(g[:, 0], g[:, 1], g[:, 2])
    for i in range(200):
        ref = hamiltonian(sym(*g[i]))
        assert H[i] == pytest.approx(ref.h_value, rel=1e-12, abs=1e-12)
        assert mu[i] == pytest.approx(ref.mu, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose([sxx[i], sxy[i], syy[i]], ref.sigma_star[[0, 0, 1], [0, 1, 1]], rtol=1e-10, atol=1e-13)


def test_one_by_one_matches_closed_form():
    for g in np.linspace(-10, 10, 41):
        res = hamiltonian(np.array([[g]]))
        H, s = hamiltonian_1d(np.array(g))
        assert res.h_value == pytest.approx(float(H), abs=1e-13)
        assert res.sigma_star[0, 0] == pytest.approx(float(s), rel=1e-13)


def _objective(G, S):
    ref = brownian_reference(G.shape[0])
    return 0.5 * np.trace(S @ G) + ell_tr_batch(S[None], np.ones(1), ref.sigma_bar(0, np.zeros(G.shape[0]))[None])[0]


symmetric_2 = st.tuples(*[st.floats(-5, 5)] * 3).map(lambda t: sym(*t))


@st.composite
def symmetric_3(draw):
    v = draw(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
    return np.array([[v[0], v[1], v[2]], [v[1], v[3], v[4]], [v[2], v[4], v[5]]])


@settings(max_examples=60, deadline=None)
@given(st.one_of(symmetric_2, symmetric_3()))
def test_trace_constraint_and_identity(G):
    res = hamiltonian(G)
    d = G.shape[0]
    w = np.linalg.eigvalsh(G)
    assert np.sum(1 / (w + res.mu)) == pytest.approx(d, abs=1e-12)
    assert res.mu > -w[0]
    assert 1 - w[-1] - 1e-15 <= res.mu <= 1 - w[0] + 1e-15
    if w[-1] - w[0] > 1e-8:
        assert res.mu > 1 - w[-1]
    assert res.lambda1_star == pytest.approx(1 - res.h_value, rel=1e-10, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.one_of(symmetric_2, symmetric_3()), st.integers(0, 2**32 - 1))
def test_envelope_inequality(G, seed):
    rng = np.random.default_rng(seed)
    res = hamiltonian(G)
    d = G.shape[0]
    # |H| reaches ~1e5 for these entries; an absolute 1e-9 is below float64 resolution there
    tol = 1e-9 * max(1.0, abs(res.h_value))
    assert _objective(G, res.sigma_star) == pytest.approx(res.h_value, abs=tol)
    for _ in range(10):
        A = rng.normal(size=(d, d))
        S = A @ A.T + 1e-3 * np.eye(d)
        assert res.h_value <= _objective(G, S) + tol


@settings(max_examples=60, deadline=None)
@given(symmetric_2, symmetric_2)
def test_concavity(G1, G2):
    mid = hamiltonian(0.5 * (G1 + G2)).h_value
    assert mid >= 0.5 * (hamiltonian(G1).h_value + hamiltonian(G2).h_value) - 1e-10


@settings(max_examples=60, deadline=None)
@given(symmetric_2, st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
def test_monotone_in_loewner_order(G, v):
    v = np.asarray(v)
    assert hamiltonian(G).h_value <= hamiltonian(G + np.outer(v, v)).h_value + 1e-12
