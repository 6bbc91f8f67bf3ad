import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semot.grid import discrete_mode_eigenvalue, make_grid, periodized_gaussian, rotated_gaussian_2d
from semot.pde import (
    PDESolver,
    StepFailure,
    fp_forward_solve,
    hjb_backward_solve,
    identity_sigma,
    periodic_tridiagonal_solve,
)


def dense_periodic(lower, diag, upper):
    n = diag.size
    A = np.diag(diag)
    for i in range(n):
        A[i, (i - 1) % n] += lower[i]
        A[i, (i + 1) % n] += upper[i]
    return A


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_periodic_tridiagonal_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    lower, upper = -rng.uniform(0, 1, n), -rng.uniform(0, 1, n)
    diag = 1 + np.abs(lower) + np.abs(upper) + rng.uniform(0, 1, n)
    rhs = rng.normal(size=n)
    x = periodic_tridiagonal_solve(lower, diag, upper, rhs)
    np.testing.assert_allclose(dense_periodic(lower, diag, upper) @ x, rhs, atol=1e-12)


@pytest.mark.parametrize("dim,nx", [(1, 32), (2, 12)])
def test_constant_terminal_gives_constant_flow(dim, nx):
    g = make_grid(dim, nx, 6, 0.1)
    phi, sigma = hjb_backward_solve(np.full(g.shape, 0.7), g)
    assert np.max(np.abs(phi - 0.7)) < 1e-12
    assert np.max(np.abs(sigma - identity_sigma(g))) < 1e-12


def test_single_backward_step_fourier():
    g = make_grid(1, 64, 1, 0.01)
    eps = 1e-6
    phi_later = eps * np.cos(2 * np.pi * g.nodes)
    phi, _ = PDESolver(g, tol=1e-15).hjb_backward_step(phi_later)
    kappa = discrete_mode_eigenvalue(g)
    np.testing.assert_allclose(phi, phi_later / (1 + g.dt * kappa / 2), atol=1e-11)


def test_single_forward_step_fourier():
    g = make_grid(1, 64, 1, 0.01)
    eps = 1e-3
    sigma = identity_sigma(g)[0]
    solver = PDESolver(g)
    np.testing.assert_allclose(solver.fp_forward_step(np.ones(64), sigma), 1.0, atol=1e-15)
    p_prev = 1 + eps * np.cos(2 * np.pi * g.nodes)
    kappa = discrete_mode_eigenvalue(g)
    expected = 1 + eps * np.cos(2 * np.pi * g.nodes) / (1 + g.dt * kappa / 2)
    np.testing.assert_allclose(solver.fp_forward_step(p_prev, sigma), expected, atol=1e-14)


def test_heat_flow_relaxes_to_uniform_monotonically():
    g = make_grid(1, 64, 50, 1.0)
    mu0 = periodized_gaussian(0.3, 0.05, g)
    p = fp_forward_solve(mu0, identity_sigma(g), g)
    dist = np.abs(p - 1).sum(axis=1) * g.dx
    assert np.all(np.diff(dist) < 0)
    # compare with the exact Fourier solution of the same implicit scheme
    k = np.fft.fftfreq(64, d=g.dx)
    kappa = 2 / g.dx**2 * (1 - np.cos(2 * np.pi * k * g.dx))
    exact = np.real(np.fft.ifft(np.fft.fft(mu0) / (1 + g.dt * kappa / 2) ** g.nt))
    np.testing.assert_allclose(p[-1], exact, atol=1e-12)


@pytest.mark.parametrize("dim,nx,level", [(1, 64, "later"), (1, 64, "earlier"), (2, 16, "later"), (2, 16, "earlier")])
def test_mass_conserved_for_rough_sigma(dim, nx, level):
    g = make_grid(dim, nx, 8, 0.1)
    rng = np.random.default_rng(0)
    phi1 = 0.002 * rng.normal(size=g.shape)
    solver = PDESolver(g, sigma_level=level)
    _, sigma = solver.hjb_backward_solve(phi1)
    mu0 = periodized_gaussian(0.5, 0.1, g) if dim == 1 else rotated_gaussian_2d((0.5, 0.5), (0.1, 0.15), 0.3, g)
    p = solver.fp_forward_solve(mu0, sigma)
    mass = p.reshape(g.nt + 1, -1).sum(axis=1) * g.cell_volume
    assert np.max(np.abs(mass - 1)) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([10.0, 100.0, 1000.0]), st.integers(0, 1000))
def test_implicit_heat_step_is_stable(ratio, seed):
    g = make_grid(1, 32, 5, ratio * (1 / 32) ** 2 * 5)
    rng = np.random.default_rng(seed)
    mu0 = 1 + 0.5 * rng.uniform(-1, 1, 32)
    p = fp_forward_solve(mu0, identity_sigma(g), g)
    assert np.all(np.isfinite(p))
    assert np.abs(p).max() <= np.abs(mu0).max() + 1e-12


def test_adjoint_pairing_with_frozen_sigma():
    # Linear backward sweep with the same frozen coefficients: sum u p dx is conserved exactly
    # when the forward step uses the transpose of the backward operator.
    g = make_grid(1, 32, 20, 0.1)
    rng = np.random.default_rng(1)
    sigma = 1 + 0.3 * rng.uniform(size=(g.nt + 1, 32))
    solver = PDESolver(g, sigma_level="earlier")
    u = np.empty((g.nt + 1, 32))
    u[-1] = np.cos(2 * np.pi * g.nodes)
    for n in range(g.nt - 1, -1, -1):
        u[n] = solver.workspace.solve_hjb_jacobian_1d(sigma[n], u[n + 1], g.dt)
    p = solver.fp_forward_solve(periodized_gaussian(0.5, 0.1, g), sigma[..., None, None])
    pairing = (u * p).sum(axis=1) * g.dx
    np.testing.assert_allclose(pairing, pairing[0], atol=1e-12)


def test_newton_failure_reports_time_index():
    g = make_grid(1, 16, 3, 0.1)
    solver = PDESolver(g, max_newton=1, tol=1e-300)
    with pytest.raises(StepFailure) as info:
        solver.hjb_backward_solve(np.cos(2 * np.pi * g.nodes))
    assert info.value.time_index == g.nt - 1


def test_rough_2d_field_may_go_negative_but_keeps_mass():
    g = make_grid(2, 16, 4, 0.1)
    solver = PDESolver(g)
    sigma = identity_sigma(g)
    rng = np.random.default_rng(5)
    sigma[..., 0, 1] = sigma[..., 1, 0] = 0.95 * np.sign(rng.normal(size=(g.nt + 1, 16, 16)))
    mu0 = rotated_gaussian_2d((0.5, 0.5), (0.03, 0.03), 0.0, g)
    p = solver.fp_forward_solve(mu0, sigma)
    mass = p.reshape(g.nt + 1, -1).sum(axis=1) * g.cell_volume
    assert np.max(np.abs(mass - 1)) < 1e-10
