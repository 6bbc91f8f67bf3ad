"""Implicit backward HJB and forward Fokker-Planck sweeps on periodic grids.

Backward (unknown is the earlier slice, nonlinearity at the unknown):

    phi_earlier - phi_later - dt * H(Hess_h phi_earlier) = 0

solved by Newton with Jacobian ``I - dt/2 * A(Sigma*)``, where
``A(S) u = S_xx D_xx u + 2 S_xy D_xy u + S_yy D_yy u``; by the envelope
theorem dH/dGamma = Sigma*/2, so this is the exact Jacobian.

Forward:

    (I - dt/2 * K) p_next = p_prev,    K = A(Sigma*)^T,

i.e. ``K q = D_xx(S_xx q) + 2 D_xy(S_xy q) + D_yy(S_yy q)``.  The difference
operators have zero column sums on the torus, so mass is conserved.  The
forward step into slice n+1 uses Sigma*_{n+1} by default (``sigma_level="later"``);
``"earlier"`` uses Sigma*_n, which makes it the exact transpose of the converged
backward Jacobian at slice n.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu, spsolve

from semot.grid import PeriodicGrid, hessian_periodic, second_difference
from semot.hamiltonian import hamiltonian_1d, hamiltonian_2x2

log = logging.getLogger(__name__)

ROUNDOFF_FACTOR = 64  # Newton accepts |F| below this many ulps of the largest term


class StepFailure(RuntimeError):
    def __init__(self, message, time_index=None, residual=None):
        super().__init__(message)
        self.time_index = time_index
        self.residual = residual


def periodic_tridiagonal_solve(lower, diag, upper, rhs):
    """Solve a cyclic tridiagonal system by a rank-one (Sherman-Morrison) correction.

    Row ``i`` reads ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``
    with indices taken modulo ``n``.
    """
    n = diag.size
    gamma = -diag[0]
    corner_lo = upper[n - 1]  # A[n-1, 0]
    corner_hi = lower[0]  # A[0, n-1]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[1, 0] -= gamma
    ab[1, -1] -= corner_lo * corner_hi / gamma
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner_lo
    sol = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=False)
    y, z = sol[:, 0], sol[:, 1]
    vy = y[0] + corner_hi / gamma * y[-1]
    vz = z[0] + corner_hi / gamma * z[-1]
    denom = 1.0 + vz
    if denom == 0 or not np.isfinite(denom):
        raise np.linalg.LinAlgError("singular cyclic tridiagonal system")
    return y - (vy / denom) * z


def _difference_matrices(nx: int, dx: float):
    """Sparse periodic D_xx, D_yy, D_xy acting on C-order flattened (nx, nx) fields."""
    e = np.ones(nx)
    D1 = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    D1[0, nx - 1] = 1.0
    D1[nx - 1, 0] = 1.0
    D1 = D1.tocsr() / dx**2
    C1 = sp.diags([-e[:-1], e[:-1]], [-1, 1], format="lil")
    C1[0, nx - 1] = -1.0
    C1[nx - 1, 0] = 1.0
    C1 = C1.tocsr() / (2 * dx)
    eye = sp.identity(nx, format="csr")
    Dxx = sp.kron(D1, eye, format="csr")
    Dyy = sp.kron(eye, D1, format="csr")
    Dxy = sp.kron(C1, C1, format="csr")
    return Dxx, Dyy, Dxy


class LinearSolveWorkspace:
    """Grid-sized storage reused across time steps: cyclic bands in 1D, sparse stencils in 2D."""

    def __init__(self, grid: PeriodicGrid):
        self.grid = grid
        n = grid.nx**grid.dim
        self.identity = sp.identity(n, format="csr")
        if grid.dim == 2:
            self.Dxx, self.Dyy, self.Dxy = _difference_matrices(grid.nx, grid.dx)
        self._lower = np.empty(grid.nx)
        self._diag = np.empty(grid.nx)
        self._upper = np.empty(grid.nx)

    def solve_hjb_jacobian_1d(self, sigma, rhs, dt):
        c = 0.5 * dt / self.grid.dx**2 * sigma
        self._lower[:] = -c
        self._upper[:] = -c
        self._diag[:] = 1.0 + 2.0 * c
        return periodic_tridiagonal_solve(self._lower, self._diag, self._upper, rhs)

    def solve_fp_1d(self, sigma, rhs, dt):
        c = 0.5 * dt / self.grid.dx**2 * sigma
        self._lower[:] = -np.roll(c, 1)
        self._upper[:] = -np.roll(c, -1)
        self._diag[:] = 1.0 + 2.0 * c
        return periodic_tridiagonal_solve(self._lower, self._diag, self._upper, rhs)

    def operator_2d(self, sxx, sxy, syy):
        """A(S) = S_xx D_xx + 2 S_xy D_xy + S_yy D_yy as a sparse matrix."""
        return (
            sp.diags(sxx.ravel()) @ self.Dxx
            + sp.diags(2.0 * sxy.ravel()) @ self.Dxy
            + sp.diags(syy.ravel()) @ self.Dyy
        )

    def solve_2d(self, matrix, rhs):
        x = spsolve(matrix.tocsc(), rhs.ravel())
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("sparse solve produced non-finite values")
        return x.reshape(self.grid.shape)


def _sigma_matrix_1d(sigma: np.ndarray) -> np.ndarray:
    return sigma[..., None, None]


def _sigma_matrix_2d(sxx, sxy, syy) -> np.ndarray:
    out = np.empty(sxx.shape + (2, 2))
    out[..., 0, 0] = sxx
    out[..., 0, 1] = sxy
    out[..., 1, 0] = sxy
    out[..., 1, 1] = syy
    return out


def hamiltonian_field(phi: np.ndarray, grid: PeriodicGrid):
    """(H, Sigma*) of the discrete Hessian of ``phi``; Sigma* has trailing (d, d) axes."""
    if grid.dim == 1:
        H, sigma = hamiltonian_1d(second_difference(phi, 0, grid.dx))
        return H, _sigma_matrix_1d(sigma)
    hess = hessian_periodic(phi, grid)
    H, sxx, sxy, syy, _ = hamiltonian_2x2(hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1])
    return H, _sigma_matrix_2d(sxx, sxy, syy)


class PDESolver:
    """Backward/forward sweeps on one grid.  Owns a mutable workspace: one thread per instance.

    In 2D the Jacobian at the Newton initial guess (the later slice) is
    ``I - dt/2 A(Sigma*_later)``, the transpose of the forward matrix for the
    step ending at that slice; its LU factor drives chord-Newton iterations and
    is cached for the forward sweep.  A fresh factor is taken at the current
    iterate whenever the chord iteration contracts by less than ``refactor_ratio``.
    """

    refactor_ratio = 0.25

    def __init__(self, grid: PeriodicGrid, tol: float = 1e-10, max_newton: int = 50, sigma_level: str = "later"):
        if sigma_level not in ("later", "earlier"):
            raise ValueError(f"sigma_level must be 'later' or 'earlier', got {sigma_level!r}")
        self.sigma_level = sigma_level
        self.grid = grid
        self.tol = tol
        self.max_newton = max_newton
        self.workspace = LinearSolveWorkspace(grid)
        self.newton_iterations = 0
        self._factors: dict[int, tuple[np.ndarray, object]] = {}

    # -- backward ---------------------------------------------------------

    def _factor_2d(self, sigma):
        ws = self.workspace
        A = ws.operator_2d(sigma[..., 0, 0], sigma[..., 0, 1], sigma[..., 1, 1])
        try:
            return splu((ws.identity - 0.5 * self.grid.dt * A).tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc

    def _residual(self, phi, phi_later):
        H, sigma = hamiltonian_field(phi, self.grid)
        dtH = self.grid.dt * H
        F = phi - phi_later - dtH
        return F, sigma, float(np.max(np.abs(F))), float(np.max(np.abs(dtH)))

    def _target(self, phi_later, dtH_max):
        # below this the residual is rounding noise in phi - phi_later - dt H
        floor = ROUNDOFF_FACTOR * np.finfo(float).eps * max(1.0, float(np.max(np.abs(phi_later))), dtH_max)
        return max(self.tol, floor)

    def hjb_backward_step(self, phi_later: np.ndarray, time_index=None):
        """One implicit step back in time; returns ``(phi_earlier, sigma_star_slice)``."""
        grid = self.grid
        phi = phi_later.copy()
        F, sigma, res, dtH_max = self._residual(phi, phi_later)
        target = self._target(phi_later, dtH_max)
        lu = None
        if grid.dim == 2:
            try:
                lu = self._factor_2d(sigma)
            except np.linalg.LinAlgError as exc:
                raise StepFailure(f"Jacobian factorization failed: {exc}", time_index, res) from exc
            if time_index is not None:
                self._factors[time_index + 1] = (sigma.copy(), lu)
        for _ in range(self.max_newton):
            if res < target:
                break
            try:
                if grid.dim == 1:
                    step = self.workspace.solve_hjb_jacobian_1d(sigma[..., 0, 0], F, grid.dt)
                else:
                    step = lu.solve(F.ravel()).reshape(grid.shape)
            except np.linalg.LinAlgError as exc:
                raise StepFailure(f"Jacobian solve failed: {exc}", time_index, res) from exc
            t = 1.0
            while True:
                trial = phi - t * step
                F_t, sigma_t, res_t, dtH_max = self._residual(trial, phi_later)
                if np.isfinite(res_t) and (res_t < res or t < 1e-3):
                    break
                t *= 0.5
            if grid.dim == 2 and res_t > self.refactor_ratio * res:
                lu = self._factor_2d(sigma_t)
            phi, F, sigma, res = trial, F_t, sigma_t, res_t
            target = self._target(phi_later, dtH_max)
            self.newton_iterations += 1
        if not res < target:
            raise StepFailure(
                f"Newton did not converge in {self.max_newton} iterations (residual {res:.3e}, target {target:.3e})",
                time_index,
                res,
            )
        return phi, sigma

    def hjb_backward_solve(self, phi1: np.ndarray):
        grid = self.grid
        grid.check_field(phi1)
        d = grid.dim
        self._factors.clear()
        phi = np.empty((grid.nt + 1,) + grid.shape)
        sigma = np.empty((grid.nt + 1,) + grid.shape + (d, d))
        phi[-1] = phi1
        _, sigma[-1] = hamiltonian_field(phi1, grid)
        for n in range(grid.nt - 1, -1, -1):
            try:
                phi[n], sigma[n] = self.hjb_backward_step(phi[n + 1], time_index=n)
            except StepFailure as exc:
                raise StepFailure(f"backward sweep failed at time index {n}: {exc}", n, exc.residual) from exc
        return phi, sigma

    # -- forward ----------------------------------------------------------

    def fp_forward_step(self, p_prev: np.ndarray, sigma_slice: np.ndarray, time_index=None):
        grid = self.grid
        ws = self.workspace
        try:
            if grid.dim == 1:
                return ws.solve_fp_1d(sigma_slice[..., 0, 0], p_prev, grid.dt)
            cached = self._factors.get(time_index)
            if cached is not None and np.array_equal(cached[0], sigma_slice):
                lu = cached[1]
            else:
                lu = self._factor_2d(sigma_slice)
            out = lu.solve(p_prev.ravel(), trans="T")
            if not np.all(np.isfinite(out)):
                raise np.linalg.LinAlgError("forward solve produced non-finite values")
            return out.reshape(grid.shape)
        except np.linalg.LinAlgError as exc:
            raise StepFailure(f"forward solve failed at time index {time_index}: {exc}", time_index) from exc

    def fp_forward_solve(self, mu0: np.ndarray, sigma_star: np.ndarray):
        grid = self.grid
        grid.check_field(mu0)
        p = np.empty((grid.nt + 1,) + grid.shape)
        p[0] = mu0
        shift = 1 if self.sigma_level == "later" else 0
        for n in range(grid.nt):
            m = n + shift
            p[n + 1] = self.fp_forward_step(p[n], sigma_star[m], time_index=m)
        self._factors.clear()
        return p


def hjb_backward_solve(phi1, grid: PeriodicGrid, **kwargs):
    return PDESolver(grid, **kwargs).hjb_backward_solve(phi1)


def fp_forward_solve(mu0, sigma_star, grid: PeriodicGrid, **kwargs):
    return PDESolver(grid, **kwargs).fp_forward_solve(mu0, sigma_star)


def identity_sigma(grid: PeriodicGrid) -> np.ndarray:
    """Sigma* = I on every space-time node."""
    return np.broadcast_to(np.eye(grid.dim), (grid.nt + 1,) + grid.shape + (grid.dim, grid.dim)).copy()
