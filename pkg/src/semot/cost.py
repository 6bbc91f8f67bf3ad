"""Running costs and value functionals.

``ell_tr`` is the trace-normalized martingale transport cost; ``ell_rate`` the
entropy rate between two Gaussian-mark Poissonizations.  Both take a reference
(``lambda_2``, ``Sigma_bar_2``) evaluated at ``(t, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from semot.grid import PeriodicGrid

LAMBDA_ZERO = 1e-14
RANK_RTOL = 1e-12
_SYM_TOL = 1e-12


def _const_lambda(t, x):
    x = np.asarray(x, dtype=float)
    return np.ones(x.shape[:-1]) if x.ndim > 1 else 1.0


@dataclass(frozen=True)
class ReferenceModel:
    """Reference volatility decomposition Sigma_2 = lambda_2 * Sigma_bar_2.

    ``lambda2(t, x)`` and ``sigma2bar(t, x)`` accept a point ``x`` of shape ``(d,)``
    or a batch ``(..., d)``.  ``b_lo``, ``b_hi`` and ``M`` are the validation bounds.
    """

    dim: int
    lambda2: Callable = _const_lambda
    sigma2bar: Callable | None = None
    b_lo: float = 1.0
    b_hi: float = 1.0
    M: float = 1.0
    brownian: bool = field(default=False)

    def lam(self, t, x):
        val = np.asarray(self.lambda2(t, x), dtype=float)
        if np.any(val < self.b_lo * (1 - 1e-12)) or np.any(val > self.b_hi * (1 + 1e-12)):
            raise ValueError("reference intensity leaves its certified bounds")
        return val

    def sigma_bar(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.sigma2bar is None:
            return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))
        return np.asarray(self.sigma2bar(t, x), dtype=float)


def brownian_reference(dim: int) -> ReferenceModel:
    return ReferenceModel(dim=dim, brownian=True)


@dataclass(frozen=True)
class TraceDecomposition:
    lambda1: float
    sigma1bar: np.ndarray | None

    @property
    def degenerate(self) -> bool:
        return self.sigma1bar is None


def _as_psd(Sigma1) -> np.ndarray:
    S = np.atleast_2d(np.asarray(Sigma1, dtype=float))
    if S.shape[-1] != S.shape[-2]:
        raise ValueError(f"covariance must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - np.swapaxes(S, -1, -2))) > _SYM_TOL * scale:
        raise ValueError("covariance must be symmetric")
    eig = np.linalg.eigvalsh(S)
    if np.any(eig[..., 0] < -_SYM_TOL * np.maximum(1.0, eig[..., -1])):
        raise ValueError("covariance must be positive semidefinite")
    return S


def trace_decompose(Sigma1, ref: ReferenceModel, t=0.0, x=None) -> TraceDecomposition:
    S = _as_psd(Sigma1)
    d = S.shape[-1]
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    sb2 = ref.sigma_bar(t, x)
    lam1 = float(np.trace(np.linalg.solve(sb2, S))) / d
    if lam1 < LAMBDA_ZERO:
        return TraceDecomposition(lambda1=0.0, sigma1bar=None)
    return TraceDecomposition(lambda1=lam1, sigma1bar=S / lam1)


def ell_tr_batch(Sigma1: np.ndarray, lam2: np.ndarray, sb2: np.ndarray) -> np.ndarray:
    """ell_tr over a batch of matrices ``(..., d, d)``; no validation."""
    d = Sigma1.shape[-1]
    lam2 = np.broadcast_to(np.asarray(lam2, dtype=float), Sigma1.shape[:-2])
    M = np.linalg.solve(sb2, Sigma1) if sb2 is not None else Sigma1
    lam1 = np.trace(M, axis1=-2, axis2=-1) / d
    eig = np.linalg.eigvalsh(Sigma1)
    zero = lam1 < LAMBDA_ZERO
    singular = ~zero & (eig[..., 0] < RANK_RTOL * eig[..., -1])
    regular = ~(zero | singular)
    out = np.empty(Sigma1.shape[:-2])
    out[zero] = lam2[zero]
    out[singular] = np.inf
    if np.any(regular):
        l1 = lam1[regular]
        l2 = lam2[regular]
        _, logdet_m = np.linalg.slogdet(M[regular])
        logdet_bar = logdet_m - d * np.log(l1)
        out[regular] = l1 * np.log(l1 / l2) - l1 + l2 - 0.5 * l1 * logdet_bar
    return out


def ell_tr(t, x, Sigma1, ref: ReferenceModel) -> float:
    S = _as_psd(Sigma1)
    d = S.shape[-1]
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    val = ell_tr_batch(S[None], np.atleast_1d(ref.lam(t, x)), ref.sigma_bar(t, x)[None])
    return float(val[0])


def entropy_rate(lam1, sb1, lam2, sb2) -> np.ndarray:
    """ell for batched intensities ``(...)`` and mark covariances ``(..., d, d)``."""
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    sb1 = np.asarray(sb1, dtype=float)
    sb2 = np.asarray(sb2, dtype=float)
    d = sb1.shape[-1]
    M = np.linalg.solve(sb2, sb1)
    tr = np.trace(M, axis1=-2, axis2=-1)
    sign, logdet = np.linalg.slogdet(M)
    if np.any(sign <= 0):
        raise ValueError("mark covariances must be positive definite")
    return lam1 * np.log(lam1 / lam2) - lam1 + lam2 + 0.5 * lam1 * (tr - d - logdet)


def ell_rate(t, x, scheme1, scheme2) -> float:
    """Entropy rate between two jump schemes exposing ``lam(t, x)`` and ``sigma_bar(t, x)``."""
    x = np.asarray(x, dtype=float)
    lam1, lam2 = scheme1.lam(t, x), scheme2.lam(t, x)
    if not (np.all(lam1 > 0) and np.all(lam2 > 0)):
        raise ValueError("intensities must be positive")
    sb2 = scheme2.sigma_bar(t, x)
    if np.linalg.cond(sb2) > 1 / np.finfo(float).eps:
        raise ValueError("reference mark covariance is singular")
    return float(np.ravel(entropy_rate(lam1, scheme1.sigma_bar(t, x), lam2, sb2))[0])


# ---------------------------------------------------------------------------
# value functionals on a grid
# ---------------------------------------------------------------------------


def _reference_on_grid(ref: ReferenceModel, grid: PeriodicGrid):
    if ref.brownian:
        return 1.0, None
    pts = np.stack(grid.mesh(), axis=-1)
    lam = np.stack([ref.lam(t, pts) for t in grid.times])
    sb = np.stack([ref.sigma_bar(t, pts) for t in grid.times])
    return lam, sb


def running_cost_field(sigma_star: np.ndarray, grid: PeriodicGrid, ref: ReferenceModel | None = None):
    """ell_tr at every space-time node for a field of shape ``(nt+1, *shape, d, d)``."""
    ref = ref or brownian_reference(grid.dim)
    lam2, sb2 = _reference_on_grid(ref, grid)
    if sb2 is None:
        sb2 = np.broadcast_to(np.eye(grid.dim), sigma_star.shape)
    return ell_tr_batch(sigma_star, lam2, sb2)


def primal_cost(sigma_star: np.ndarray, p: np.ndarray, grid: PeriodicGrid, ref: ReferenceModel | None = None) -> float:
    """Trapezoid in time, rectangle rule in space of  int int ell_tr(Sigma*) p dx dt."""
    if p.shape != (grid.nt + 1,) + grid.shape:
        raise ValueError(f"density flow shape {p.shape} does not match grid")
    cost = running_cost_field(sigma_star, grid, ref)
    if not np.all(np.isfinite(cost)):
        raise ValueError("running cost is infinite: diffusion field is singular somewhere")
    per_slice = np.sum((cost * p).reshape(grid.nt + 1, -1), axis=1) * grid.cell_volume
    weights = np.full(grid.nt + 1, grid.dt)
    weights[[0, -1]] *= 0.5
    return float(weights @ per_slice)


def dual_value(phi, mu0, phi1, mu1, grid: PeriodicGrid) -> float:
    """D = sum phi(0) mu0 dx^d - sum phi1 mu1 dx^d.  ``phi`` may be a full space-time field."""
    phi = np.asarray(phi)
    phi0 = phi[0] if phi.ndim == grid.dim + 1 else phi
    for f in (phi0, mu0, phi1, mu1):
        grid.check_field(np.asarray(f))
    return float((np.sum(phi0 * mu0) - np.sum(phi1 * mu1)) * grid.cell_volume)
