"""Closed-form Hamiltonian for the Brownian reference.

    H(Gamma) = inf_{Sigma >= 0} { tr(Sigma Gamma)/2 + ell_tr(Sigma) }
             = 1 - exp(-[d(1 - mu) + logdet(Gamma + mu I)] / 2)

with mu the unique scalar making ``tr((Gamma + mu I)^-1) = d`` and the minimizer
``Sigma* = (1 - H) (Gamma + mu I)^-1``.

Internally the root is found in the shifted variable ``u = lambda_min(Gamma) + mu > 0``
so that ``Gamma + mu I`` keeps full relative precision on its smallest eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RESIDUAL_TOL = 1e-15


@dataclass(frozen=True)
class HamiltonianResult:
    h_value: float
    mu: float
    sigma_star: np.ndarray
    lambda1_star: float


def _check_symmetric(Gamma: np.ndarray) -> np.ndarray:
    G = np.atleast_2d(np.asarray(Gamma, dtype=float))
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"Gamma must be a square matrix, got shape {G.shape}")
    if not np.allclose(G, G.T, rtol=1e-12, atol=1e-12):
        raise ValueError("Gamma must be symmetric")
    return 0.5 * (G + G.T)


def _shifted_root(s: np.ndarray) -> float:
    """Root u > 0 of sum 1/(s_i + u) = d for gaps s_i = lambda_i - lambda_min >= 0.

    The map is strictly decreasing and convex in u; the root lies in
    (max(0, 1 - s_max), 1] because the smallest-gap term alone contributes 1/u.
    Newton iterates are kept inside the bracket by bisection.
    """
    d = s.size
    if d == 1:
        return 1.0
    one = s.dtype.type(1)
    if d == 2:
        delta = s.max()
        return 0.5 * (one + one / (delta + np.hypot(delta, one)))

    lo, hi = max(0 * one, one - s.max()), one
    u = hi
    for _ in range(200):
        terms = 1.0 / (s + u)
        f = terms.sum() - d
        if abs(f) < RESIDUAL_TOL:
            break
        if f > 0:
            lo = u
        else:
            hi = u
        step = f / (terms**2).sum()
        u_new = u + step
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if u_new == u:
            break
        u = u_new
    return u


def _decompose(Gamma):
    G = _check_symmetric(Gamma)
    _, V = np.linalg.eigh(G)
    # Rayleigh quotients in extended precision: eigenvalue error drops from
    # eps*|Gamma| to second order in the eigenvector error
    Vx = V.astype(np.longdouble)
    lam = np.einsum("ji,jk,ki->i", Vx, G.astype(np.longdouble), Vx) / np.einsum("ji,ji->i", Vx, Vx)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    lam_min = lam[0]
    s = lam - lam_min
    u = _shifted_root(s)
    return G, lam_min, s, V, u


def solve_mu(Gamma) -> np.longdouble:
    """Lagrange multiplier mu with tr((Gamma + mu I)^-1) = d and Gamma + mu I > 0.

    Returned in extended precision: for entries of size 1e3 the nearest double
    to the root already leaves a trace residual of order 1e-12.
    """
    _, lam_min, _, _, u = _decompose(Gamma)
    return u - lam_min


def hamiltonian(Gamma) -> HamiltonianResult:
    G, lam_min, s, V, u = _decompose(Gamma)
    d = G.shape[0]
    shifted = s + u
    # d(1 - mu) + logdet(Gamma + mu I), with mu = u - lam_min
    exponent = float(d * (1 - u) + d * lam_min + np.log(shifted).sum())
    shifted = shifted.astype(float)
    with np.errstate(over="ignore"):
        # strongly negative Gamma sends H to -inf
        one_minus_h = float(np.exp(-0.5 * exponent))
    sigma = (V * (one_minus_h / shifted)) @ V.T
    sigma = 0.5 * (sigma + sigma.T)
    return HamiltonianResult(
        h_value=1.0 - one_minus_h,
        mu=float(u - lam_min),
        sigma_star=sigma,
        lambda1_star=float(np.trace(sigma)) / d,
    )


# ---------------------------------------------------------------------------
# vectorized forms used by the PDE sweeps
# ---------------------------------------------------------------------------


def hamiltonian_1d(gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H, sigma*) for scalar second derivatives: H = 1 - e^{-gamma/2}, sigma* = e^{-gamma/2}."""
    sigma = np.exp(-0.5 * gamma)
    return -np.expm1(-0.5 * gamma), sigma


def hamiltonian_2x2(gxx: np.ndarray, gxy: np.ndarray, gyy: np.ndarray):
    """Nodewise H and Sigma* entries for symmetric 2x2 fields.

    Returns ``(H, sxx, sxy, syy, mu)``.
    """
    half_diff = 0.5 * (gxx - gyy)
    r = np.hypot(half_diff, gxy)
    lam_min = 0.5 * (gxx + gyy) - r
    delta = 2.0 * r
    u = 0.5 * (1.0 + 1.0 / (delta + np.hypot(delta, 1.0)))
    v = u + delta
    exponent = 2.0 * (1.0 - u) + 2.0 * lam_min + np.log(u) + np.log(v)
    with np.errstate(over="ignore"):
        one_minus_h = np.exp(-0.5 * exponent)
    scale = one_minus_h / (u * v)
    # (Gamma + mu I)^-1 = adj / det; diagonal shifts written without cancellation
    sxx = scale * (-half_diff + r + u)
    syy = scale * (half_diff + r + u)
    sxy = -scale * gxy
    return 1.0 - one_minus_h, sxx, sxy, syy, u - lam_min
