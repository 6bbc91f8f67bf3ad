"""Outer fixed point  phi1 -> phi -> Sigma* -> p -> p(T) -> phi1 + eta * log(p(T)/mu1)."""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from semot.cost import dual_value
from semot.grid import PeriodicGrid, l1_distance
from semot.pde import PDESolver, StepFailure

log = logging.getLogger(__name__)


@dataclass
class SinkhornConfig:
    eta0: float | None = None  # None: eta = dt
    smoothing_passes: int = 2
    density_floor: float = 0.1
    l1_tolerance: float = 1e-3
    max_outer: int = 500
    adaptive: bool = False
    eta_down: float = 0.5
    eta_up: float = 1.05
    eta_min: float = 1e-5
    eta_max: float = 0.05
    anderson_memory: int = 5
    anderson_regularization: float = 1e-10
    newton_tol: float = 1e-10
    max_newton: int = 50
    fp_sigma_level: str = "later"

    def validate(self) -> list[str]:
        errors = []
        if self.eta0 is not None and not self.eta0 > 0:
            errors.append(f"eta0 must be positive, got {self.eta0}")
        if not self.density_floor > 0:
            errors.append(f"density_floor must be positive, got {self.density_floor}")
        if not 0 < self.eta_down < 1:
            errors.append(f"eta_down must lie in (0, 1), got {self.eta_down}")
        if not self.eta_up > 1:
            errors.append(f"eta_up must exceed 1, got {self.eta_up}")
        if not 0 < self.eta_min <= self.eta_max:
            errors.append(f"need 0 < eta_min <= eta_max, got {self.eta_min}, {self.eta_max}")
        if self.anderson_memory < 0:
            errors.append(f"anderson_memory must be >= 0, got {self.anderson_memory}")
        if self.anderson_regularization < 0:
            errors.append("anderson_regularization must be >= 0")
        if self.smoothing_passes < 0:
            errors.append(f"smoothing_passes must be >= 0, got {self.smoothing_passes}")
        if not self.l1_tolerance > 0:
            errors.append(f"l1_tolerance must be positive, got {self.l1_tolerance}")
        if self.max_outer < 1:
            errors.append(f"max_outer must be >= 1, got {self.max_outer}")
        return errors

    @classmethod
    def paper_1d(cls, **overrides) -> "SinkhornConfig":
        """Plain relaxation with eta = dt, no adaptation or acceleration, ten smoothing passes."""
        return cls(**{"adaptive": False, "anderson_memory": 0, "smoothing_passes": 10, **overrides})

    @classmethod
    def paper_2d(cls, **overrides) -> "SinkhornConfig":
        """eta0 = 0.005 with adaptation and Anderson(5); eight smoothing passes keep the 2D update stable."""
        return cls(**{"eta0": 0.005, "adaptive": True, "anderson_memory": 5, "smoothing_passes": 8, **overrides})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class IterationDiagnostics:
    iteration: int
    l1_error: float
    dual_value: float
    eta: float
    newton_iters: int
    seconds: float
    accepted: bool = True


@dataclass
class Solution:
    phi: np.ndarray
    p: np.ndarray
    sigma_star: np.ndarray
    phi1_final: np.ndarray
    diagnostics: list[IterationDiagnostics] = field(default_factory=list)
    converged: bool = False

    @property
    def l1_errors(self) -> np.ndarray:
        return np.array([d.l1_error for d in self.diagnostics])

    @property
    def dual_values(self) -> np.ndarray:
        return np.array([d.dual_value for d in self.diagnostics])


class SinkhornFailure(RuntimeError):
    def __init__(self, message, iteration, cause=None):
        super().__init__(message)
        self.iteration = iteration
        self.cause = cause


def smooth_log_ratio(r: np.ndarray, passes: int) -> np.ndarray:
    """Periodic (1/4, 1/2, 1/4) filter, ``passes`` times along every axis."""
    out = np.array(r, dtype=float)
    for _ in range(passes):
        for axis in range(out.ndim):
            out = 0.25 * np.roll(out, 1, axis) + 0.5 * out + 0.25 * np.roll(out, -1, axis)
    return out


def log_ratio(p1, mu1, config: SinkhornConfig) -> np.ndarray:
    floor = config.density_floor
    r = np.log(np.maximum(p1, floor) / np.maximum(mu1, floor))
    return smooth_log_ratio(r, config.smoothing_passes)


def sinkhorn_update(phi1, p1, mu1, eta: float, config: SinkhornConfig) -> np.ndarray:
    return phi1 + eta * log_ratio(p1, mu1, config)


def adapt_eta(eta: float, e_k: float, e_km1: float, config: SinkhornConfig) -> float:
    eta = eta * (config.eta_down if e_k > e_km1 else config.eta_up)
    return float(min(max(eta, config.eta_min), config.eta_max))


def anderson_weights(residuals, regularization: float = 1e-10) -> np.ndarray | None:
    """Weights minimising ``|sum_j w_j r_j|^2 + regularization |w|^2`` under ``sum_j w_j = 1``.

    Returns None when the normal equations are degenerate.
    """
    R = np.stack([np.ravel(r) for r in residuals], axis=1)
    G = R.T @ R + regularization * np.eye(R.shape[1])
    try:
        z = np.linalg.solve(G, np.ones(R.shape[1]))
    except np.linalg.LinAlgError:
        return None
    total = z.sum()
    if not (np.all(np.isfinite(z)) and np.isfinite(total) and total != 0):
        return None
    return z / total


def anderson_step(history, m: int | None = None, regularization: float = 1e-10, mixing: float = 1.0) -> np.ndarray:
    """Combine the candidates ``phi_j + mixing * res_j`` of the last ``m`` (phi_j, res_j) pairs.

    Degenerate systems fall back to the newest plain candidate.
    """
    history = list(history)
    if m is not None and m > 0:
        history = history[-m:]
    phi_last, res_last = history[-1]
    plain = phi_last + mixing * res_last
    if len(history) == 1:
        return plain
    w = anderson_weights([res for _, res in history], regularization)
    if w is None:
        return plain
    return sum(wj * (phi + mixing * res) for wj, (phi, res) in zip(w, history))


def run(mu0, mu1, grid: PeriodicGrid, config: SinkhornConfig | None = None, callback=None) -> Solution:
    """Iterate the fixed point from phi1 = 0 until the terminal L1 mismatch meets the tolerance.

    In adaptive mode an iterate whose error exceeds that of the last accepted
    iterate is rejected and the next trial is a plain step from the last
    accepted iterate, with the Anderson history dropped.  eta is cut only when
    the rejected trial was itself a plain step; a failed extrapolation says
    nothing about the relaxation parameter.
    """
    config = config or SinkhornConfig()
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    for f in (mu0, mu1):
        grid.check_field(f)

    solver = PDESolver(grid, tol=config.newton_tol, max_newton=config.max_newton, sigma_level=config.fp_sigma_level)
    eta = grid.dt if config.eta0 is None else config.eta0
    phi1 = np.zeros(grid.shape)
    history = deque(maxlen=max(config.anderson_memory, 1))
    diagnostics: list[IterationDiagnostics] = []
    best = None
    accepted = None  # (phi1, E, smoothed log-ratio) of the last accepted iterate
    extrapolated = False  # phi1 came from an Anderson combination of >= 2 iterates

    for k in range(config.max_outer):
        start = time.perf_counter()
        newton_before = solver.newton_iterations
        try:
            phi, sigma = solver.hjb_backward_solve(phi1)
            p = solver.fp_forward_solve(mu0, sigma)
        except StepFailure as exc:
            raise SinkhornFailure(f"outer iteration {k}: {exc}", k, exc) from exc
        e_k = l1_distance(p[-1], mu1, grid)
        d_k = dual_value(phi[0], mu0, phi1, mu1, grid)
        reject = False
        if config.adaptive and accepted is not None:
            reject = e_k > accepted[1] and (extrapolated or eta > config.eta_min)
            if not (reject and extrapolated):
                eta = adapt_eta(eta, e_k, accepted[1], config)
        diagnostics.append(
            IterationDiagnostics(
                iteration=k,
                l1_error=e_k,
                dual_value=d_k,
                eta=eta,
                newton_iters=solver.newton_iterations - newton_before,
                seconds=time.perf_counter() - start,
                accepted=not reject,
            )
        )
        if callback is not None:
            callback(diagnostics[-1])
        log.debug("iter %d  L1 %.3e  D %.6e  eta %.3e", k, e_k, d_k, eta)
        if best is None or e_k < best[0]:
            best = (e_k, phi, p, sigma, phi1)
        if e_k <= config.l1_tolerance:
            return Solution(phi, p, sigma, phi1, diagnostics, converged=True)

        if reject:
            history.clear()
            phi1 = accepted[0] + eta * accepted[2]
            extrapolated = False
            continue
        g = log_ratio(p[-1], mu1, config)
        accepted = (phi1, e_k, g)
        if config.anderson_memory > 0:
            history.append((phi1, g))
            phi1 = anderson_step(history, config.anderson_memory, config.anderson_regularization, mixing=eta)
            extrapolated = len(history) > 1
        else:
            phi1 = phi1 + eta * g

    _, phi, p, sigma, phi1_best = best
    return Solution(phi, p, sigma, phi1_best, diagnostics, converged=False)
