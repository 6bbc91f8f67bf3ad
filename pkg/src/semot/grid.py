"""Periodic space-time grids on [0, T] x T^d, finite-difference stencils and test marginals.

Spatial fields are plain numpy arrays of shape ``(nx,)`` in 1D and ``(nx, nx)``
in 2D, axis ``a`` running along coordinate ``x_a = i * dx``.  Space-time fields
stack ``nt + 1`` such slices along a leading axis.  Matrix fields carry two
trailing ``(d, d)`` axes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

MASS_TOL = 1e-12
_TAIL_MASS = 1e-14


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    nx: int
    nt: int
    horizon: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.nx) != self.nx or self.nx < 4:
            raise ValueError(f"nx must be an integer >= 4, got {self.nx}")
        if int(self.nt) != self.nt or self.nt < 1:
            raise ValueError(f"nt must be an integer >= 1, got {self.nt}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return np.arange(self.nx) * self.dx

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*([self.nodes] * self.dim), indexing="ij")

    def mass(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.cell_volume)

    def check_field(self, f: np.ndarray) -> None:
        if f.shape != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")


def make_grid(dim: int, nx: int, nt: int, T: float) -> PeriodicGrid:
    return PeriodicGrid(dim=dim, nx=nx, nt=nt, horizon=float(T))


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------


def second_difference(f: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(f, -1, axis) - 2.0 * f + np.roll(f, 1, axis)) / dx**2


def cross_difference(f: np.ndarray, dx: float) -> np.ndarray:
    """Centered 4-point mixed derivative d^2 f / dx dy on a 2D periodic field."""
    fpp = np.roll(f, (-1, -1), (0, 1))
    fpm = np.roll(f, (-1, 1), (0, 1))
    fmp = np.roll(f, (1, -1), (0, 1))
    fmm = np.roll(f, (1, 1), (0, 1))
    return (fpp - fpm - fmp + fmm) / (4.0 * dx**2)


def laplacian_periodic(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    grid.check_field(f)
    out = second_difference(f, 0, grid.dx)
    for axis in range(1, grid.dim):
        out = out + second_difference(f, axis, grid.dx)
    return out


def hessian_periodic(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Discrete Hessian, shape ``grid.shape + (d, d)``; off-diagonals share one array."""
    grid.check_field(f)
    d = grid.dim
    out = np.empty(grid.shape + (d, d))
    for a in range(d):
        out[..., a, a] = second_difference(f, a, grid.dx)
    if d == 2:
        cross = cross_difference(f, grid.dx)
        out[..., 0, 1] = cross
        out[..., 1, 0] = cross
    return out


def discrete_mode_eigenvalue(grid: PeriodicGrid, k: int = 1) -> float:
    """kappa with  Delta_h cos(2 pi k x) = -kappa cos(2 pi k x)  for the 3-point stencil."""
    return 2.0 / grid.dx**2 * (1.0 - math.cos(2.0 * math.pi * k * grid.dx))


def l1_distance(a: np.ndarray, b: np.ndarray, grid: PeriodicGrid) -> float:
    grid.check_field(a)
    grid.check_field(b)
    return float(np.sum(np.abs(a - b)) * grid.cell_volume)


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------


def _image_count(center: float, sd: float) -> int:
    """Smallest K such that images |k| > K carry less than the tail mass on [0, 1)."""
    K = 0
    while True:
        tail = ndtr((-K - center) / sd) + ndtr(-(K + 1 - center) / sd)
        if tail < _TAIL_MASS:
            return K
        K += 1


def normalize(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    mass = np.sum(values) * grid.cell_volume
    if not (mass > 0 and np.isfinite(mass)):
        raise ValueError("cannot normalize a field with non-positive mass")
    return values / mass


def _wrapped_gaussian_values(x: np.ndarray, center: float, sd: float) -> np.ndarray:
    K = _image_count(center % 1.0, sd)
    vals = np.zeros_like(x, dtype=float)
    for k in range(-K, K + 1):
        vals += np.exp(-((x - center + k) ** 2) / (2.0 * sd**2))
    return vals


def periodized_gaussian(center: float, sd: float, grid: PeriodicGrid) -> np.ndarray:
    if grid.dim != 1:
        raise ValueError("periodized_gaussian is one-dimensional; use rotated_gaussian_2d")
    if not sd > 0:
        raise ValueError(f"sd must be positive, got {sd}")
    return normalize(_wrapped_gaussian_values(grid.nodes, center, sd), grid)


def gaussian_mixture_1d(q: float, d1: float, s0: float, s1: float, grid: PeriodicGrid) -> np.ndarray:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"mixture weight q must lie in [0, 1], got {q}")
    if not (s0 > 0 and s1 > 0):
        raise ValueError("mixture standard deviations must be positive")
    mix = q * periodized_gaussian(0.5, s0, grid)
    if q < 1.0:
        side = periodized_gaussian(0.5 - d1, s1, grid) + periodized_gaussian(0.5 + d1, s1, grid)
        mix = mix + 0.5 * (1.0 - q) * side
    return normalize(mix, grid)


def rotated_gaussian_2d(center, sds, theta: float, grid: PeriodicGrid) -> np.ndarray:
    if grid.dim != 2:
        raise ValueError("rotated_gaussian_2d needs a 2D grid")
    sds = np.asarray(sds, dtype=float)
    if sds.shape != (2,) or not np.all(sds > 0):
        raise ValueError(f"sds must be two positive numbers, got {sds}")
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    C = R @ np.diag(sds**2) @ R.T
    det = np.linalg.det(C)
    if not det > 0:
        raise ValueError("degenerate covariance")
    P = np.linalg.inv(C)
    cx, cy = float(center[0]), float(center[1])
    K = max(_image_count(cx % 1.0, math.sqrt(C[0, 0])), _image_count(cy % 1.0, math.sqrt(C[1, 1])))
    X, Y = grid.mesh()
    vals = np.zeros(grid.shape)
    for kx in range(-K, K + 1):
        u = X - cx + kx
        for ky in range(-K, K + 1):
            v = Y - cy + ky
            vals += np.exp(-0.5 * (P[0, 0] * u * u + 2.0 * P[0, 1] * u * v + P[1, 1] * v * v))
    return normalize(vals, grid)


def check_density(p: np.ndarray, grid: PeriodicGrid, tol: float = MASS_TOL) -> None:
    grid.check_field(p)
    if not np.all(np.isfinite(p)):
        raise ValueError("density has non-finite values")
    if np.any(p < 0):
        raise ValueError("density has negative values")
    if abs(grid.mass(p) - 1.0) > tol:
        raise ValueError(f"density mass {grid.mass(p)!r} differs from 1")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def write_field_csv(path, f: np.ndarray, grid: PeriodicGrid) -> Path:
    grid.check_field(f)
    path = Path(path)
    x = grid.nodes
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if grid.dim == 1:
            w.writerow(["x", "value"])
            for i in range(grid.nx):
                w.writerow([fmt(x[i]), fmt(f[i])])
        else:
            w.writerow(["x", "y", "value"])
            for i in range(grid.nx):
                for j in range(grid.nx):
                    w.writerow([fmt(x[i]), fmt(x[j]), fmt(f[i, j])])
    return path


def read_field_csv(path, grid: PeriodicGrid) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    expected = ["x", "value"] if grid.dim == 1 else ["x", "y", "value"]
    if header != expected:
        raise ValueError(f"unexpected CSV header {header}, expected {expected}")
    values = np.array([float(r[-1]) for r in body])
    if values.size != grid.nx**grid.dim:
        raise ValueError(f"CSV has {values.size} rows, grid needs {grid.nx**grid.dim}")
    return values.reshape(grid.shape)
