"""Monte Carlo for Gaussian-mark Poissonizations of a diffusion.

A :class:`JumpScheme` is the pure-jump generator with intensity ``n * lam(t, x)``
and N(0, Sigma_bar(t, x)/n) marks.  Paths are drawn by thinning a rate
``n * lambda_max`` clock.  Every random number is a hash of
``(seed, path index, draw counter)``, so a path does not depend on how paths
are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtri

from semot.cost import ReferenceModel, entropy_rate
from semot.grid import fmt

QUAD_TOL = 1e-10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class CertificationError(RuntimeError):
    """The intensity exceeded the certified bound lambda_max."""


# ---------------------------------------------------------------------------
# counter-based uniforms
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, path, counter) -> np.ndarray:
    """Uniforms in (0, 1), a pure function of (seed, path, counter)."""
    with np.errstate(over="ignore"):
        key = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        h = _mix(key ^ _mix(np.asarray(path, dtype=np.uint64)))
        h = _mix(h ^ np.asarray(counter, dtype=np.uint64))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# ---------------------------------------------------------------------------
# schemes and paths
# ---------------------------------------------------------------------------


def _points(x, dim):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, dim)


@dataclass(frozen=True)
class JumpScheme:
    """Intensity factor ``lam(t, x)`` and mark covariance ``sigma_bar(t, x)``.

    Both callables take ``t`` of shape ``(m,)`` (or a scalar) and ``x`` of shape
    ``(m, d)`` and return ``(m,)`` and ``(m, d, d)`` arrays.
    """

    n: int
    lam_fn: Callable
    sigma_bar_fn: Callable
    lambda_max: float
    dim: int = 1
    tag: str = "unit-intensity"
    time_dependent: bool = False
    constant: bool = False  # coefficients depend on neither t nor x

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")

    def lam(self, t, x) -> np.ndarray:
        pts = _points(x, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1])
        return np.asarray(self.lam_fn(t, pts), dtype=float).reshape(pts.shape[0])

    def sigma_bar(self, t, x) -> np.ndarray:
        pts = _points(x, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:1])
        out = np.asarray(self.sigma_bar_fn(t, pts), dtype=float)
        return np.broadcast_to(out, (pts.shape[0], self.dim, self.dim))

    def with_n(self, n: int) -> "JumpScheme":
        return replace(self, n=n)


def _const(value):
    return lambda t, x: np.full(x.shape[0], value)


def _const_matrix(mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    return lambda t, x: np.broadcast_to(mat, (x.shape[0],) + mat.shape)


def constant_scheme(n: int, lam: float, sigma_bar, tag: str = "unit-intensity") -> JumpScheme:
    sb = np.atleast_2d(np.asarray(sigma_bar, dtype=float))
    return JumpScheme(n, _const(float(lam)), _const_matrix(sb), float(lam), sb.shape[0], tag, constant=True)


def reference_scheme(n: int, ref: ReferenceModel) -> JumpScheme:
    return JumpScheme(
        n,
        lambda t, x: np.broadcast_to(ref.lam(t, x), x.shape[:1]),
        lambda t, x: ref.sigma_bar(t, x),
        ref.b_hi,
        ref.dim,
        "reference",
        constant=ref.brownian,
    )


def unit_intensity_scheme(n: int, sigma1, dim: int = 1, time_dependent=False) -> JumpScheme:
    """Scheme (i): lam = 1, all of Sigma_1 goes into the marks."""
    fn = sigma1 if callable(sigma1) else _const_matrix(sigma1)
    return JumpScheme(n, _const(1.0), fn, 1.0, dim, "unit-intensity", time_dependent, not callable(sigma1))


def trace_normalized_scheme(
    n: int, sigma1, ref: ReferenceModel, lambda_max: float | None = None, time_dependent=False
) -> JumpScheme:
    """Scheme (ii): lam = tr(Sigma_bar_2^-1 Sigma_1)/d and Sigma_bar = Sigma_1 / lam."""
    d = ref.dim
    fn = sigma1 if callable(sigma1) else _const_matrix(sigma1)

    def lam(t, x):
        S = np.asarray(fn(t, x), dtype=float)
        return np.trace(np.linalg.solve(ref.sigma_bar(t, x), S), axis1=-2, axis2=-1) / d

    def sbar(t, x):
        S = np.asarray(fn(t, x), dtype=float)
        return S / lam(t, x)[:, None, None]

    if lambda_max is None:
        if callable(sigma1):
            raise ValueError("a state-dependent Sigma_1 needs a certified lambda_max")
        lambda_max = float(lam(np.zeros(1), np.zeros((1, d)))[0])
    constant = not callable(sigma1) and ref.brownian
    return JumpScheme(n, lam, sbar, lambda_max, d, "trace-normalized", time_dependent, constant)


@dataclass(frozen=True)
class JumpPath:
    x0: np.ndarray
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        if self.times.size and (self.times[0] <= 0 or self.times[-1] > 1 or np.any(np.diff(self.times) <= 0)):
            raise ValueError("jump times must be strictly increasing in (0, 1]")

    @property
    def n_jumps(self) -> int:
        return self.times.size

    def terminal(self) -> np.ndarray:
        return self.x0 + self.marks.sum(axis=0)

    def value(self, t: float) -> np.ndarray:
        return self.x0 + self.marks[self.times <= t].sum(axis=0)


@dataclass
class JumpBatch:
    """Ragged storage: jumps of path ``i`` live in ``times[offsets[i]:offsets[i+1]]``."""

    x0: np.ndarray  # (P, d)
    times: np.ndarray  # (E,)
    marks: np.ndarray  # (E, d)
    offsets: np.ndarray  # (P + 1,)
    path_ids: np.ndarray = field(default=None)

    @property
    def n_paths(self) -> int:
        return self.x0.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_paths), self.counts)

    def path(self, i: int) -> JumpPath:
        a, b = self.offsets[i], self.offsets[i + 1]
        return JumpPath(self.x0[i].copy(), self.times[a:b].copy(), self.marks[a:b].copy())

    def pre_jump_states(self) -> np.ndarray:
        """X_{t_k-} for every jump."""
        owner = self.owner()
        csum = np.cumsum(self.marks, axis=0)
        first = self.offsets[:-1][self.counts > 0]
        base = np.zeros((self.n_paths, self.marks.shape[1]))
        # cumulative sum before each path's first jump
        base[self.counts > 0] = np.where(first[:, None] > 0, csum[np.maximum(first - 1, 0)], 0.0)
        start = csum - self.marks - base[owner]
        return self.x0[owner] + start

    def terminal(self) -> np.ndarray:
        out = self.x0.copy()
        np.add.at(out, self.owner(), self.marks)
        return out

    def intervals(self):
        """Piecewise-constant pieces ``(path, start, end, state)`` covering [0, 1] for every path."""
        owner = self.owner()
        post = self.pre_jump_states() + self.marks
        path = np.concatenate([np.arange(self.n_paths), owner])
        start = np.concatenate([np.zeros(self.n_paths), self.times])
        state = np.concatenate([self.x0, post])
        order = np.lexsort((start, path))
        path, start, state = path[order], start[order], state[order]
        end = np.append(start[1:], 1.0)
        last = np.append(path[1:] != path[:-1], True)
        end[last] = 1.0
        return path, start, end, state


def _sqrtm_batch(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    if np.any(w <= 0):
        raise ValueError("mark covariance must be positive definite")
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def simulate_paths(scheme: JumpScheme, x0, seed: int, n_paths: int, first_path: int = 0) -> JumpBatch:
    """Thinning over a rate ``n * lambda_max`` clock, all paths advanced in lockstep."""
    d = scheme.dim
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, d), (n_paths, d)).copy()
    ids = np.arange(first_path, first_path + n_paths, dtype=np.uint64)
    stride = 2 + d
    rate = scheme.n * scheme.lambda_max
    t = np.zeros(n_paths)
    x = x0.copy()
    j = np.zeros(n_paths, dtype=np.uint64)
    active = np.arange(n_paths)
    ev_path, ev_time, ev_mark = [], [], []
    while active.size:
        base = j[active] * np.uint64(stride)
        e = -np.log(counter_uniforms(seed, ids[active], base))
        t_new = t[active] + e / rate
        alive = t_new <= 1.0
        active, t_new, base = active[alive], t_new[alive], base[alive]
        if not active.size:
            break
        t[active] = t_new
        j[active] += np.uint64(1)
        xs = x[active]
        lam = scheme.lam(t_new, xs)
        if np.any(lam > scheme.lambda_max * (1 + 1e-12)):
            raise CertificationError(f"intensity {lam.max():.6g} exceeds lambda_max {scheme.lambda_max:.6g}")
        u = counter_uniforms(seed, ids[active], base + np.uint64(1))
        acc = u * scheme.lambda_max < lam
        if np.any(acc):
            who = active[acc]
            z = ndtri(counter_uniforms(seed, ids[who][:, None], base[acc][:, None] + np.uint64(2) + np.arange(d, dtype=np.uint64)))
            root = _sqrtm_batch(scheme.sigma_bar(t_new[acc], xs[acc]) / scheme.n)
            mark = np.einsum("pij,pj->pi", root, z)
            x[who] += mark
            ev_path.append(who)
            ev_time.append(t_new[acc])
            ev_mark.append(mark)
    if ev_path:
        p = np.concatenate(ev_path)
        order = np.lexsort((np.concatenate(ev_time), p))
        p = p[order]
        times = np.concatenate(ev_time)[order]
        marks = np.concatenate(ev_mark)[order]
    else:
        p, times, marks = np.zeros(0, int), np.zeros(0), np.zeros((0, d))
    offsets = np.concatenate([[0], np.cumsum(np.bincount(p, minlength=n_paths))])
    return JumpBatch(x0, times, marks, offsets, ids)


def simulate_jump_path(scheme: JumpScheme, x0, seed: int, path_index: int = 0) -> JumpPath:
    return simulate_paths(scheme, x0, seed, 1, first_path=path_index).path(0)


def _as_batch(path) -> JumpBatch:
    if isinstance(path, JumpBatch):
        return path
    d = np.atleast_1d(path.x0).size
    return JumpBatch(
        np.atleast_1d(path.x0).reshape(1, d),
        path.times,
        path.marks.reshape(-1, d),
        np.array([0, path.times.size]),
    )


# ---------------------------------------------------------------------------
# pathwise functionals
# ---------------------------------------------------------------------------


def integrate_intervals(f, a: np.ndarray, b: np.ndarray, x: np.ndarray, time_dependent: bool, tol: float = QUAD_TOL):
    """int_a^b f(t, x) dt per row with ``x`` frozen; adaptive Gauss-Legendre when f depends on t."""
    if not time_dependent:
        return (b - a) * f(a, x)

    def gl(lo, hi, xs):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        tt = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = f(tt.ravel(), np.repeat(xs, _GL_NODES.size, axis=0)).reshape(tt.shape)
        return half * (vals @ _GL_WEIGHTS)

    out = np.zeros(a.size)
    idx = np.arange(a.size)
    lo, hi, xs = a.copy(), b.copy(), x.copy()
    whole = gl(lo, hi, xs)
    for _ in range(40):
        if not idx.size:
            break
        mid = 0.5 * (lo + hi)
        left, right = gl(lo, mid, xs), gl(mid, hi, xs)
        fine = left + right
        done = np.abs(fine - whole) <= tol
        np.add.at(out, idx[done], fine[done])
        keep = ~done
        idx = np.concatenate([idx[keep], idx[keep]])
        lo, hi = np.concatenate([lo[keep], mid[keep]]), np.concatenate([mid[keep], hi[keep]])
        xs = np.concatenate([xs[keep], xs[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        tol = tol / 2
    if idx.size:
        np.add.at(out, idx, whole)
    return out


def ell_function(s1: JumpScheme, s2: JumpScheme):
    def ell(t, x):
        return entropy_rate(s1.lam(t, x), s1.sigma_bar(t, x), s2.lam(t, x), s2.sigma_bar(t, x))

    return ell


def path_integral_ell(path, s1: JumpScheme, s2: JumpScheme) -> np.ndarray | float:
    """int_0^1 ell(t, X_t) dt along each path, exact between jumps."""
    batch = _as_batch(path)
    if s1.constant and s2.constant:
        out = np.full(batch.n_paths, ell_function(s1, s2)(np.zeros(1), batch.x0[:1])[0])
        return float(out[0]) if isinstance(path, JumpPath) else out
    owner, start, end, state = batch.intervals()
    pieces = integrate_intervals(ell_function(s1, s2), start, end, state, s1.time_dependent or s2.time_dependent)
    out = np.bincount(owner, weights=pieces, minlength=batch.n_paths)
    return float(out[0]) if isinstance(path, JumpPath) else out


def girsanov_loglik(path, s1: JumpScheme, s2: JumpScheme) -> np.ndarray | float:
    """log dP1^n/dP2^n on each path (jump terms minus compensator difference)."""
    if s1.n != s2.n:
        raise ValueError("schemes must share the scaling n")
    n = s1.n
    batch = _as_batch(path)
    d = batch.x0.shape[1]
    total = np.zeros(batch.n_paths)
    if batch.times.size:
        pre = batch.pre_jump_states()
        t = batch.times
        lam1, lam2 = s1.lam(t, pre), s2.lam(t, pre)
        sb1, sb2 = s1.sigma_bar(t, pre), s2.sigma_bar(t, pre)
        sign1, logdet1 = np.linalg.slogdet(sb1)
        sign2, logdet2 = np.linalg.slogdet(sb2)
        if np.any(sign1 <= 0) or np.any(sign2 <= 0):
            raise ValueError("mark covariances must be positive definite")
        z = batch.marks
        q1 = np.einsum("ki,ki->k", z, np.linalg.solve(sb1, z[..., None])[..., 0])
        q2 = np.einsum("ki,ki->k", z, np.linalg.solve(sb2, z[..., None])[..., 0])
        mark_ratio = -0.5 * n * (q1 - q2) - 0.5 * (logdet1 - logdet2)
        total += np.bincount(batch.owner(), weights=np.log(lam1 / lam2) + mark_ratio, minlength=batch.n_paths)
    owner, start, end, state = batch.intervals()

    def dlam(t, x):
        return s1.lam(t, x) - s2.lam(t, x)

    comp = integrate_intervals(dlam, start, end, state, s1.time_dependent or s2.time_dependent)
    total -= n * np.bincount(owner, weights=comp, minlength=batch.n_paths)
    del d
    return float(total[0]) if isinstance(path, JumpPath) else total


# ---------------------------------------------------------------------------
# estimators and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    estimator: str
    n: int
    n_paths: int
    mean: float
    stderr: float
    reference_value: float
    seed: int

    @property
    def z_score(self) -> float:
        diff = self.mean - self.reference_value
        if self.stderr == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.stderr

    def to_line(self) -> str:
        return (
            f"estimator={self.estimator} n={self.n} n_paths={self.n_paths} mean={fmt(self.mean)} "
            f"stderr={fmt(self.stderr)} reference_value={fmt(self.reference_value)} "
            f"z_score={fmt(self.z_score)} seed={self.seed}"
        )


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    if samples.size < 2 or np.all(samples == samples[0]):
        return float(samples[0]), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


def _chunked(scheme, x0, seed, n_paths, fn, chunk=2000):
    parts = []
    for first in range(0, n_paths, chunk):
        m = min(chunk, n_paths - first)
        parts.append(fn(simulate_paths(scheme, x0, seed, m, first_path=first)))
    return np.concatenate(parts)


def entropy_estimate(s1: JumpScheme, s2: JumpScheme, n_paths: int, seed: int, x0=0.0) -> tuple[float, float]:
    """Mean and standard error of int ell dt over paths drawn from ``s1``."""
    vals = _chunked(s1, x0, seed, n_paths, lambda b: path_integral_ell(b, s1, s2))
    return _mean_stderr(vals)


def girsanov_estimate(s1: JumpScheme, s2: JumpScheme, n_paths: int, seed: int, x0=0.0) -> tuple[float, float]:
    """Mean and standard error of (1/n) log dP1/dP2 over paths drawn from ``s1``."""
    vals = _chunked(s1, x0, seed, n_paths, lambda b: girsanov_loglik(b, s1, s2) / s1.n)
    return _mean_stderr(vals)


def likelihood_normalization(s1: JumpScheme, s2: JumpScheme, n_paths: int, seed: int, x0=0.0) -> tuple[float, float]:
    """Mean and standard error of dP1/dP2 over paths drawn from ``s2`` (should be 1)."""
    vals = _chunked(s2, x0, seed, n_paths, lambda b: np.exp(girsanov_loglik(b, s1, s2)))
    return _mean_stderr(vals)


def euler_diffusion_expectation(
    s1: JumpScheme,
    s2: JumpScheme,
    x0,
    steps: int,
    n_paths: int,
    seed: int,
    sigma1: Callable | None = None,
) -> tuple[float, float]:
    """E[int_0^1 ell(t, X_t) dt] for dX = Sigma_1^{1/2}(t, X) dW by Euler-Maruyama.

    ``sigma1`` defaults to ``s1.lam * s1.sigma_bar``; the time integral uses the
    right endpoint of every step.
    """
    if steps < 100:
        raise ValueError("steps must be >= 100")
    d = s1.dim
    if sigma1 is None:

        def sigma1(t, x):
            return s1.lam(t, x)[:, None, None] * s1.sigma_bar(t, x)

    ell = ell_function(s1, s2)
    rng = np.random.default_rng(seed)
    h = 1.0 / steps
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1, d), (n_paths, d)).copy()
    acc = np.zeros(n_paths)
    for i in range(steps):
        t = np.full(n_paths, i * h)
        S = np.asarray(sigma1(t, x), dtype=float)
        if d == 1:
            if np.any(S[:, 0, 0] <= 0):
                raise ValueError("Sigma_1 must be positive definite")
            x = x + np.sqrt(S[:, 0, :] * h) * rng.standard_normal((n_paths, 1))
        else:
            x = x + np.einsum("pij,pj->pi", _sqrtm_batch(S), rng.standard_normal((n_paths, d))) * math.sqrt(h)
        acc += h * ell(np.full(n_paths, (i + 1) * h), x)
    return _mean_stderr(acc)


@dataclass(frozen=True)
class MomentReport:
    n: int
    n_paths: int
    mean: np.ndarray
    mean_se: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    variance_ref: np.ndarray
    covariance: np.ndarray
    excess_kurtosis: np.ndarray
    kurtosis_se: np.ndarray
    kurtosis_ref: float
    seed: int

    def z_scores(self) -> dict:
        return {
            "mean": self.mean / self.mean_se,
            "variance": (self.variance - self.variance_ref) / self.variance_se,
            "kurtosis": (self.excess_kurtosis - self.kurtosis_ref) / self.kurtosis_se,
        }

    def lines(self) -> list[str]:
        out = []
        for c in range(self.mean.size):
            out.append(
                f"estimator=moment_mean n={self.n} n_paths={self.n_paths} component={c} mean={fmt(self.mean[c])} "
                f"stderr={fmt(self.mean_se[c])} reference_value=0 z_score={fmt(self.z_scores()['mean'][c])} seed={self.seed}"
            )
            out.append(
                f"estimator=moment_variance n={self.n} n_paths={self.n_paths} component={c} mean={fmt(self.variance[c])} "
                f"stderr={fmt(self.variance_se[c])} reference_value={fmt(self.variance_ref[c])} "
                f"z_score={fmt(self.z_scores()['variance'][c])} seed={self.seed}"
            )
            out.append(
                f"estimator=moment_excess_kurtosis n={self.n} n_paths={self.n_paths} component={c} "
                f"mean={fmt(self.excess_kurtosis[c])} stderr={fmt(self.kurtosis_se[c])} "
                f"reference_value={fmt(self.kurtosis_ref)} z_score={fmt(self.z_scores()['kurtosis'][c])} seed={self.seed}"
            )
        return out


def moment_checks(scheme: JumpScheme, n_paths: int, seed: int, n: int | None = None) -> MomentReport:
    """Terminal moments of X_1 - x_0 against the compound-Poisson values (constant schemes only)."""
    if scheme.time_dependent:
        raise ValueError("moment checks need a constant scheme")
    if n is not None:
        scheme = scheme.with_n(n)
    d = scheme.dim
    origin = np.zeros((1, d))
    lam = float(scheme.lam(0.0, origin)[0])
    sb = scheme.sigma_bar(0.0, origin)[0]
    xs = _chunked(scheme, np.zeros(d), seed, n_paths, lambda b: b.terminal() - b.x0, chunk=5000)
    N = xs.shape[0]
    mean = xs.mean(axis=0)
    c = xs - mean
    m2 = (c**2).mean(axis=0)
    m4 = (c**4).mean(axis=0)
    g2 = m4 / m2**2 - 3.0
    # influence function of m4/m2^2 gives the delta-method standard error
    infl = (c**4 - m4) / m2**2 - 2.0 * m4 / m2**3 * (c**2 - m2)
    return MomentReport(
        n=scheme.n,
        n_paths=N,
        mean=mean,
        mean_se=np.sqrt(m2 / N),
        variance=c.var(axis=0, ddof=1),
        variance_se=np.sqrt((m4 - m2**2) / N),
        variance_ref=lam * np.diag(sb),
        covariance=np.cov(xs, rowvar=False).reshape(d, d),
        excess_kurtosis=g2,
        kurtosis_se=infl.std(axis=0, ddof=1) / math.sqrt(N),
        kurtosis_ref=3.0 / (scheme.n * lam),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Brownian counting construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountingRecord:
    n: int
    interarrivals: np.ndarray
    arrival_times: np.ndarray
    grid_times: np.ndarray
    scaled_counts: np.ndarray

    def window_counts(self, width: float = 1.0) -> np.ndarray:
        """Scaled counts N^n over consecutive disjoint windows fully covered by the arrivals."""
        n_windows = int(math.floor(self.arrival_times[-1] / width))
        edges = np.arange(n_windows + 1) * width
        return np.diff(np.searchsorted(self.arrival_times, edges, side="right")) / self.n


def brownian_counting(n: int, horizon: float, seed: int, n_interarrivals: int | None = None, grid_points: int = 1001):
    """Arrivals S_k built from pairs of squared N(0, 1/(2n)) half-grid Brownian increments.

    Each interarrival is Exp(n); ``n * N^n`` is then a rate-n Poisson process.
    Without ``n_interarrivals`` enough arrivals are drawn to pass ``horizon``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(1.0 / (2 * n))
    if n_interarrivals is None:
        chunks, total = [], 0.0
        while total <= horizon:
            m = max(16, int(n * horizon))
            inc = rng.normal(0.0, sd, size=(m, 2))
            chunk = (inc**2).sum(axis=1)
            chunks.append(chunk)
            total += chunk.sum()
        gaps = np.concatenate(chunks)
    else:
        inc = rng.normal(0.0, sd, size=(n_interarrivals, 2))
        gaps = (inc**2).sum(axis=1)
    arrivals = np.cumsum(gaps)
    grid_times = np.linspace(0.0, horizon, grid_points)
    counts = np.searchsorted(arrivals, grid_times, side="right") / n
    return CountingRecord(n, gaps, arrivals, grid_times, counts)
