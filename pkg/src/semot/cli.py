"""``semot <command> --config <path> [--out <dir>] [--seed <u64>]``.

Configs are YAML with the blocks ``grid``, ``marginals``, ``sinkhorn``,
``poisson`` and ``output``.  Unknown keys are rejected, and every validation
problem is reported at once.
"""

from __future__ import annotations

import argparse
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from semot import __version__
from semot.cost import brownian_reference, primal_cost
from semot.grid import (
    fmt,
    gaussian_mixture_1d,
    make_grid,
    normalize,
    periodized_gaussian,
    rotated_gaussian_2d,
    write_field_csv,
)
from semot.pde import StepFailure
from semot.poisson import (
    CertificationError,
    JumpScheme,
    Report,
    brownian_counting,
    ell_function,
    entropy_estimate,
    euler_diffusion_expectation,
    girsanov_estimate,
    moment_checks,
    reference_scheme,
    trace_normalized_scheme,
    unit_intensity_scheme,
)
from semot.sinkhorn import SinkhornConfig, SinkhornFailure, run

COMMANDS = ("solve1d", "solve2d", "entropy-limit", "poisson-moments", "ldp-check")
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_SOLVER = 4

# marginal kind -> (required parameters, dimension)
MARGINAL_KINDS = {
    "gaussian": ({"center", "sd"}, 1),
    "mixture": ({"q", "d1", "s0", "s1"}, 1),
    "rotated_gaussian": ({"center", "sds", "theta"}, 2),
    "uniform": (set(), None),
}
SCHEMES = ("unit-intensity", "trace-normalized", "reference")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class GridBlock:
    dim: int = 1
    nx: int = 128
    nt: int = 80
    T: float = 0.1


@dataclass(frozen=True)
class PoissonBlock:
    scheme: str = "unit-intensity"
    n: tuple = (50,)
    n_paths: int = 10000
    seed: int = 0
    lambda_max: float | None = None
    sigma1: float = 2.0
    amplitude: float = 0.0  # Sigma_1(x) = sigma1 * (1 + amplitude * sin(2 pi x))
    x0: float = 0.0
    euler_steps: int = 1000
    n_interarrivals: int = 100000


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    grid: GridBlock = field(default_factory=GridBlock)
    marginals: dict = field(default_factory=dict)
    sinkhorn: dict = field(default_factory=dict)
    poisson: PoissonBlock = field(default_factory=PoissonBlock)
    output: str = "semot_out"

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(**self.sinkhorn)

    def to_dict(self) -> dict:
        p = asdict(self.poisson)
        p["n"] = list(p["n"])
        return {
            "command": self.command,
            "grid": asdict(self.grid),
            "marginals": {k: dict(v) for k, v in self.marginals.items()},
            "sinkhorn": dict(self.sinkhorn),
            "poisson": p,
            "output": {"dir": self.output},
        }


@dataclass
class RunManifest:
    config: dict
    seeds: dict
    version: str
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "ok"

    def write(self, path: Path) -> None:
        body = {
            "config": self.config,
            "seeds": self.seeds,
            "version": self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "outputs": self.outputs,
            "timings": self.timings,
            "status": self.status,
        }
        path.write_text(yaml.safe_dump(body, sort_keys=False))


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _check_keys(block: dict, allowed, where: str, errors: list) -> None:
    for key in block:
        if key not in allowed:
            errors.append(f"{where}: unknown key '{key}' (allowed: {', '.join(sorted(allowed))})")


def _block(raw: dict, name: str, errors: list) -> dict:
    val = raw.get(name, {})
    if val is None:
        return {}
    if not isinstance(val, dict):
        errors.append(f"{name}: expected a mapping, got {type(val).__name__}")
        return {}
    return val


def _parse_grid(raw: dict, errors: list) -> GridBlock:
    block = _block(raw, "grid", errors)
    _check_keys(block, {f.name for f in fields(GridBlock)}, "grid", errors)
    g = GridBlock(**{k: v for k, v in block.items() if k in {f.name for f in fields(GridBlock)}})
    if g.dim not in (1, 2):
        errors.append(f"grid.dim must be 1 or 2, got {g.dim!r}")
    if not (_is_int(g.nx) and g.nx >= 4):
        errors.append(f"grid.nx must be an integer >= 4, got {g.nx!r}")
    if not (_is_int(g.nt) and g.nt >= 1):
        errors.append(f"grid.nt must be an integer >= 1, got {g.nt!r}")
    if not (_is_num(g.T) and g.T > 0):
        errors.append(f"grid.T must be positive, got {g.T!r}")
    return g


def _parse_marginals(raw: dict, dim, errors: list) -> dict:
    block = _block(raw, "marginals", errors)
    _check_keys(block, {"mu0", "mu1"}, "marginals", errors)
    out = {}
    for name in ("mu0", "mu1"):
        spec = block.get(name)
        if spec is None:
            continue
        where = f"marginals.{name}"
        if not isinstance(spec, dict) or "kind" not in spec:
            errors.append(f"{where}: expected a mapping with a 'kind' key")
            continue
        kind = spec["kind"]
        if kind not in MARGINAL_KINDS:
            errors.append(f"{where}.kind: unknown constructor '{kind}' (known: {', '.join(MARGINAL_KINDS)})")
            continue
        required, kdim = MARGINAL_KINDS[kind]
        params = {k: v for k, v in spec.items() if k != "kind"}
        _check_keys(params, required, where, errors)
        for key in sorted(required - set(params)):
            errors.append(f"{where}: missing parameter '{key}' for kind '{kind}'")
        if kdim is not None and dim in (1, 2) and kdim != dim:
            errors.append(f"{where}: kind '{kind}' is {kdim}D but grid.dim is {dim}")
        for key in ("sd", "s0", "s1"):
            if key in params and not (_is_num(params[key]) and params[key] > 0):
                errors.append(f"{where}.{key} must be positive, got {params[key]!r}")
        if "q" in params and not (_is_num(params["q"]) and 0 <= params["q"] <= 1):
            errors.append(f"{where}.q must lie in [0, 1], got {params['q']!r}")
        if "sds" in params:
            sds = params["sds"]
            if not (isinstance(sds, list) and len(sds) == 2 and all(_is_num(s) and s > 0 for s in sds)):
                errors.append(f"{where}.sds must be two positive numbers, got {sds!r}")
        if "center" in params:
            c = params["center"]
            ok = _is_num(c) if kind == "gaussian" else isinstance(c, list) and len(c) == 2 and all(map(_is_num, c))
            if not ok:
                errors.append(f"{where}.center has the wrong form: {c!r}")
        out[name] = {"kind": kind, **params}
    return out


def _parse_sinkhorn(raw: dict, errors: list) -> dict:
    block = _block(raw, "sinkhorn", errors)
    names = set(SinkhornConfig.field_names())
    _check_keys(block, names, "sinkhorn", errors)
    kept = {k: v for k, v in block.items() if k in names}
    try:
        cfg = SinkhornConfig(**kept)
    except TypeError as exc:  # pragma: no cover - keys are filtered above
        errors.append(f"sinkhorn: {exc}")
        return kept
    for k, v in kept.items():
        if k in ("smoothing_passes", "max_outer", "anderson_memory", "max_newton") and not _is_int(v):
            errors.append(f"sinkhorn.{k} must be an integer, got {v!r}")
        elif k == "adaptive" and not isinstance(v, bool):
            errors.append(f"sinkhorn.adaptive must be true or false, got {v!r}")
        elif k == "fp_sigma_level" and v not in ("earlier", "later"):
            errors.append(f"sinkhorn.fp_sigma_level must be 'earlier' or 'later', got {v!r}")
        elif k not in ("adaptive", "fp_sigma_level", "eta0") and not _is_num(v):
            errors.append(f"sinkhorn.{k} must be a number, got {v!r}")
    if not any("sinkhorn." in e and "must be" in e for e in errors):
        errors.extend(f"sinkhorn: {e}" for e in cfg.validate())
    return kept


def _parse_poisson(raw: dict, errors: list) -> PoissonBlock:
    block = dict(_block(raw, "poisson", errors))
    names = {f.name for f in fields(PoissonBlock)}
    _check_keys(block, names, "poisson", errors)
    block = {k: v for k, v in block.items() if k in names}
    if "n" in block:
        n = block["n"]
        block["n"] = tuple(n) if isinstance(n, list) else (n,)
    p = PoissonBlock(**block)
    if p.scheme not in SCHEMES:
        errors.append(f"poisson.scheme: unknown scheme '{p.scheme}' (known: {', '.join(SCHEMES)})")
    if not p.n or not all(_is_int(n) and n >= 1 for n in p.n):
        errors.append(f"poisson.n must be a list of integers >= 1, got {list(p.n)!r}")
    if not (_is_int(p.n_paths) and p.n_paths >= 2):
        errors.append(f"poisson.n_paths must be an integer >= 2, got {p.n_paths!r}")
    if not (_is_int(p.seed) and 0 <= p.seed < 2**64):
        errors.append(f"poisson.seed must be an unsigned 64-bit integer, got {p.seed!r}")
    if p.lambda_max is not None and not (_is_num(p.lambda_max) and p.lambda_max > 0):
        errors.append(f"poisson.lambda_max must be positive, got {p.lambda_max!r}")
    if not (_is_num(p.sigma1) and p.sigma1 > 0):
        errors.append(f"poisson.sigma1 must be positive, got {p.sigma1!r}")
    if not (_is_num(p.amplitude) and 0 <= p.amplitude < 1):
        errors.append(f"poisson.amplitude must lie in [0, 1), got {p.amplitude!r}")
    if not _is_num(p.x0):
        errors.append(f"poisson.x0 must be a number, got {p.x0!r}")
    if not (_is_int(p.euler_steps) and p.euler_steps >= 100):
        errors.append(f"poisson.euler_steps must be an integer >= 100, got {p.euler_steps!r}")
    if not (_is_int(p.n_interarrivals) and p.n_interarrivals >= 2):
        errors.append(f"poisson.n_interarrivals must be an integer >= 2, got {p.n_interarrivals!r}")
    return p


def config_from_dict(raw) -> ExperimentConfig:
    """Validate a raw mapping; raises :class:`ConfigError` listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    errors: list[str] = []
    _check_keys(raw, {"command", "grid", "marginals", "sinkhorn", "poisson", "output"}, "config", errors)
    command = raw.get("command")
    if command not in COMMANDS:
        errors.append(f"command: must be one of {', '.join(COMMANDS)}, got {command!r}")
    grid = _parse_grid(raw, errors)
    marginals = _parse_marginals(raw, grid.dim, errors)
    sinkhorn = _parse_sinkhorn(raw, errors)
    poisson = _parse_poisson(raw, errors)
    out_block = _block(raw, "output", errors)
    _check_keys(out_block, {"dir"}, "output", errors)
    out_dir = out_block.get("dir", "semot_out")
    if not isinstance(out_dir, str) or not out_dir:
        errors.append(f"output.dir must be a non-empty string, got {out_dir!r}")
    if command in ("solve1d", "solve2d"):
        want = 1 if command == "solve1d" else 2
        if grid.dim != want:
            errors.append(f"grid.dim must be {want} for {command}, got {grid.dim!r}")
        for name in ("mu0", "mu1"):
            if name not in marginals and not any(e.startswith(f"marginals.{name}") for e in errors):
                errors.append(f"marginals.{name} is required for {command}")
    if command in ("entropy-limit", "poisson-moments"):
        if poisson.amplitude > 0 and poisson.scheme == "trace-normalized" and poisson.lambda_max is None:
            errors.append("poisson.lambda_max is required for a state-dependent trace-normalized scheme")
        if command == "poisson-moments" and poisson.amplitude > 0:
            errors.append("poisson.amplitude must be 0 for poisson-moments (constant scheme only)")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(command, grid, marginals, sinkhorn, poisson, out_dir)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    return config_from_dict(raw)


def write_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def build_marginal(spec: dict, grid):
    kind = spec["kind"]
    if kind == "gaussian":
        return periodized_gaussian(spec["center"], spec["sd"], grid)
    if kind == "mixture":
        return gaussian_mixture_1d(spec["q"], spec["d1"], spec["s0"], spec["s1"], grid)
    if kind == "rotated_gaussian":
        return rotated_gaussian_2d(spec["center"], spec["sds"], spec["theta"], grid)
    return normalize(np.ones(grid.shape), grid)


def _record(**kv) -> str:
    parts = []
    for k, v in kv.items():
        if isinstance(v, (float, np.floating)):
            v = fmt(v)
        parts.append(f"{k}={v}")
    return " ".join(parts)


class _Sink:
    """Append-only diagnostics file, flushed line by line."""

    def __init__(self, path: Path):
        self.path = path
        self.fh = path.open("w")

    def write(self, line: str) -> None:
        self.fh.write(line + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def write_sigma_surface(path: Path, sigma: np.ndarray, grid) -> Path:
    """Sigma* at every space-time node: ``t,x,sigma`` in 1D, ``t,x,y,sxx,sxy,syy`` in 2D."""
    x = grid.nodes
    lines = []
    if grid.dim == 1:
        lines.append("t,x,sigma")
        for n, t in enumerate(grid.times):
            for i in range(grid.nx):
                lines.append(f"{fmt(t)},{fmt(x[i])},{fmt(sigma[n, i, 0, 0])}")
    else:
        lines.append("t,x,y,sxx,sxy,syy")
        for n, t in enumerate(grid.times):
            for i in range(grid.nx):
                for j in range(grid.nx):
                    s = sigma[n, i, j]
                    lines.append(f"{fmt(t)},{fmt(x[i])},{fmt(x[j])},{fmt(s[0, 0])},{fmt(s[0, 1])},{fmt(s[1, 1])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _solve(config: ExperimentConfig, out: Path, sink: _Sink, manifest: RunManifest) -> int:
    g = config.grid
    grid = make_grid(g.dim, g.nx, g.nt, g.T)
    mu0 = build_marginal(config.marginals["mu0"], grid)
    mu1 = build_marginal(config.marginals["mu1"], grid)
    cfg = config.sinkhorn_config()

    def emit(d):
        sink.write(
            _record(
                iteration=d.iteration,
                l1_error=d.l1_error,
                dual_value=d.dual_value,
                eta=d.eta,
                newton_iters=d.newton_iters,
            )
        )

    start = time.perf_counter()
    sol = run(mu0, mu1, grid, cfg, callback=emit)
    manifest.timings["sinkhorn_seconds"] = time.perf_counter() - start
    manifest.outputs.append(write_field_csv(out / "p_final.csv", sol.p[-1], grid).name)
    manifest.outputs.append(write_sigma_surface(out / "sigma_surface.csv", sol.sigma_star, grid).name)
    try:
        primal = primal_cost(sol.sigma_star, sol.p, grid, brownian_reference(grid.dim))
    except ValueError:
        primal = math.inf
    dual = sol.dual_values[-1]
    sink.write(
        _record(
            status="converged" if sol.converged else "not_converged",
            iterations=len(sol.diagnostics),
            l1_error=float(sol.l1_errors.min()),
            dual_value=float(dual),
            primal_cost=float(primal),
            duality_gap=float(abs(primal - dual)),
        )
    )
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _sigma1_fn(p: PoissonBlock):
    if p.amplitude == 0:
        return np.array([[p.sigma1]])

    def sigma1(t, x):
        return (p.sigma1 * (1.0 + p.amplitude * np.sin(2 * np.pi * x[:, 0])))[:, None, None]

    return sigma1


def build_schemes(p: PoissonBlock, n: int) -> tuple[JumpScheme, JumpScheme]:
    """(scheme under test, Brownian reference scheme) for a 1D poisson block."""
    ref = brownian_reference(1)
    s2 = reference_scheme(n, ref)
    sigma1 = _sigma1_fn(p)
    if p.scheme == "reference":
        return reference_scheme(n, ref), s2
    if p.scheme == "unit-intensity":
        return unit_intensity_scheme(n, sigma1, 1), s2
    lam_max = p.lambda_max
    if lam_max is None:
        lam_max = p.sigma1 * (1 + p.amplitude)
    return trace_normalized_scheme(n, sigma1, ref, lambda_max=lam_max), s2


def _entropy_limit(config: ExperimentConfig, sink: _Sink, manifest: RunManifest) -> int:
    p = config.poisson
    x0 = np.array([p.x0])
    s1, s2 = build_schemes(p, p.n[0])
    if p.amplitude == 0:
        oracle, oracle_se = float(ell_function(s1, s2)(np.zeros(1), x0[None])[0]), 0.0
        oracle_name = "exact"
    else:
        start = time.perf_counter()
        oracle, oracle_se = euler_diffusion_expectation(s1, s2, x0, p.euler_steps, p.n_paths, p.seed)
        manifest.timings["euler_seconds"] = time.perf_counter() - start
        oracle_name = "euler"
    sink.write(_record(estimator=f"oracle_{oracle_name}", mean=oracle, stderr=oracle_se, seed=p.seed))
    for n in p.n:
        s1, s2 = build_schemes(p, n)
        start = time.perf_counter()
        for name, fn in (("ell_path_integral", entropy_estimate), ("girsanov", girsanov_estimate)):
            mean, se = fn(s1, s2, p.n_paths, p.seed, x0)
            rep = Report(name, n, p.n_paths, mean, math.hypot(se, oracle_se), oracle, p.seed)
            sink.write(rep.to_line())
        manifest.timings[f"n{n}_seconds"] = time.perf_counter() - start
    return EXIT_OK


def _poisson_moments(config: ExperimentConfig, sink: _Sink, manifest: RunManifest) -> int:
    p = config.poisson
    for n in p.n:
        s1, _ = build_schemes(p, n)
        start = time.perf_counter()
        rep = moment_checks(s1, p.n_paths, p.seed)
        manifest.timings[f"n{n}_seconds"] = time.perf_counter() - start
        for line in rep.lines():
            sink.write(line)
    return EXIT_OK


def _ldp_check(config: ExperimentConfig, sink: _Sink, manifest: RunManifest) -> int:
    p = config.poisson
    for n in p.n:
        rec = brownian_counting(n, 0.0, p.seed, n_interarrivals=p.n_interarrivals)
        gaps = rec.interarrivals
        K = gaps.size
        mean, var = float(gaps.mean()), float(gaps.var(ddof=1))
        sink.write(Report("interarrival_mean", n, K, mean, (1.0 / n) / math.sqrt(K), 1.0 / n, p.seed).to_line())
        # Var of the sample variance of Exp(n) is (mu4 - sigma^4)/K = 8/(n^4 K)
        sink.write(Report("interarrival_variance", n, K, var, math.sqrt(8.0 / K) / n**2, 1.0 / n**2, p.seed).to_line())
        windows = rec.window_counts(1.0)
        if windows.size >= 2:
            se = math.sqrt(windows.var(ddof=1) / windows.size)
            sink.write(Report("window_count_mean", n, int(windows.size), float(windows.mean()), se, 1.0, p.seed).to_line())
    return EXIT_OK


def run_command(config: ExperimentConfig) -> int:
    """Dispatch one command; writes outputs and the manifest into ``config.output``."""
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=config.to_dict(), seeds={"poisson": config.poisson.seed}, version=__version__)
    sink = _Sink(out / "diagnostics.txt")
    manifest.outputs.append("diagnostics.txt")
    start = time.perf_counter()
    handlers = {
        "solve1d": lambda: _solve(config, out, sink, manifest),
        "solve2d": lambda: _solve(config, out, sink, manifest),
        "entropy-limit": lambda: _entropy_limit(config, sink, manifest),
        "poisson-moments": lambda: _poisson_moments(config, sink, manifest),
        "ldp-check": lambda: _ldp_check(config, sink, manifest),
    }
    try:
        code = handlers[config.command]()
        if code == EXIT_NOT_CONVERGED:
            manifest.status = "not_converged"
    except (SinkhornFailure, StepFailure, CertificationError, np.linalg.LinAlgError) as exc:
        code = EXIT_SOLVER
        manifest.status = "solver_failure"
        iteration = getattr(exc, "iteration", "")
        sink.write(_record(status="failed", exit_code=code, iteration=iteration, error=type(exc).__name__, message=repr(str(exc))))
    finally:
        sink.close()
        manifest.timings["total_seconds"] = time.perf_counter() - start
        manifest.outputs.append("manifest.txt")
        manifest.write(out / "manifest.txt")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="semot", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="Monte Carlo seed (overrides poisson.seed)")
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config)
        if config.command != args.command:
            raise ConfigError([f"command: config is for '{config.command}', not '{args.command}'"])
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError([f"--seed must be an unsigned 64-bit integer, got {args.seed}"])
            config = replace(config, poisson=replace(config.poisson, seed=args.seed))
        if args.out is not None:
            config = replace(config, output=args.out)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    code = run_command(config)
    print(_record(command=config.command, exit_code=code, output=config.output))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
