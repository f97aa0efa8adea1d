"""Command-line front end.

    fracspde <command> --config <path> [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Every
error is also printed to stderr as a single JSON line. Outputs are built in
a temporary directory next to ``--out`` and renamed into place only when
the command finishes, so a failed run never leaves partial artifacts; on a
numerical failure a ``<out>.diagnostics.json`` file is written instead.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, io, presets
from .config import ConfigError, RunConfig, load_config
from .fractional_noise import (
    FieldSample,
    calibrate_c_h,
    cell_increments,
    sample_field,
)
from .grid import GridSpec
from .heat_kernel import KernelKind, kernel, semigroup_error, sup_bound_ratio
from .spde_solver import (
    BlowUpError,
    NumericalError,
    PicardConvergenceError,
    SolverMode,
    picard_solve,
    solve_coupled,
    solve_nonlocal,
    stochastic_convolution,
    theta_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = (
    "sample-field",
    "solve",
    "solve-coupled",
    "sweep-theta",
    "validate-covariance",
    "validate-kernel",
    "estimate-holder",
    "variance-growth",
)


def thread_count() -> int:
    raw = os.environ.get("FRACSPDE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def ensemble_map(fn, n: int) -> list:
    """fn(0..n-1) on a thread pool; results come back in index order."""
    workers = min(thread_count(), n)
    if workers == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


class Run:
    """Per-invocation state: the resolved config and the staging directory."""

    def __init__(self, cfg: RunConfig, staging: Path):
        self.cfg = cfg
        self.dir = staging
        self.extra_meta: dict = {}

    @property
    def grid(self):
        return self.cfg.grid

    @property
    def hurst(self):
        return self.cfg.hurst

    def field(self, i: int) -> FieldSample:
        return sample_field(self.hurst, self.grid, self.cfg.seed, i)

    def noise(self, i: int):
        return cell_increments(self.field(i))

    def u0(self):
        try:
            return presets.initial_data(self.cfg.u0_preset, self.grid, self.cfg.kappa)
        except ValueError as exc:
            raise ConfigError(f"u0_preset: {exc}") from exc

    def drift(self):
        try:
            return presets.drift(self.cfg.g_preset)
        except ValueError as exc:
            raise ConfigError(f"g_preset: {exc}") from exc

    def path(self, name: str) -> Path:
        return self.dir / name


def _solve_one(run: Run, i: int, coupled: bool):
    cfg = run.cfg.solver_config()
    u0, g, noise = run.u0(), run.drift(), run.noise(i)
    meta = {"seed": run.cfg.seed, "index": i}
    if coupled:
        return solve_coupled(cfg, noise, u0, g, meta)
    if cfg.mode is SolverMode.PICARD:
        sol, trace = picard_solve(cfg, noise, u0, g, metadata=meta)
        sol.metadata["picard_trace"] = trace
        return sol
    return solve_nonlocal(cfg, noise, u0, g, meta)


def _write_solutions(run: Run, sols) -> None:
    io.write_solution_csv(run.path("solution_00000.csv"), sols[0])
    rows = []
    for i, s in enumerate(sols):
        mask = s.norm_mask
        rows.append((i, float(np.max(np.abs(s.u))), float(np.max(np.abs(s.companion[:, mask]))), len(s.metadata.get("picard_trace", []))))
    io.write_table(run.path("summary.csv"), ["index", "sup_abs_u", "sup_abs_companion", "picard_iterations"], rows)
    if len(sols) > 1:
        u = np.stack([s.u for s in sols])
        io.write_table(
            run.path("mean_square.csv"),
            ["t", "x", "mean_u", "mean_square_u"],
            (
                (run.grid.t[a], run.grid.x[b], u[:, a, b].mean(), np.mean(u[:, a, b] ** 2))
                for a in range(run.grid.n_t + 1)
                for b in range(run.grid.n_x + 1)
            ),
        )


def cmd_sample_field(run: Run) -> None:
    fields = ensemble_map(run.field, run.cfg.ensemble_size)
    for f in fields:
        io.write_field_binary(run.path(f"field_{f.index:05d}.fbm2"), f)
    io.write_field_csv(run.path("field_00000.csv"), fields[0])


def cmd_solve(run: Run) -> None:
    _write_solutions(run, ensemble_map(lambda i: _solve_one(run, i, False), run.cfg.ensemble_size))


def cmd_solve_coupled(run: Run) -> None:
    _write_solutions(run, ensemble_map(lambda i: _solve_one(run, i, True), run.cfg.ensemble_size))


def _sweep_thetas(run: Run) -> list[float]:
    if run.cfg.thetas:
        return list(run.cfg.thetas)
    dx = run.grid.dx
    return [8 * dx, 4 * dx, 2 * dx, dx]


def cmd_sweep_theta(run: Run) -> None:
    base = run.cfg.solver_config()
    noises = ensemble_map(run.noise, run.cfg.ensemble_size)
    try:
        res = theta_sweep(base, _sweep_thetas(run), noises, run.u0(), run.drift())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    n = len(res.thetas)
    io.write_table(
        run.path("theta_pairs.csv"),
        ["theta_1", "theta_2", "sup_mean_square_distance"],
        ((res.thetas[a], res.thetas[b], res.pairwise_d2[a, b]) for a in range(n) for b in range(a + 1, n)),
    )
    adjacent = [float(res.pairwise_d2[a, a + 1]) for a in range(n - 1)]
    summary = {"thetas": res.thetas, "adjacent_distances": adjacent, "adjacent_decreasing": bool(np.all(np.diff(adjacent) < 0))}
    if n >= 3:
        with warnings.catch_warnings():
            # reported through the "monotone" flag instead of stderr
            warnings.simplefilter("ignore", UserWarning)
            fit = analysis.theta_rate_fit(res)
        summary.update(rate=fit.rate, rate_ci=fit.fit.ci_halfwidth, monotone=fit.monotone)
    io.write_json(run.path("theta_sweep.json"), summary)


def cmd_validate_covariance(run: Run) -> None:
    cfg = run.cfg
    if cfg.ensemble_size < 100:
        raise ConfigError("validate-covariance needs ensemble_size >= 100")
    fields = ensemble_map(run.field, cfg.ensemble_size)
    nodes = analysis.subset_nodes(run.grid, cfg.subset)
    chk = analysis.empirical_covariance(fields, nodes, run.hurst, run.grid)
    rows = []
    for a, na in enumerate(chk.nodes):
        for b in range(a, len(chk.nodes)):
            nb = chk.nodes[b]
            rows.append(
                (na[0], na[1], nb[0], nb[1], chk.empirical[a, b], chk.analytic[a, b], chk.standard_error[a, b], int(chk.exceedance_matrix[a, b]))
            )
    io.write_table(run.path("covariance.csv"), ["ti_a", "xi_a", "ti_b", "xi_b", "empirical", "analytic", "standard_error", "exceeds"], rows)
    io.write_json(
        run.path("report.json"),
        {
            "n_samples": chk.n_samples,
            "n_entries": chk.n_entries,
            "threshold_se": chk.threshold,
            "exceedances": chk.exceedances,
            "expected_false_positives": chk.expected_false_positives,
            "max_abs_error": chk.max_abs_error,
            "verdict": "pass" if chk.exceedances <= 2 else "fail",
        },
    )


def cmd_validate_kernel(run: Run) -> None:
    n = run.cfg.kernel_samples
    rows = [(k.name, sup_bound_ratio(k, n=n, seed=run.cfg.seed)) for k in KernelKind]
    io.write_table(run.path("kernel_bounds.csv"), ["kind", "sup_bound_ratio"], rows)

    rng = np.random.Generator(np.random.Philox(key=run.cfg.seed))
    t = rng.uniform(0.05, 1.0, n)
    x = rng.uniform(0.0, 10.0, n)
    y = rng.uniform(0.0, 10.0, n)
    # complex-step d_t p of the image-sum formula against the closed-form 1/2 d_xx p
    tc = t + 1e-30j
    img = (np.exp(-((x - y) ** 2) / (2 * tc)) - np.exp(-((x + y) ** 2) / (2 * tc))) / np.sqrt(2 * np.pi * tc)
    dt_ref = img.imag / 1e-30
    half_dxx = 0.5 * kernel(KernelKind.DXX, t, x, y)
    scale = np.abs(dt_ref) + kernel(KernelKind.P, t, x, y) / t
    normal = scale > 1e-200  # skip points where both sides underflow
    heat_residual = float(np.max(np.abs(dt_ref - half_dxx)[normal] / scale[normal]))
    # 256 space points with room for the composed kernel to decay
    sg = GridSpec.covering(run.grid.T, min(run.grid.L, 4.0), run.grid.n_t, 256)
    io.write_json(
        run.path("kernel_report.json"),
        {
            "sup_bound_ratio": {k: float(v) for k, v in rows},
            "heat_equation_relative_residual": heat_residual,
            "semigroup_error": semigroup_error(0.5 * sg.T, sg.T, sg),
        },
    )


def cmd_estimate_holder(run: Run) -> None:
    sols = ensemble_map(lambda i: _solve_one(run, i, False), run.cfg.ensemble_size)
    g = run.grid
    mask_x = sols[0].norm_mask & g.interior_x() & (g.x > 0)
    mask = np.broadcast_to(mask_x, g.shape)
    rows, moments = [], []
    for attr in ("u", "companion"):
        for axis, n, step in ((analysis.Axis.SPACE, g.n_x, g.dx), (analysis.Axis.TIME, g.n_t, g.dt)):
            lags = analysis.default_lags(n)
            try:
                sf = analysis.structure_function(sols, axis, lags, mask, step, attr=attr)
                est = analysis.holder_exponent(sf)
            except ValueError as exc:
                raise ConfigError(f"grid too small for a {axis.value} fit: {exc}") from exc
            rows.append((attr, axis.value, est.exponent, est.ci_halfwidth, est.fit.r_squared))
            moments += [(attr, axis.value, lag, m) for lag, m in zip(sf.lags, sf.moments)]
    io.write_table(run.path("holder.csv"), ["field", "axis", "exponent", "ci_halfwidth", "r_squared"], rows)
    io.write_table(run.path("structure_function.csv"), ["field", "axis", "lag", "moment"], moments)


def cmd_variance_growth(run: Run) -> None:
    g = run.grid
    d2 = np.stack(ensemble_map(lambda i: run.noise(i).d2, run.cfg.ensemble_size))
    conv = stochastic_convolution(d2, g)
    xi = run.cfg.resolved_x_index()
    try:
        fit = analysis.variance_growth_slope(conv, g, xi, run.hurst)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    var = analysis.variance_profile(conv, xi)
    io.write_table(run.path("variance.csv"), ["t", "variance"], zip(g.t, var))
    io.write_json(
        run.path("variance_growth.json"),
        {
            "x_index": xi,
            "slope": fit.slope,
            "ci_halfwidth": fit.ci_halfwidth,
            "target": run.hurst.growth_exponent,
        },
    )


HANDLERS = {
    "sample-field": cmd_sample_field,
    "solve": cmd_solve,
    "solve-coupled": cmd_solve_coupled,
    "sweep-theta": cmd_sweep_theta,
    "validate-covariance": cmd_validate_covariance,
    "validate-kernel": cmd_validate_kernel,
    "estimate-holder": cmd_estimate_holder,
    "variance-growth": cmd_variance_growth,
}


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"level": "error", "kind": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def _publish(staging: Path, out: Path) -> None:
    if out.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{out.name}.old-", dir=out.parent))
        os.replace(out, old / out.name)
        os.replace(staging, out)
        shutil.rmtree(old)
    else:
        os.replace(staging, out)


def _diagnostics(exc: NumericalError) -> dict:
    diag = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, BlowUpError):
        diag.update(time_index=exc.time_index, space_index=exc.space_index, value=repr(exc.value))
    if isinstance(exc, PicardConvergenceError):
        diag["trace"] = exc.trace
    return diag


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracspde", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key = value file")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return p


def run(command: str, config_path, seed: int | None = None, out=None) -> int:
    staging = None
    out_dir = Path(out if out is not None else "fracspde-out")
    try:
        overrides = {} if seed is None else {"seed": seed}
        cfg = load_config(config_path, overrides)
        if out is not None:
            cfg.output_dir = str(out)
        if cfg.c_H is None:
            cfg.c_H = calibrate_c_h(cfg.hurst, cfg.T, cfg.L)
        solver = cfg.solver_config()
        target = out_dir = Path(cfg.output_dir).resolve()
        target.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))
        job = Run(cfg, staging)
        HANDLERS[command](job)
        (staging / "config.resolved").write_text(cfg.to_text())
        io.write_json(
            staging / "metadata.json",
            {
                "command": command,
                "h1": cfg.h1,
                "h2": cfg.h2,
                "seed": cfg.seed,
                "theta": solver.theta_snapped,
                "grid": cfg.grid.as_dict(),
                "c_H": cfg.c_H,
                "config_hash": solver.config_hash(),
                "ensemble_size": cfg.ensemble_size,
                "seed_mixing": "Philox key = (index << 64) | seed",
                **job.extra_meta,
            },
        )
        _publish(staging, target)
        staging = None
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    except NumericalError as exc:
        diag = _diagnostics(exc)
        _error("numerical", str(exc), **{k: v for k, v in diag.items() if k != "message"})
        out_dir = out_dir.resolve()
        io.write_json(out_dir.parent / f"{out_dir.name}.diagnostics.json", diag)
        return EXIT_NUMERICAL
    finally:
        if staging is not None and staging.exists():
            shutil.rmtree(staging, ignore_errors=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
