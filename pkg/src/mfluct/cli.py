"""Command-line entry point ``mfluct``.

Each subcommand reads an INI config (see :mod:`mfluct.config`), runs one
experiment and writes CSV tables plus ``summary.json`` to the output
directory.

CSV headers per subcommand::

    theory       modes.csv        j,k,rate,coupling,var_y
                 curve.csv        t,total
    simulate     curve.csv        t,mean,stderr
                 replicas.csv     replica,t,norm_sq
    compare      curve.csv, replicas.csv as for simulate
                 report.csv       t,sim_mean,sim_stderr,theory,z,rel_dev,pass
    equilibrium  density.csv      x,rho
                 free_energy.csv  iteration,free_energy
    spectral     eigenvalues.csv  j,lambda
                 eigenfunctions.csv x,phi_0,...
                 gmatrix.csv      i,j,g
    volterra     paths.csv        path,avg_y,avg_x,holds

Exit codes: 0 success, 1 failed comparison, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import sys
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    COMMANDS,
    ParseError,
    Results,
    RunConfig,
    Table,
    ValidationError,
    parse_config,
    write_outputs,
)
from .ensemble import EnsembleConfig, compare_theory, run_ensemble, run_volterra_ensemble
from .equilibrium import line_grid, solve_gibbs_fixed_point, torus_grid
from .kernels import (
    KernelError,
    LineKernel,
    TorusKernel,
    constant_kernel,
    eval_kernel,
    gaussian_line_kernel,
    one_plus_cos,
    torus_kernel_from_modes,
)
from .particle_sim import SimConfig, harmonic_potential
from .spectral import build_generator, eigendecompose, g_matrix
from .torus_theory import build_mode_table, critical_beta, longtime_limit, total_fluctuation_curve
from .volterra import VolterraProblem, check_timeavg_inequality, operator_norm, torus_gmatrix

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _ConfigProblem(Exception):
    """An object could not be built from an otherwise well-formed config."""


def _staged(build):
    try:
        return build()
    except (ValueError, KernelError) as exc:
        raise _ConfigProblem(str(exc)) from exc


def build_kernel(cfg: RunConfig) -> TorusKernel | LineKernel:
    if cfg.domain == "line":
        if cfg.preset != "gaussian":
            raise ValidationError("preset", "line runs need preset = gaussian")
        return gaussian_line_kernel(cfg.amplitude, cfg.width)
    if cfg.preset == "gaussian":
        raise ValidationError("preset", "gaussian is a line kernel; set domain = line")
    if cfg.preset == "one_plus_cos":
        if cfg.dim != 1:
            raise ValidationError("dim", "one_plus_cos is one-dimensional")
        return one_plus_cos()
    if cfg.preset == "constant":
        return constant_kernel(cfg.dim)
    return torus_kernel_from_modes(cfg.dim, dict(cfg.modes))


def _potential(cfg: RunConfig):
    return None if cfg.potential == "zero" else harmonic_potential(cfg.stiffness)


def _interaction(cfg: RunConfig, kernel):
    if cfg.sign == 0:
        return None
    if isinstance(kernel, TorusKernel):
        return lambda d: cfg.sign * eval_kernel(kernel, d)
    return lambda d: cfg.sign * kernel(d)


def _grid(cfg: RunConfig):
    return torus_grid(cfg.grid) if cfg.domain == "torus" else line_grid(cfg.half_width, cfg.grid)


def _k_label(k) -> str:
    return ",".join(str(c) for c in k)


def _require_torus(cfg: RunConfig, what: str):
    if cfg.domain != "torus":
        raise ValidationError("domain", f"{what} runs on the torus only")


def run_theory(cfg: RunConfig) -> tuple[Results, int]:
    _require_torus(cfg, "theory")
    kernel = _staged(lambda: build_kernel(cfg))
    table = _staged(lambda: build_mode_table(kernel, cfg.beta, cfg.sign))
    curve = total_fluctuation_curve(table, cfg.record_times)
    res = Results()
    res.tables["modes"] = Table(
        ("j", "k", "rate", "coupling", "var_y"),
        [(r.j, _k_label(r.k), r.rate, r.coupling, r.var_y) for r in table.rows],
    )
    res.tables["curve"] = Table(("t", "total"), list(zip(curve.times, curve.totals)))
    res.summary = {
        "beta": cfg.beta,
        "sign": cfg.sign,
        "beta_c": critical_beta(kernel),
        "baseline_total": table.baseline_total,
        "longtime_limit": longtime_limit(kernel, cfg.beta) if cfg.sign == 1 else None,
    }
    return res, EXIT_OK


def _ensemble(cfg: RunConfig):
    _require_torus(cfg, "simulation")
    kernel = _staged(lambda: build_kernel(cfg))
    sim = _staged(
        lambda: SimConfig(
            n_particles=cfg.particles,
            beta=cfg.beta,
            dt=cfg.dt,
            t_final=cfg.record_times[-1],
            sign=cfg.sign,
            kernel=kernel,
            record_times=cfg.record_times,
            potential=None,
            dim=kernel.dim,
        )
    )
    if cfg.potential != "zero":
        raise ValidationError("potential", "torus simulations use V = 0")
    ens = _staged(
        lambda: EnsembleConfig(sim, cfg.replicas, cfg.seed, workers=cfg.threads, block_size=cfg.block_size)
    )
    return kernel, run_ensemble(ens)


def _ensemble_tables(res: Results, result):
    res.tables["curve"] = Table(("t", "mean", "stderr"), list(zip(result.times, result.mean, result.stderr)))
    res.tables["replicas"] = Table(
        ("replica", "t", "norm_sq"),
        [(r, t, result.norms[r, i]) for r in range(result.replicas) for i, t in enumerate(result.times)],
    )


def run_simulate(cfg: RunConfig) -> tuple[Results, int]:
    _, result = _ensemble(cfg)
    res = Results()
    _ensemble_tables(res, result)
    res.summary = {"replicas": result.replicas, "particles": cfg.particles, "seed": cfg.seed}
    return res, EXIT_OK


def run_compare(cfg: RunConfig) -> tuple[Results, int]:
    kernel, result = _ensemble(cfg)
    theory = total_fluctuation_curve(build_mode_table(kernel, cfg.beta, cfg.sign), result.times)
    report = compare_theory(result, theory, cfg.z_threshold, cfg.rel_tol)
    res = Results()
    _ensemble_tables(res, result)
    res.tables["report"] = Table(
        ("t", "sim_mean", "sim_stderr", "theory", "z", "rel_dev", "pass"),
        [(r.t, r.sim_mean, r.sim_stderr, r.theory, r.z, r.rel_dev, r.ok) for r in report.rows],
    )
    res.summary = {
        "passed": report.passed,
        "z_threshold": report.z_threshold,
        "rel_tol": report.rel_tol,
        "replicas": result.replicas,
        "rows": [
            {"t": r.t, "sim_mean": r.sim_mean, "sim_stderr": r.sim_stderr, "theory": r.theory, "z": r.z,
             "rel_dev": r.rel_dev, "pass": r.ok}
            for r in report.rows
        ],
    }
    return res, EXIT_OK if report.passed else EXIT_FAIL


def _equilibrium(cfg: RunConfig):
    kernel = _staged(lambda: build_kernel(cfg))
    grid = _staged(lambda: _grid(cfg))
    V, W = _potential(cfg), _interaction(cfg, kernel)
    fp = _staged(
        lambda: solve_gibbs_fixed_point(V, W, cfg.beta, grid, cfg.damping, cfg.tol, cfg.max_iter)
    )
    return kernel, grid, V, W, fp


def run_equilibrium(cfg: RunConfig) -> tuple[Results, int]:
    _, grid, _, _, fp = _equilibrium(cfg)
    res = Results()
    res.tables["density"] = Table(("x", "rho"), list(zip(grid.x, fp.density.rho)))
    res.tables["free_energy"] = Table(("iteration", "free_energy"), list(enumerate(fp.free_energies)))
    res.summary = {
        "residual": fp.residual,
        "iterations": fp.iterations,
        "mass": fp.density.mass(),
        "free_energy": fp.free_energies[-1],
    }
    return res, EXIT_OK


def _spectral_model(cfg: RunConfig):
    kernel, grid, V, W, fp = _equilibrium(cfg)
    rho = fp.density.rho
    Vv = V.value if V is not None else None

    def U(x):
        out = np.zeros_like(x) if Vv is None else np.asarray(Vv(x), dtype=float)
        if W is not None:
            out = out + (W(x[:, None] - grid.x[None, :]) @ rho) * grid.h
        return out

    gen = _staged(lambda: build_generator(U, cfg.beta, grid))
    model = _staged(lambda: eigendecompose(gen, cfg.truncation))
    return kernel, model


def run_spectral(cfg: RunConfig) -> tuple[Results, int]:
    kernel, model = _spectral_model(cfg)
    G = g_matrix(model, kernel)
    J = model.J
    res = Results()
    res.tables["eigenvalues"] = Table(("j", "lambda"), list(enumerate(model.eigenvalues)))
    res.tables["eigenfunctions"] = Table(
        ("x",) + tuple(f"phi_{j}" for j in range(J)),
        [(x, *row) for x, row in zip(model.grid.x, model.eigenfunctions)],
    )
    res.tables["gmatrix"] = Table(("i", "j", "g"), [(i, j, G.matrix[i, j]) for i in range(J) for j in range(J)])
    res.summary = {
        "gap": model.gap if J >= 2 else None,
        "g_min_eigenvalue": float(np.linalg.eigvalsh(G.matrix).min()),
        "g_norm": operator_norm(G),
    }
    return res, EXIT_OK


def run_volterra(cfg: RunConfig) -> tuple[Results, int]:
    if cfg.sign == 0:
        raise ValidationError("sign", "volterra runs need sign = +1 or -1")
    if cfg.domain == "torus":
        kernel = _staged(lambda: build_kernel(cfg))
        if not isinstance(kernel, TorusKernel) or kernel.dim != 1:
            raise ValidationError("dim", "volterra torus runs are one-dimensional")
        gmat = torus_gmatrix(kernel, cfg.beta, cfg.truncation)
    else:
        kernel, model = _spectral_model(cfg)
        gmat = g_matrix(model, kernel)
    steps = round(cfg.t_final / cfg.dt)
    if not math.isclose(steps * cfg.dt, cfg.t_final, rel_tol=1e-9):
        raise ValidationError("dt", "t_final must be a multiple of dt")
    ens = run_volterra_ensemble(gmat, cfg.beta, cfg.sign, cfg.dt, steps, cfg.paths, cfg.seed)
    rep = check_timeavg_inequality(VolterraProblem(gmat, cfg.beta, cfg.sign, cfg.dt, ens.Y), ens.X)
    holds = np.atleast_1d(rep.holds)
    res = Results()
    res.tables["paths"] = Table(
        ("path", "avg_y", "avg_x", "holds"),
        [(p, y, x, bool(h)) for p, (y, x, h) in enumerate(zip(np.atleast_1d(rep.avg_y), np.atleast_1d(rep.avg_x), holds))],
    )
    res.summary = {
        "paths": cfg.paths,
        "holds": int(holds.sum()),
        "weak_interaction": rep.weak_interaction,
        "g_norm": operator_norm(gmat),
        "direction": "avg|X|^2 < avg|Y|^2" if cfg.sign > 0 else "avg|X|^2 > avg|Y|^2",
    }
    return res, EXIT_OK


RUNNERS = {
    "theory": run_theory,
    "simulate": run_simulate,
    "equilibrium": run_equilibrium,
    "spectral": run_spectral,
    "volterra": run_volterra,
    "compare": run_compare,
}


HELP = {
    "theory": "closed-form torus fluctuation curve and mode table",
    "simulate": "particle ensemble of ||eta_N(t)||_Phi^2",
    "equilibrium": "self-consistent Gibbs fixed point",
    "spectral": "generator eigenpairs and the G matrix",
    "volterra": "OU-forced Volterra paths and the time-average inequality",
    "compare": "particle ensemble against the closed-form curve",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfluct", description="Mean-field fluctuation experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, metavar="PATH", help="INI run description")
        sp.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        sp.add_argument("--replicas", type=int, metavar="N", help="override the replica count")
        sp.add_argument("--threads", type=int, metavar="N", help="worker threads for replica blocks")
        sp.add_argument("--out", metavar="DIR", help="output directory")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text).with_overrides(
            command=args.command, seed=args.seed, replicas=args.replicas, threads=args.threads, out=args.out
        )
        results, code = RUNNERS[cfg.command](cfg)
        files = write_outputs(results, cfg.out, cfg)
    except (ParseError, ValidationError, _ConfigProblem) as exc:
        print(f"mfluct: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        if isinstance(exc, FileNotFoundError) and exc.filename == args.config:
            print(f"mfluct: config error: cannot read {args.config}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"mfluct: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"mfluct: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(Path(cfg.out) / f)
    return code


if __name__ == "__main__":
    sys.exit(main())
