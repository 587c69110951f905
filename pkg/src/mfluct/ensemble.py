"""Replica ensembles with per-replica random streams and theory comparison.

Replica ``r`` of a run seeded with ``master_seed`` always draws from the
stream keyed by ``(master_seed, r)``, and replicas are grouped into blocks of
fixed size.  Block boundaries and streams do not depend on the worker count,
so aggregates are bit-identical under any scheduling.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .particle_sim import SimConfig, simulate_batch
from .spectral import GMatrix
from .torus_theory import FluctuationCurve
from .volterra import PathEnsemble, VolterraProblem, sample_Y_tilde, solve_volterra


class GridMismatch(ValueError):
    pass


class ReplicaError(RuntimeError):
    def __init__(self, replica: int, cause: BaseException):
        super().__init__(f"replica {replica} failed: {cause!r}")
        self.replica = replica
        self.cause = cause


def replica_stream(master_seed: int, replica: int) -> np.random.Generator:
    """Independent generator for one replica, derived only from ``(master_seed, replica)``."""
    if master_seed < 0 or replica < 0:
        raise ValueError("seed and replica index must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(replica,))))


@dataclass(frozen=True, eq=False)
class EnsembleConfig:
    sim: SimConfig
    replicas: int
    master_seed: int = 0
    workers: int = 1
    block_size: int = 50
    force_same_seed: bool = False  # diagnostic: every replica uses stream 0

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("need at least two replicas for a standard error")
        if self.workers < 1 or self.block_size < 1:
            raise ValueError("workers and block_size must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")

    def stream(self, replica: int) -> np.random.Generator:
        return replica_stream(self.master_seed, 0 if self.force_same_seed else replica)


def mean_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and standard error over axis 0 with compensated sums."""
    a = np.asarray(samples, dtype=float)
    r = a.shape[0]
    if r < 2:
        raise ValueError("need at least two samples")
    cols = a.reshape(r, -1).T
    mean = np.array([math.fsum(c) / r for c in cols])
    var = np.array([math.fsum((c - m) ** 2) / (r - 1) for c, m in zip(cols, mean)])
    shape = a.shape[1:]
    return mean.reshape(shape), np.sqrt(var / r).reshape(shape)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    norms: np.ndarray  # (R, T), replica order
    master_seed: int

    @property
    def replicas(self) -> int:
        return self.norms.shape[0]


def _run_block(config: EnsembleConfig, idx: range) -> np.ndarray:
    try:
        return simulate_batch(config.sim, [config.stream(i) for i in idx]).norms
    except Exception:
        # rerun one at a time to name the failing replica
        for i in idx:
            try:
                simulate_batch(config.sim, [config.stream(i)])
            except Exception as exc:
                raise ReplicaError(i, exc) from exc
        raise


def run_ensemble(config: EnsembleConfig) -> EnsembleResult:
    """Simulate ``config.replicas`` replicas and aggregate ``||eta_N(t)||_Phi^2``."""
    R, bs = config.replicas, config.block_size
    blocks = [range(s, min(s + bs, R)) for s in range(0, R, bs)]
    if config.workers == 1 or len(blocks) == 1:
        parts = [_run_block(config, b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(lambda b: _run_block(config, b), blocks))
    norms = np.concatenate(parts, axis=0)
    mean, se = mean_stderr(norms)
    times = np.array([s * config.sim.dt for s in config.sim.record_steps])
    return EnsembleResult(times=times, mean=mean, stderr=se, norms=norms, master_seed=config.master_seed)


@dataclass(frozen=True)
class ComparisonRow:
    t: float
    sim_mean: float
    sim_stderr: float
    theory: float
    z: float
    rel_dev: float
    ok: bool


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    z_threshold: float
    rel_tol: float | None

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def failed_rows(self) -> list[ComparisonRow]:
        return [r for r in self.rows if not r.ok]


def compare_theory(
    curves: EnsembleResult,
    theory: FluctuationCurve | Sequence[float],
    z_threshold: float = 3.0,
    rel_tol: float | None = None,
    times: Sequence[float] | None = None,
) -> ComparisonReport:
    """Row-wise ``z = (mean - theory) / stderr``; a row passes iff ``|z| <= z_threshold``
    (and ``|mean / theory - 1| <= rel_tol`` when given).

    A plain sequence of theory values may carry its own ``times`` to be
    checked against the ensemble grid.
    """
    if isinstance(theory, FluctuationCurve):
        t_th, vals = theory.times, theory.totals
    else:
        vals = np.asarray(theory, dtype=float)
        t_th = curves.times if times is None else np.asarray(times, dtype=float)
    if len(t_th) != len(curves.times) or not np.allclose(t_th, curves.times, rtol=1e-12, atol=1e-12):
        raise GridMismatch("theory and ensemble record times differ")
    if len(vals) != len(curves.times):
        raise GridMismatch("theory values do not match the time grid")
    rows = []
    for t, m, se, th in zip(curves.times, curves.mean, curves.stderr, vals):
        diff = m - th
        if se > 0:
            z = diff / se
        else:
            z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        rel = abs(diff) / abs(th) if th != 0 else (0.0 if diff == 0 else math.inf)
        ok = abs(z) <= z_threshold and (rel_tol is None or rel <= rel_tol)
        rows.append(ComparisonRow(float(t), float(m), float(se), float(th), float(z), float(rel), bool(ok)))
    return ComparisonReport(tuple(rows), float(z_threshold), rel_tol)


def run_volterra_ensemble(
    gmat: GMatrix,
    beta: float,
    sign: int,
    dt: float,
    steps: int,
    n_paths: int,
    master_seed: int = 0,
) -> PathEnsemble:
    """Solve the fluctuation Volterra equation for ``n_paths`` forcing paths,
    path ``p`` drawn from stream ``(master_seed, p)``."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    Yt = np.stack([sample_Y_tilde(gmat.rates, dt, steps, replica_stream(master_seed, p)) for p in range(n_paths)])
    Y = Yt @ gmat.sqrt
    X = solve_volterra(VolterraProblem(gmat, beta, sign, dt, Y))
    return PathEnsemble(X=X, Y=Y, dt=dt)
