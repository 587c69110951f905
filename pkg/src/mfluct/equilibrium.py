"""Thermal equilibrium as the self-consistent Gibbs fixed point.

The free energy ``F = E + H / beta`` with

    E(rho) = 1/2 iint W(x - y) rho(x) rho(y) + int V rho,   H(rho) = int rho log rho

is minimised by ``rho_* = exp(-beta U) / Z`` with ``U = V + W * rho_*``.  The
solver iterates that map with damping.  Grids are uniform and cell-centred so
the midpoint sum is the quadrature rule on both the torus and the line.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .kernels import TWO_PI


class NoConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"fixed point not reached after {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Grid:
    x: np.ndarray
    h: float
    domain: str  # "torus" or "line"

    @property
    def n(self) -> int:
        return len(self.x)


def torus_grid(n: int) -> Grid:
    return Grid(x=TWO_PI * np.arange(n) / n, h=TWO_PI / n, domain="torus")


def line_grid(half_width: float, n: int) -> Grid:
    """Cell centres of ``n`` equal cells covering ``[-half_width, half_width]``."""
    h = 2.0 * half_width / n
    return Grid(x=-half_width + h * (np.arange(n) + 0.5), h=h, domain="line")


def confining_half_width(V: Callable, beta: float, cutoff: float = 1e-14, start: float = 1.0) -> float:
    """Smallest ``L`` on a geometric ladder with ``exp(-beta V(+-L)) < cutoff``."""
    limit = -math.log(cutoff)
    L = start
    for _ in range(200):
        if beta * min(float(V(np.array(L))), float(V(np.array(-L)))) > limit:
            return L
        L *= 1.1
    raise ValueError("potential is not confining enough to truncate the line")


@dataclass(frozen=True, eq=False)
class DensityGrid:
    grid: Grid
    rho: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def cell_width(self) -> float:
        return self.grid.h

    def mass(self) -> float:
        return math.fsum(self.rho * self.grid.h)


def uniform_density(grid: Grid) -> DensityGrid:
    return DensityGrid(grid, np.full(grid.n, 1.0 / (grid.n * grid.h)))


@dataclass(frozen=True)
class FreeEnergyReport:
    energy: float
    entropy: float  # H = int rho log rho
    beta: float

    @property
    def entropy_term(self) -> float:
        return self.entropy / self.beta

    @property
    def total(self) -> float:
        return self.energy + self.entropy_term


def _potential_values(V, grid: Grid) -> np.ndarray:
    if V is None:
        return np.zeros(grid.n)
    if hasattr(V, "value"):
        V = V.value
    if callable(V):
        return np.asarray(V(grid.x), dtype=float) * np.ones(grid.n)
    vals = np.asarray(V, dtype=float)
    if vals.shape != (grid.n,):
        raise ValueError("potential array does not match the grid")
    return vals


def convolution_matrix(W, grid: Grid) -> np.ndarray | None:
    """``K`` with ``(K rho)_i = sum_j W(x_i - x_j) rho_j h``; ``None`` for ``W = 0``."""
    if W is None:
        return None
    diff = grid.x[:, None] - grid.x[None, :]
    return np.asarray(W(diff), dtype=float) * grid.h


def free_energy(rho: DensityGrid, V, W, beta: float, conv: np.ndarray | None = None) -> FreeEnergyReport:
    grid = rho.grid
    h = grid.h
    r = rho.rho
    K = convolution_matrix(W, grid) if conv is None else conv
    energy = math.fsum(_potential_values(V, grid) * r * h)
    if K is not None:
        energy += 0.5 * float(r @ (K @ r)) * h
    with np.errstate(divide="ignore", invalid="ignore"):
        rlogr = np.where(r > 0, r * np.log(r), 0.0)
    return FreeEnergyReport(energy=energy, entropy=math.fsum(rlogr * h), beta=float(beta))


def effective_potential(V, W, rho: DensityGrid, conv: np.ndarray | None = None) -> np.ndarray:
    """``U = V + W * rho`` on the grid."""
    U = _potential_values(V, rho.grid)
    K = convolution_matrix(W, rho.grid) if conv is None else conv
    if K is not None:
        U = U + K @ rho.rho
    return U


def gibbs_map(U: np.ndarray, beta: float, h: float) -> np.ndarray:
    e = np.exp(-beta * (U - U.min()))
    return e / (e.sum() * h)


@dataclass(frozen=True, eq=False)
class FixedPoint:
    density: DensityGrid
    residual: float
    iterations: int
    free_energies: list[float] = field(default_factory=list)


def solve_gibbs_fixed_point(
    V,
    W,
    beta: float,
    grid: Grid,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    rho0: np.ndarray | None = None,
) -> FixedPoint:
    """Damped iteration ``rho <- (1 - a) rho + a exp(-beta (V + W * rho)) / Z``.

    Stops at the first iterate whose sup-norm residual
    ``|rho - exp(-beta U(rho)) / Z|`` is below ``tol`` and returns it.  On the
    line ``V`` must be confining; :class:`NoConvergence` is raised after
    ``max_iter`` iterations.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError("beta must be positive and finite")
    h = grid.h
    Vg = _potential_values(V, grid)
    if grid.domain == "line" and math.exp(-beta * min(Vg[0], Vg[-1]) + beta * Vg.min()) > 1e-10:
        raise ValueError("V is not confining on this truncated line")
    K = convolution_matrix(W, grid)

    def U_of(r):
        return Vg if K is None else Vg + K @ r

    if rho0 is None:
        rho = gibbs_map(Vg, beta, h) if grid.domain == "line" else np.full(grid.n, 1.0 / (grid.n * h))
    else:
        rho = np.asarray(rho0, dtype=float) / (np.sum(rho0) * h)

    history: list[float] = []
    residual = math.inf
    for it in range(max_iter + 1):
        history.append(free_energy(DensityGrid(grid, rho), Vg, None, beta, conv=K).total)
        target = gibbs_map(U_of(rho), beta, h)
        residual = float(np.max(np.abs(rho - target)))
        if residual < tol:
            return FixedPoint(DensityGrid(grid, rho), residual, it, history)
        if it == max_iter:
            break
        rho = (1.0 - damping) * rho + damping * target
    raise NoConvergence(max_iter, residual)
