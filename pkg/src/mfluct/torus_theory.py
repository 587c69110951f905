"""Closed-form fluctuation statistics for the homogeneous torus system.

With ``V = 0`` the equilibrium is uniform, the generator is ``-beta^{-1}
Laplacian`` and every Fourier pair ``+-k`` contributes two independent modes
(sine and cosine) with

    lambda_j = |k|^2 / beta,
    C_j      = (2 pi)^{-d} Phi_hat(k) |k|^2,
    E|Y_j|^2 = (2 pi)^{-d} Phi_hat(k).

``E|X_j(t)|^2`` then follows from the scalar Volterra equation for each mode.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .kernels import TorusKernel, mode_position

RESONANCE_RTOL = 1e-9


class InsufficientModes(ValueError):
    pass


@dataclass(frozen=True)
class ModeRow:
    j: int
    k: tuple[int, ...]
    rate: float  # lambda_j
    coupling: float  # C_j
    var_y: float


@dataclass(frozen=True)
class TorusModeTable:
    beta: float
    sign: int
    rows: tuple[ModeRow, ...]

    def row(self, j: int) -> ModeRow:
        for r in self.rows:
            if r.j == j:
                return r
        raise KeyError(f"mode j={j} not in table")

    @property
    def indices(self) -> list[int]:
        return [r.j for r in self.rows]

    @property
    def baseline_total(self) -> float:
        """``sum_j E|Y_j|^2``, which equals ``Phi(0) - Phi_0``."""
        return math.fsum(r.var_y for r in self.rows)


@dataclass(frozen=True)
class FluctuationCurve:
    times: np.ndarray
    totals: np.ndarray
    per_mode: dict[int, np.ndarray] = field(default_factory=dict)


def _check_sign(sign: int) -> int:
    if sign not in (-1, 0, 1):
        raise ValueError("sign must be +1, -1, or 0")
    return int(sign)


def build_mode_table(kernel: TorusKernel, beta: float, sign: int) -> TorusModeTable:
    """Per-mode rates for the interacting torus system.

    Only wavevectors ``k != 0`` with ``Phi_hat(k) > 0`` appear; the ``k = 0``
    mode has no fluctuation and is left out.  ``sign = 0`` describes the
    non-interacting baseline, for which ``X = Y``.
    """
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError("beta must be positive and finite")
    sign = _check_sign(sign)
    ks, ws = kernel.half_modes
    rows: list[ModeRow] = []
    for k, w in zip(ks, ws):
        kt = tuple(int(c) for c in k)
        ksq = float(sum(c * c for c in kt))
        n = mode_position(kt)
        var_y = float(kernel.norm_const * w)
        for j in (2 * n - 1, 2 * n):
            rows.append(ModeRow(j=j, k=kt, rate=ksq / beta, coupling=var_y * ksq, var_y=var_y))
    rows.sort(key=lambda r: r.j)
    return TorusModeTable(beta=float(beta), sign=sign, rows=tuple(rows))


def _var_x(row: ModeRow, sign: int, t: np.ndarray, resonance_rtol: float = RESONANCE_RTOL) -> np.ndarray:
    lam, c, v = row.rate, row.coupling, row.var_y
    if sign == 0 or c == 0.0:
        return np.full_like(t, v)
    if sign > 0:
        a = c + lam
        return v * (1.0 + c / a * np.expm1(-2.0 * a * t))
    if abs(lam - c) < resonance_rtol * max(lam, c):
        return v * (1.0 + 2.0 * lam * t)
    a = lam - c
    return v * (1.0 - c / a * np.expm1(-2.0 * a * t))


def var_X(table: TorusModeTable, j: int, t) -> np.ndarray | float:
    """``E|X_j(t)|^2`` in closed form (``t`` scalar or array, ``t = inf`` allowed
    for the suppressed case)."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt < 0):
        raise ValueError("t must be nonnegative")
    out = _var_x(table.row(j), table.sign, tt)
    return float(out) if out.ndim == 0 else out


def total_fluctuation_curve(
    table: TorusModeTable, times: Sequence[float], per_mode: bool = False
) -> FluctuationCurve:
    """``E||eta_t||_Phi^2 = sum_j E|X_j(t)|^2`` on a time grid."""
    ts = np.asarray(times, dtype=float)
    if ts.ndim != 1 or (len(ts) and ts[0] < 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("times must be increasing and nonnegative")
    curves = {r.j: _var_x(r, table.sign, ts) for r in table.rows}
    if curves:
        totals = np.sum(np.stack(list(curves.values())), axis=0)
    else:
        totals = np.zeros_like(ts)
    return FluctuationCurve(times=ts, totals=totals, per_mode=curves if per_mode else {})


def longtime_limit(kernel: TorusKernel, beta: float) -> float:
    """``lim_t E||eta_t||^2 = sum_j E|Y_j|^2 / (1 + beta E|Y_j|^2)`` for ``W = +Phi``."""
    if beta == math.inf:
        return 0.0
    table = build_mode_table(kernel, beta, +1)
    return math.fsum(r.var_y / (1.0 + beta * r.var_y) for r in table.rows)


def critical_beta(kernel: TorusKernel) -> float:
    """Inverse temperature beyond which ``W = -Phi`` fluctuations diverge.

    ``beta_c = min_j sqrt(2) / Phi_{2 ceil(j/2)}``; infinite when the kernel
    has no mode with ``k != 0``.
    """
    _, ws = kernel.half_modes
    if len(ws) == 0:
        return math.inf
    # sqrt(2) / (sqrt(2) (2 pi)^{-d} w)
    return float(np.min(1.0 / (kernel.norm_const * ws)))


def decay_rate_scan(alpha: float, beta_grid: Sequence[float], mode_count: int) -> float:
    """Log-log slope of ``sum_{j <= M} j^-a / (1 + beta j^-a)`` against beta.

    The long-time suppressed fluctuation of a kernel with coefficients
    decaying like ``j^-a`` scales like ``beta^{-(a-1)/a}``; the returned slope
    estimates that exponent.
    """
    if not alpha > 1:
        raise ValueError("alpha must exceed 1")
    betas = np.asarray(beta_grid, dtype=float)
    if betas.ndim != 1 or len(betas) < 2 or np.any(betas <= 0):
        raise ValueError("beta grid needs at least two positive values")
    span = math.log10(betas.max() / betas.min())
    if span < 3.0 - 1e-12:
        raise ValueError(f"beta grid spans {span:.3g} decades; at least 3 required to fit a slope")
    if mode_count ** (-alpha) * betas.max() >= 1e-2:
        raise InsufficientModes(
            f"mode_count={mode_count} leaves a truncated tail comparable to the sum at beta={betas.max():g}"
        )
    jpow = np.arange(1, mode_count + 1, dtype=float) ** alpha
    sums = np.array([np.sum(1.0 / (jpow + b)) for b in betas])
    slope, _ = np.polyfit(np.log(betas), np.log(sums), 1)
    return float(slope)
