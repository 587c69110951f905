"""Volterra description of the interacting fluctuation.

In eigen-coordinates the interacting fluctuation ``X`` and the independent
(Monte Carlo) fluctuation ``Y`` are related by

    X(t) = Y(t) -+ int_0^t Gamma(t - s) X(s) ds,   Gamma(t) = beta G^{1/2} Lambda(t) G^{1/2},

with ``Lambda(t) = diag(lambda_j e^{-lambda_j t})``; the upper sign is
``W = +Phi``.  ``Y = G^{1/2} Y~`` where the ``Y~_j`` are independent unit
stationary Ornstein-Uhlenbeck processes with rates ``lambda_j`` (``Y~_0 = 0``).

The trapezoidal solver exploits the exponential form of ``Gamma``: the
history sum obeys a one-step recursion, so a path costs O(steps J^2).
:func:`solve_volterra_direct` is the plain O(steps^2) quadrature for an
arbitrary sampled kernel.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve

from .kernels import TorusKernel, mode_ordering
from .spectral import GMatrix, make_gmatrix

OVERFLOW_GUARD = 1e12
STRICT_RTOL = 1e-12


class StepBlowup(FloatingPointError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"|X| = {norm:.3e} exceeded the overflow guard at step {step}")
        self.step = step


class SeriesDiverging(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class VolterraProblem:
    gmat: GMatrix
    beta: float
    sign: int
    dt: float
    forcing: np.ndarray  # (..., steps + 1, J)

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.forcing.ndim < 2 or self.forcing.shape[-1] != self.gmat.J:
            raise ValueError("forcing must have shape (..., steps + 1, J)")

    @property
    def steps(self) -> int:
        return self.forcing.shape[-2] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def gamma(self, t) -> np.ndarray:
        return self.gmat.gamma(t, self.beta)


def scalar_gmatrix(g: float, rate: float) -> GMatrix:
    """One-mode ``GMatrix``; ``Gamma(t) = beta g rate e^{-rate t}``."""
    return make_gmatrix(np.array([[g]]), [rate])


def sample_Y_tilde(
    rates: Sequence[float], dt: float, steps: int, rng: np.random.Generator, n_paths: int | None = None
) -> np.ndarray:
    """Exact stationary OU chains with unit variance; index 0 is held at zero.

    Shape ``(steps + 1, J)``, or ``(n_paths, steps + 1, J)`` when ``n_paths`` is given.
    """
    rates = np.asarray(rates, dtype=float)
    J = len(rates)
    lead = () if n_paths is None else (n_paths,)
    xi = rng.standard_normal(lead + (steps + 1, J))
    decay = np.exp(-rates * dt)
    kick = np.sqrt(-np.expm1(-2.0 * rates * dt))
    y = np.empty_like(xi)
    y[..., 0, :] = xi[..., 0, :]
    for n in range(1, steps + 1):
        y[..., n, :] = decay * y[..., n - 1, :] + kick * xi[..., n, :]
    y[..., 0] = 0.0
    return y


def sample_Y_paths(
    gmat: GMatrix, dt: float, steps: int, rng: np.random.Generator, n_paths: int | None = None
) -> np.ndarray:
    """Forcing paths ``Y(t_n) = G^{1/2} Y~(t_n)``."""
    return sample_Y_tilde(gmat.rates, dt, steps, rng, n_paths) @ gmat.sqrt


def solve_volterra(problem: VolterraProblem) -> np.ndarray:
    """Trapezoidal marching with the ``t_n`` self-term solved implicitly.

    Each step solves ``(I +- dt/2 Gamma(0)) X_n = rhs`` with a matrix factored
    once.  Raises :class:`StepBlowup` when ``|X_n|`` passes ``1e12``.
    """
    g, beta, sign, dt = problem.gmat, problem.beta, problem.sign, problem.dt
    Y = problem.forcing
    J = g.J
    S = g.sqrt
    lam = g.rates
    M = np.eye(J) + sign * 0.5 * dt * problem.gamma(0.0)
    lu = sla.lu_factor(M, check_finite=True)
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14:
        raise np.linalg.LinAlgError("implicit step matrix is singular; reduce dt")

    lead = Y.shape[:-2]
    flat = Y.reshape(-1, Y.shape[-2], J)
    X = np.empty_like(flat)
    X[:, 0] = flat[:, 0]
    decay = np.exp(-lam * dt)
    Q = np.zeros((flat.shape[0], J))
    for n in range(1, problem.steps + 1):
        Z_prev = X[:, n - 1] @ S
        Q = decay * (Q + (0.5 if n == 1 else 1.0) * Z_prev)
        rhs = flat[:, n] - sign * beta * dt * (Q * lam) @ S
        X[:, n] = sla.lu_solve(lu, rhs.T).T
        worst = np.max(np.linalg.norm(X[:, n], axis=-1))
        if not worst <= OVERFLOW_GUARD:
            raise StepBlowup(n, float(worst))
    return X.reshape(lead + X.shape[1:])


def solve_volterra_direct(kernel: np.ndarray, Y: np.ndarray, dt: float, sign: int) -> np.ndarray:
    """Trapezoidal solve of ``X = Y -+ Gamma * X`` for sampled ``Gamma(t_n)``.

    ``kernel`` has shape ``(steps + 1, J, J)`` and ``Y`` shape ``(steps + 1, J)``.
    Cost is quadratic in the number of steps.
    """
    K = np.asarray(kernel, dtype=float)
    Y = np.asarray(Y, dtype=float)
    steps, J = Y.shape[0] - 1, Y.shape[1]
    X = np.empty_like(Y)
    X[0] = Y[0]
    M = np.eye(J) + sign * 0.5 * dt * K[0]
    for n in range(1, steps + 1):
        hist = 0.5 * K[n] @ X[0]
        if n > 1:
            hist = hist + np.einsum("mij,mj->i", K[n - 1 : 0 : -1], X[1:n])
        X[n] = np.linalg.solve(M, Y[n] - sign * dt * hist)
    return X


def convolve(A: np.ndarray, B: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoidal ``(A * B)(t_n) = int_0^{t_n} A(t_n - s) B(s) ds`` on a uniform grid.

    ``A``, ``B`` have shape ``(steps + 1, J, J)`` (matrix product inside).
    """
    full = fftconvolve(A[:, :, :, None], B[:, None, :, :], axes=0)[: len(A)].sum(axis=2)
    ends = np.einsum("nij,jk->nik", A, B[0]) + np.einsum("ij,njk->nik", A[0], B)
    out = dt * (full - 0.5 * ends)
    out[0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class ResolventResult:
    times: np.ndarray
    omega: np.ndarray  # (steps + 1, J, J)
    terms: int
    term_norms: list[float]
    residual: float


def resolvent_series(
    gmat: GMatrix, beta: float, sign: int, dt: float, steps: int, n_terms: int
) -> ResolventResult:
    """Partial sum of ``Omega = sum_j (-1)^{j-1} Gamma^{*j}`` (``sign = +1``).

    For ``sign = -1`` all terms enter with a plus sign, giving the kernel of
    ``X = Y + Omega~ * Y``.  The residual is the sup-norm defect of
    ``Omega = Gamma -+ Gamma * Omega`` on the grid.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    t = dt * np.arange(steps + 1)
    gam = gmat.gamma(t, beta)
    term = gam
    omega = gam.copy()
    norms = [float(np.max(np.abs(gam)))]
    growth = 0
    for j in range(2, n_terms + 1):
        term = convolve(gam, term, dt)
        norms.append(float(np.max(np.abs(term))))
        growth = growth + 1 if norms[-1] > norms[-2] else 0
        if growth >= 3:
            raise SeriesDiverging(f"term norms grew for 3 consecutive terms (j={j})")
        omega = omega + (-sign) ** (j - 1) * term
    defect = omega - gam + sign * convolve(gam, omega, dt)
    return ResolventResult(t, omega, n_terms, norms, float(np.max(np.abs(defect))))


def apply_resolvent(omega: np.ndarray, Y: np.ndarray, dt: float, sign: int) -> np.ndarray:
    """``X = Y -+ Omega * Y`` for a single path ``Y`` of shape ``(steps + 1, J)``."""
    conv = convolve(omega, Y[:, :, None], dt)[:, :, 0]
    return Y - sign * conv


def time_avg_norm(path: np.ndarray, dt: float) -> np.ndarray | float:
    """``(1/T) int_0^T |path(t)|^2 dt`` by the trapezoid rule.

    A 1-d array is a scalar path; otherwise time runs along axis ``-2`` and
    components along ``-1``.
    """
    p = np.asarray(path, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[-2] < 2:
        raise ValueError("path needs at least two time points")
    T = dt * (p.shape[-2] - 1)
    out = trapezoid(np.sum(p * p, axis=-1), dx=dt, axis=-1) / T
    return float(out) if np.ndim(out) == 0 else out


def operator_norm(gmat: GMatrix | np.ndarray) -> float:
    """Largest eigenvalue of the symmetric PSD matrix ``G``."""
    G = gmat.matrix if isinstance(gmat, GMatrix) else np.asarray(gmat, dtype=float)
    if G.size == 0:
        return 0.0
    return max(0.0, float(np.linalg.eigvalsh(0.5 * (G + G.T)).max()))


@dataclass(frozen=True, eq=False)
class InequalityReport:
    holds: np.ndarray | bool
    margin: np.ndarray | float
    weak_interaction: bool
    avg_x: np.ndarray | float
    avg_y: np.ndarray | float
    degenerate: np.ndarray | bool


def check_timeavg_inequality(problem: VolterraProblem, X: np.ndarray, Y: np.ndarray | None = None) -> InequalityReport:
    """Compare time-averaged norms of ``X`` and ``Y`` in the predicted direction.

    ``W = +Phi`` predicts ``avg|X|^2 < avg|Y|^2``; ``W = -Phi`` predicts the
    reverse under ``||G|| <= 2 / beta``.  ``margin`` is the gap in the
    predicted direction; an all-zero input is flagged degenerate and never
    counts as holding.
    """
    Y = problem.forcing if Y is None else Y
    ax = time_avg_norm(X, problem.dt)
    ay = time_avg_norm(Y, problem.dt)
    margin = (ay - ax) if problem.sign > 0 else (ax - ay)
    scale = np.maximum(ax, ay)
    degenerate = scale == 0
    holds = (margin > STRICT_RTOL * scale) & ~degenerate
    weak = operator_norm(problem.gmat) <= 2.0 / problem.beta * (1 + 1e-12)
    if np.ndim(holds) == 0:
        holds, degenerate = bool(holds), bool(degenerate)
    return InequalityReport(holds, margin, weak, ax, ay, degenerate)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    X: np.ndarray  # (P, steps + 1, J)
    Y: np.ndarray
    dt: float

    @property
    def avg_x(self) -> np.ndarray:
        return time_avg_norm(self.X, self.dt)

    @property
    def avg_y(self) -> np.ndarray:
        return time_avg_norm(self.Y, self.dt)


def timeavg_beta_scan(
    gmat_for_beta: Callable[[float], GMatrix],
    betas: Sequence[float],
    dt: float,
    steps: int,
    n_paths: int,
    rng: np.random.Generator,
) -> list[tuple[float, float, float]]:
    """Exploratory ``(beta, mean avg|X|^2, mean avg|Y|^2)`` for ``W = +Phi``.

    No limiting value is asserted; this only tabulates the trend.
    """
    out = []
    for beta in betas:
        g = gmat_for_beta(beta)
        Y = sample_Y_paths(g, dt, steps, rng, n_paths)
        X = solve_volterra(VolterraProblem(g, beta, +1, dt, Y))
        out.append((float(beta), float(np.mean(time_avg_norm(X, dt))), float(np.mean(time_avg_norm(Y, dt)))))
    return out


def torus_gmatrix(kernel: TorusKernel, beta: float, J: int) -> GMatrix:
    """Analytic ``G`` and rates for the flat torus: ``diag(Phi_0, Phi_2/sqrt2, ...)``.

    Mode order is ``1, sin k(1), cos k(1), sin k(2), ...`` (1-d kernels).
    """
    diag = [kernel.norm_const * kernel.weight((0,) * kernel.dim)]
    rates = [0.0]
    for k in mode_ordering(kernel.dim, J // 2):
        w = kernel.norm_const * kernel.weight(k)
        ksq = float(sum(c * c for c in k))
        diag += [w, w]
        rates += [ksq / beta, ksq / beta]
    return make_gmatrix(np.diag(diag[:J]), rates[:J])
