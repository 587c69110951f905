"""Euler-Maruyama simulation of the N-particle system and its mean-field baseline.

Particles follow

    dX_i = -(1/N) sum_j grad W(X_i - X_j) dt - grad V(X_i) dt + sqrt(2/beta) dB_i

with ``W = sign * Phi``.  ``sign = 0`` switches the interaction off, which on
the torus with ``V = 0`` gives independent particles that stay exactly
uniform: the Monte Carlo baseline.

On the torus the interaction is accumulated through the Fourier sums
``S(k) = sum_j exp(-i k.X_j)`` in O(N M) work for M modes.  Arrays carry a
leading replica axis so that a block of independent replicas advances in
lockstep; each replica draws from its own generator.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .kernels import TWO_PI, LineKernel, ModeVector, TorusKernel, phi_norm_sq

try:
    from numba import njit
except ImportError:  # pragma: no cover - numpy path only
    njit = None


@dataclass(frozen=True)
class Potential:
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def zero_potential() -> Potential:
    return Potential(value=np.zeros_like, gradient=np.zeros_like, name="zero")


def harmonic_potential(stiffness: float = 1.0) -> Potential:
    """``V(x) = stiffness * x^2 / 2``."""
    return Potential(
        value=lambda x: 0.5 * stiffness * np.asarray(x, dtype=float) ** 2,
        gradient=lambda x: stiffness * np.asarray(x, dtype=float),
        name="harmonic",
    )


@dataclass(frozen=True, eq=False)
class ParticleState:
    positions: np.ndarray  # (N, dim)
    time: float = 0.0

    @property
    def n(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class SimConfig:
    n_particles: int
    beta: float
    dt: float
    t_final: float
    sign: int
    kernel: TorusKernel | LineKernel | None
    record_times: tuple[float, ...] = (0.0,)
    potential: Potential | None = None
    domain: str = "torus"
    dim: int = 1
    check_stability: bool = True
    _record_steps: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if math.isinf(self.beta):
            raise ValueError("beta = inf is the zero-temperature flow, which is not simulated")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be positive and finite")
        if self.sign not in (-1, 0, 1):
            raise ValueError("sign must be +1, -1, or 0")
        if not self.dt > 0 or not self.dt <= self.t_final:
            raise ValueError("need 0 < dt <= t_final")
        if self.domain not in ("torus", "line"):
            raise ValueError("domain must be 'torus' or 'line'")
        if self.sign != 0 and self.kernel is None:
            raise ValueError("an interacting run needs a kernel")
        if self.domain == "torus" and self.kernel is not None and not isinstance(self.kernel, TorusKernel):
            raise ValueError("torus runs need a TorusKernel")
        if self.domain == "line" and self.kernel is not None and not isinstance(self.kernel, LineKernel):
            raise ValueError("line runs need a LineKernel")
        if isinstance(self.kernel, TorusKernel) and self.kernel.dim != self.dim:
            raise ValueError("kernel dimension does not match dim")
        if self.check_stability and self.dt > self.max_stable_dt() * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the stability bound {self.max_stable_dt():.6g}")

        steps = []
        for t in self.record_times:
            n = round(t / self.dt)
            if t < 0 or t > self.t_final * (1 + 1e-12) or abs(n * self.dt - t) > 1e-9 * max(1.0, t):
                raise ValueError(f"record time {t} is not a grid time in [0, t_final]")
            steps.append(n)
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("record times must be strictly increasing")
        object.__setattr__(self, "_record_steps", tuple(steps))

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.dt)

    @property
    def record_steps(self) -> tuple[int, ...]:
        return self._record_steps

    def max_stable_dt(self) -> float:
        """``0.1 min(1, beta / max|k|^2, 1 / max C_k)`` on the torus."""
        bound = 1.0
        if isinstance(self.kernel, TorusKernel):
            ks, ws = self.kernel.half_modes
            if len(ks):
                ksq = (ks**2).sum(axis=1)
                bound = min(bound, self.beta / ksq.max())
                if self.sign != 0:
                    bound = min(bound, 1.0 / np.max(self.kernel.norm_const * ws * ksq))
        return 0.1 * bound


def _wrap(x: np.ndarray) -> np.ndarray:
    np.mod(x, TWO_PI, out=x)
    # fmod of tiny negatives rounds up to 2 pi
    x[x >= TWO_PI] = 0.0
    return x


def init_uniform(n: int, dim: int, rng: np.random.Generator) -> ParticleState:
    """I.i.d. uniform positions on ``[0, 2 pi)^dim``."""
    if n < 2:
        raise ValueError("need at least two particles")
    return ParticleState(positions=_wrap(rng.uniform(0.0, TWO_PI, size=(n, dim))), time=0.0)


def init_from_density(n: int, grid: np.ndarray, rho: np.ndarray, rng: np.random.Generator) -> ParticleState:
    """Sample positions on the line from a gridded density (piecewise constant cells)."""
    if n < 2:
        raise ValueError("need at least two particles")
    h = grid[1] - grid[0]
    cdf = np.concatenate([[0.0], np.cumsum(rho) * h])
    cdf /= cdf[-1]
    edges = np.concatenate([[grid[0] - h / 2], grid + h / 2])
    u = rng.uniform(size=n)
    return ParticleState(positions=np.interp(u, cdf, edges)[:, None], time=0.0)


def _phases(x: np.ndarray, wavevectors: np.ndarray) -> np.ndarray:
    """``k.X`` with layout ``(..., M, N)`` for positions ``(..., N, d)``."""
    k = wavevectors.astype(float)
    out = k[:, 0, None] * x[..., None, :, 0]
    for d in range(1, k.shape[1]):
        out = out + k[:, d, None] * x[..., None, :, d]
    return out


def mode_sums(state: ParticleState | np.ndarray, kernel: TorusKernel) -> ModeVector:
    """``S(k) = sum_j exp(-i k.X_j)`` for every wavevector of the kernel."""
    x = state.positions if isinstance(state, ParticleState) else np.asarray(state, dtype=float)
    ph = _phases(x, kernel.wavevectors)
    s = np.cos(ph).sum(axis=-1) - 1j * np.sin(ph).sum(axis=-1)
    return ModeVector(wavevectors=kernel.wavevectors, values=s)


def _torus_drift(x: np.ndarray, kernel: TorusKernel, sign: int) -> np.ndarray:
    ks, ws = kernel.half_modes
    drift = np.zeros_like(x)
    if sign == 0 or len(ks) == 0:
        return drift
    n = x.shape[-2]
    ph = _phases(x, ks)  # (..., M, N)
    c, s = np.cos(ph), np.sin(ph)
    sc = c.sum(axis=-1, keepdims=True)
    ss = s.sum(axis=-1, keepdims=True)
    # pair (k, -k): sum of i k w e^{ikX} S(k) + c.c. = -2 w k Im(e^{ikX} S(k))
    im = s * sc - c * ss  # (..., M, N)
    amp = (2.0 * sign * kernel.norm_const / n) * ws  # (M,)
    for d in range(x.shape[-1]):
        drift[..., d] = np.tensordot(amp * ks[:, d], im, axes=([0], [-2]))
    return drift


def _line_drift(x: np.ndarray, kernel: LineKernel | None, sign: int) -> np.ndarray:
    if sign == 0 or kernel is None:
        return np.zeros_like(x)
    n = x.shape[-2]
    diff = x[..., :, None, 0] - x[..., None, :, 0]
    return (-sign / n * kernel.gradient(diff).sum(axis=-1))[..., None]


def interaction_drift(state: ParticleState | np.ndarray, kernel, sign: int, domain: str = "torus") -> np.ndarray:
    """``-(1/N) sum_j grad W(X_i - X_j)`` with ``W = sign * Phi``, self term included."""
    x = state.positions if isinstance(state, ParticleState) else np.asarray(state, dtype=float)
    if domain == "torus":
        return _torus_drift(x, kernel, sign)
    return _line_drift(x, kernel, sign)


def pairwise_drift(positions: np.ndarray, kernel, sign: int) -> np.ndarray:
    """Direct O(N^2) evaluation of the interaction drift for one configuration."""
    x = np.asarray(positions, dtype=float)
    n, dim = x.shape
    diff = (x[:, None, :] - x[None, :, :]).reshape(-1, dim)
    g = np.asarray(kernel.gradient(diff[:, 0] if dim == 1 else diff))
    g = g.reshape(n, n, dim)
    return -sign / n * g.sum(axis=1)


def _total_drift(x: np.ndarray, config: SimConfig) -> np.ndarray:
    drift = interaction_drift(x, config.kernel, config.sign, config.domain)
    if config.potential is not None:
        drift -= config.potential.gradient(x)
    return drift


def _em_update(x: np.ndarray, config: SimConfig, noise: np.ndarray) -> np.ndarray:
    drift = _total_drift(x, config)
    x = x + config.dt * drift + math.sqrt(2.0 * config.dt / config.beta) * noise
    return _wrap(x) if config.domain == "torus" else x


def _fused_torus_update(x, ks, amp, dt, noise_scale, noise):  # pragma: no cover - compiled
    """In-place EM step on the torus with the drift accumulated from mode sums."""
    n_rep, n, dim = x.shape
    m_count = ks.shape[0]
    c = np.empty((m_count, n))
    s = np.empty((m_count, n))
    sc = np.empty(m_count)
    ss = np.empty(m_count)
    for r in range(n_rep):
        for m in range(m_count):
            acc_c = 0.0
            acc_s = 0.0
            for i in range(n):
                ph = 0.0
                for d in range(dim):
                    ph += ks[m, d] * x[r, i, d]
                ci = math.cos(ph)
                si = math.sin(ph)
                c[m, i] = ci
                s[m, i] = si
                acc_c += ci
                acc_s += si
            sc[m] = acc_c
            ss[m] = acc_s
        for i in range(n):
            for d in range(dim):
                drift = 0.0
                for m in range(m_count):
                    drift += amp[m] * ks[m, d] * (s[m, i] * sc[m] - c[m, i] * ss[m])
                v = x[r, i, d] + dt * drift + noise_scale * noise[r, i, d]
                v = v % TWO_PI
                if v >= TWO_PI:
                    v = 0.0
                x[r, i, d] = v


if njit is not None:
    _fused_torus_update = njit(cache=True, nogil=True)(_fused_torus_update)


def _use_fused(config: SimConfig) -> bool:
    return (
        njit is not None
        and config.domain == "torus"
        and config.potential is None
        and isinstance(config.kernel, TorusKernel)
    )


def _fused_step(x: np.ndarray, config: SimConfig, noise: np.ndarray) -> np.ndarray:
    ks, ws = config.kernel.half_modes
    if config.sign == 0 or len(ks) == 0:
        ks = np.zeros((0, config.dim), dtype=int)
        ws = np.zeros(0)
    amp = (2.0 * config.sign * config.kernel.norm_const / config.n_particles) * ws
    _fused_torus_update(
        x, ks.astype(float), amp, config.dt, math.sqrt(2.0 * config.dt / config.beta), noise
    )
    return x


def euler_maruyama_step(state: ParticleState, config: SimConfig, rng: np.random.Generator) -> ParticleState:
    x = state.positions
    noise = rng.standard_normal(x.shape)
    return ParticleState(positions=_em_update(x, config, noise), time=state.time + config.dt)


def empirical_fluctuation(state: ParticleState | np.ndarray, kernel: TorusKernel) -> ModeVector:
    """Fourier data of ``sqrt(N) (mu_N - mu_*)`` on the uniform torus.

    ``entry(k) = S(k) / sqrt(N)`` for ``k != 0``; ``entry(0) = 0`` since the
    uniform equilibrium carries all of the mass in the zero mode.
    """
    x = state.positions if isinstance(state, ParticleState) else np.asarray(state, dtype=float)
    sums = mode_sums(x, kernel)
    vals = sums.values / math.sqrt(x.shape[-2])
    zero = ~np.any(kernel.wavevectors != 0, axis=1)
    vals[..., zero] = 0.0
    return ModeVector(wavevectors=kernel.wavevectors, values=vals)


def projected_fluctuation(positions: np.ndarray, grid: np.ndarray, eigenfunctions: np.ndarray) -> np.ndarray:
    """Coordinates ``int phi_j d(sqrt(N)(mu_N - mu_*))`` for line-domain runs.

    ``eigenfunctions`` is ``(grid, J)`` and orthonormal in ``L^2(mu_*)`` with
    ``phi_0 = 1``, so the equilibrium part is ``sqrt(N)`` on ``j = 0`` only.
    """
    x = np.asarray(positions, dtype=float).reshape(-1)
    n = len(x)
    vals = np.stack([np.interp(x, grid, eigenfunctions[:, j]) for j in range(eigenfunctions.shape[1])], axis=-1)
    out = vals.sum(axis=0) / math.sqrt(n)
    out[0] -= math.sqrt(n)
    return out


@dataclass(frozen=True, eq=False)
class ReplicaTrace:
    """Recorded output of one or more replicas advanced together."""

    times: np.ndarray  # (T,)
    norms: np.ndarray  # (R, T)
    modes: np.ndarray | None  # (R, T, M) complex on the torus

    def replica(self, r: int) -> list[tuple[float, ModeVector | None, float]]:
        return [
            (float(t), None if self.modes is None else self.modes[r, i], float(self.norms[r, i]))
            for i, t in enumerate(self.times)
        ]


def _record(x: np.ndarray, config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    fl = empirical_fluctuation(x, config.kernel)
    return phi_norm_sq(config.kernel, fl), fl.values


def simulate_batch(
    config: SimConfig, rngs: Sequence[np.random.Generator], fused: bool | None = None
) -> ReplicaTrace:
    """Advance ``len(rngs)`` independent replicas; replica ``r`` uses only ``rngs[r]``.

    Fluctuations are extracted through the kernel's Fourier modes, so a
    :class:`TorusKernel` is required even for the baseline.  ``fused`` selects
    the compiled stepper (default: whenever numba is available and ``V = 0``).
    """
    if config.domain != "torus" or not isinstance(config.kernel, TorusKernel):
        raise ValueError("fluctuation recording needs a torus run with a TorusKernel")
    n, dim, r = config.n_particles, config.dim, len(rngs)
    x = np.empty((r, n, dim))
    for i, g in enumerate(rngs):
        x[i] = init_uniform(n, dim, g).positions
    noise = np.empty_like(x)

    n_rec = len(config.record_steps)
    norms = np.empty((r, n_rec))
    modes = np.empty((r, n_rec, len(config.kernel.weights)), dtype=complex)
    rec = dict(zip(config.record_steps, range(n_rec)))
    last = config.record_steps[-1] if n_rec else 0
    if fused is None:
        fused = _use_fused(config)
    elif fused and not _use_fused(config):
        raise ValueError("the fused stepper needs numba, a torus kernel and V = 0")
    for step in range(last + 1):
        if step in rec:
            norms[:, rec[step]], modes[:, rec[step]] = _record(x, config)
        if step == last:
            break
        for i, g in enumerate(rngs):
            g.standard_normal(out=noise[i])
        x = _fused_step(x, config, noise) if fused else _em_update(x, config, noise)
    times = np.array([s * config.dt for s in config.record_steps])
    return ReplicaTrace(times=times, norms=norms, modes=modes)


def simulate_replica(config: SimConfig, rng: np.random.Generator) -> list[tuple[float, ModeVector, float]]:
    """``(t, fluctuation modes, ||eta_N(t)||_Phi^2)`` at each record time."""
    trace = simulate_batch(config, [rng])
    return [
        (t, ModeVector(wavevectors=config.kernel.wavevectors, values=m), nrm)
        for t, m, nrm in trace.replica(0)
    ]
