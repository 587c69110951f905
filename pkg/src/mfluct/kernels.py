"""Interaction kernels with nonnegative Fourier data.

A torus kernel is stored through its Fourier coefficients,

    Phi(x) = (2 pi)^{-d} sum_k Phi_hat(k) exp(i k.x),

with ``Phi_hat(k) >= 0`` and ``Phi_hat(k) == Phi_hat(-k)``.  Finite mode lists
make the spectral measure ``nu = (2 pi)^{-d} Phi_hat`` finite, so every kernel
here is bounded, even and positive semi-definite.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi


class KernelError(ValueError):
    """Base class for invalid kernel input."""


class NegativeWeight(KernelError):
    pass


class AsymmetricModes(KernelError):
    pass


class IndexOutOfSupport(KernelError):
    pass


def _as_wavevector(k, dim: int) -> tuple[int, ...]:
    if np.isscalar(k):
        k = (k,)
    vec = tuple(int(c) for c in k)
    if len(vec) != dim:
        raise KernelError(f"wavevector {k!r} does not have dimension {dim}")
    return vec


def _neg(k: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(-c for c in k)


@dataclass(frozen=True, eq=False)
class TorusKernel:
    """Bandlimited even kernel on the torus ``[0, 2 pi)^d``.

    Build instances with :func:`torus_kernel_from_modes`; the constructor
    itself does not validate.
    """

    dim: int
    wavevectors: np.ndarray  # (M, dim) int
    weights: np.ndarray  # (M,) float, Phi_hat(k)

    def __post_init__(self):
        self.wavevectors.setflags(write=False)
        self.weights.setflags(write=False)

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(c) for c in k): i for i, k in enumerate(self.wavevectors)}

    def weight(self, k) -> float:
        i = self.index.get(_as_wavevector(k, self.dim))
        return 0.0 if i is None else float(self.weights[i])

    @property
    def norm_const(self) -> float:
        return TWO_PI ** (-self.dim)

    @cached_property
    def half_modes(self) -> tuple[np.ndarray, np.ndarray]:
        """One representative per nonzero +-k pair, with positive weight.

        Returns ``(wavevectors, weights)``.  Representatives follow the
        canonical ordering of :func:`mode_ordering`.
        """
        reps = []
        for k, w in zip(self.wavevectors, self.weights):
            kt = tuple(int(c) for c in k)
            if w > 0 and any(kt) and _is_canonical(kt):
                reps.append((_order_key(kt), kt, float(w)))
        reps.sort()
        if not reps:
            return np.zeros((0, self.dim), dtype=int), np.zeros(0)
        return (
            np.array([r[1] for r in reps], dtype=int).reshape(-1, self.dim),
            np.array([r[2] for r in reps]),
        )

    @property
    def max_k_sq(self) -> int:
        ks, _ = self.half_modes
        return int((ks**2).sum(axis=1).max()) if len(ks) else 0

    def __call__(self, x) -> np.ndarray:
        return eval_kernel(self, x)

    def gradient(self, x) -> np.ndarray:
        return kernel_gradient(self, x)

    def to_modes(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(c) for c in k), float(w)) for k, w in zip(self.wavevectors, self.weights)]


def torus_kernel_from_modes(
    dim: int,
    modes: Iterable[tuple[object, float]] | Mapping[object, float],
    symmetrize: bool = True,
) -> TorusKernel:
    """Validate a list of ``(k, Phi_hat(k))`` pairs into a :class:`TorusKernel`.

    Missing partners ``-k`` are added with the same weight when ``symmetrize``
    is true, otherwise :class:`AsymmetricModes` is raised.  A pair listed with
    two different weights is always an error.
    """
    if dim not in (1, 2):
        raise KernelError("torus kernels support dim 1 or 2")
    if isinstance(modes, Mapping):
        modes = list(modes.items())
    entries: dict[tuple[int, ...], float] = {}
    for k, w in modes:
        kt = _as_wavevector(k, dim)
        w = float(w)
        if not math.isfinite(w):
            raise KernelError(f"weight for {kt} is not finite")
        if w < 0:
            raise NegativeWeight(f"Phi_hat{kt} = {w} < 0")
        if kt in entries:
            raise KernelError(f"duplicate wavevector {kt}")
        entries[kt] = w
    if not entries:
        raise KernelError("mode list is empty")

    for kt, w in list(entries.items()):
        partner = _neg(kt)
        if partner not in entries:
            if not symmetrize:
                raise AsymmetricModes(f"{kt} present without {partner}")
            entries[partner] = w
        elif entries[partner] != w:
            raise AsymmetricModes(f"weights differ for {kt} and {partner}")

    keys = sorted(entries, key=lambda k: (sum(c * c for c in k), k))
    return TorusKernel(
        dim=dim,
        wavevectors=np.array(keys, dtype=int).reshape(-1, dim),
        weights=np.array([entries[k] for k in keys], dtype=float),
    )


def one_plus_cos() -> TorusKernel:
    """Reference kernel ``Phi(x) = 1 + cos x`` on the circle."""
    return torus_kernel_from_modes(1, [(0, TWO_PI), (1, math.pi), (-1, math.pi)])


def constant_kernel(dim: int = 1) -> TorusKernel:
    return torus_kernel_from_modes(dim, [((0,) * dim, TWO_PI**dim)])


PRESETS: dict[str, Callable[[], TorusKernel]] = {
    "one_plus_cos": one_plus_cos,
    "constant": constant_kernel,
}


def _points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1:
        return x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"points must have trailing dimension {dim}")
    return x


def eval_kernel(kernel: TorusKernel, x) -> np.ndarray | float:
    """Evaluate Phi by its Fourier sum; for ``dim == 1`` scalars/arrays of
    points are accepted directly, otherwise the last axis holds coordinates."""
    pts = _points(x, kernel.dim)
    phase = pts @ kernel.wavevectors.T.astype(float)
    val = kernel.norm_const * (np.exp(1j * phase) @ kernel.weights)
    out = val.real
    return float(out) if out.ndim == 0 else out


def kernel_gradient(kernel: TorusKernel, x) -> np.ndarray:
    """Gradient of Phi; shape ``x.shape`` for 1-d inputs, ``(..., dim)`` otherwise."""
    pts = _points(x, kernel.dim)
    phase = pts @ kernel.wavevectors.T.astype(float)
    # d/dx e^{ikx} = i k e^{ikx}; real part of i k w e^{ikx} is -k w sin(kx)
    s = np.sin(phase) * kernel.weights
    grad = -kernel.norm_const * (s @ kernel.wavevectors.astype(float))
    if kernel.dim == 1:
        return grad[..., 0]
    return grad


@dataclass(frozen=True, eq=False)
class ModeVector:
    """Complex Fourier amplitudes indexed by integer wavevectors.

    ``values`` may carry leading batch axes; the last axis is aligned with
    ``wavevectors``.
    """

    wavevectors: np.ndarray
    values: np.ndarray

    @classmethod
    def from_mapping(cls, entries: Mapping[object, complex], dim: int = 1) -> ModeVector:
        keys = [_as_wavevector(k, dim) for k in entries]
        return cls(
            wavevectors=np.array(keys, dtype=int).reshape(-1, dim),
            values=np.array([complex(v) for v in entries.values()]),
        )

    def __getitem__(self, k) -> complex | np.ndarray:
        kt = _as_wavevector(k, self.wavevectors.shape[1])
        for i, kk in enumerate(self.wavevectors):
            if tuple(int(c) for c in kk) == kt:
                return self.values[..., i]
        return 0j

    def conjugate_symmetric(self, atol: float = 1e-12) -> bool:
        return all(
            np.allclose(self[_neg(tuple(int(c) for c in k))], np.conj(self.values[..., i]), atol=atol)
            for i, k in enumerate(self.wavevectors)
        )


def _aligned_values(kernel: TorusKernel, modes: ModeVector) -> np.ndarray:
    if modes.wavevectors.shape == kernel.wavevectors.shape and np.array_equal(
        modes.wavevectors, kernel.wavevectors
    ):
        return modes.values
    idx = {tuple(int(c) for c in k): i for i, k in enumerate(modes.wavevectors)}
    vals = np.zeros(modes.values.shape[:-1] + (len(kernel.weights),), dtype=complex)
    for j, k in enumerate(kernel.wavevectors):
        i = idx.get(tuple(int(c) for c in k))
        if i is not None:
            vals[..., j] = modes.values[..., i]
    return vals


def phi_norm_sq(kernel: TorusKernel, modes: ModeVector) -> np.ndarray | float:
    """Energy norm ``(2 pi)^{-d} sum_k Phi_hat(k) |f_hat(k)|^2``.

    Entries of ``modes`` outside the kernel support contribute nothing.
    """
    vals = _aligned_values(kernel, modes)
    out = kernel.norm_const * ((np.abs(vals) ** 2) @ kernel.weights)
    return float(out) if np.ndim(out) == 0 else out


def _is_canonical(k: Sequence[int]) -> bool:
    for c in k:
        if c != 0:
            return c > 0
    return False


def _order_key(k: Sequence[int]) -> tuple:
    return (sum(c * c for c in k), tuple(k))


def mode_ordering(dim: int, count: int) -> list[tuple[int, ...]]:
    """First ``count`` nonzero wavevectors, one per +-pair.

    Sorted by ``(|k|^2, k)`` lexicographically; the representative of each
    pair is the one whose first nonzero component is positive.
    """
    out: list[tuple[int, ...]] = []
    radius = 1
    while len(out) < count:
        shell = [
            k
            for k in itertools.product(range(-radius, radius + 1), repeat=dim)
            if _is_canonical(k)
        ]
        shell.sort(key=_order_key)
        # only wavevectors with |k| <= radius are guaranteed complete
        out = [k for k in shell if sum(c * c for c in k) <= radius * radius]
        radius *= 2
    return out[:count]


def mode_position(k: Sequence[int]) -> int:
    """1-based position ``n`` of ``k`` (or ``-k``) in :func:`mode_ordering`."""
    kt = tuple(int(c) for c in k)
    if not any(kt):
        return 0
    if not _is_canonical(kt):
        kt = _neg(kt)
    key = _order_key(kt)
    dim = len(kt)
    r = math.isqrt(key[0]) + 1
    smaller = [
        q
        for q in itertools.product(range(-r, r + 1), repeat=dim)
        if _is_canonical(q) and _order_key(q) < key
    ]
    return len(smaller) + 1


def phi_series_coeff(kernel: TorusKernel, n: int, strict: bool = False) -> float:
    """Coefficient of Phi against the cosine eigenfunction ``phi_{2n}``.

    ``Phi_0 = (2 pi)^{-d} Phi_hat(0)`` and
    ``Phi_{2n} = sqrt(2) (2 pi)^{-d} Phi_hat(k(n))`` for ``n >= 1``.
    """
    if n < 0:
        raise IndexError("mode index must be nonnegative")
    if n == 0:
        return kernel.norm_const * kernel.weight((0,) * kernel.dim)
    k = mode_ordering(kernel.dim, n)[-1]
    w = kernel.weight(k)
    if strict and w == 0.0:
        raise IndexOutOfSupport(f"k({n}) = {k} carries no weight")
    return math.sqrt(2.0) * kernel.norm_const * w


@dataclass(frozen=True, eq=False)
class LineKernel:
    """Even kernel on the real line, stored in real and Fourier space.

    ``spectral_density`` samples ``Phi_hat(omega) = int Phi(x) e^{-i omega x} dx``
    on ``omega_grid``; construction spot-checks the inverse transform.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    omega_grid: np.ndarray
    spectral_density: np.ndarray
    gradient_fn: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"
    check_points: tuple[float, ...] = field(default=(0.0, 0.5, 1.0, 2.0))

    def __post_init__(self):
        if np.any(self.spectral_density < 0):
            raise NegativeWeight("spectral density must be nonnegative")
        xs = np.array(self.check_points)
        direct = np.asarray(self.evaluator(xs), dtype=float)
        if not np.allclose(direct, np.asarray(self.evaluator(-xs), dtype=float), atol=1e-12):
            raise AsymmetricModes("line kernel must be even")
        recon = self.inverse_transform(xs)
        if np.max(np.abs(recon - direct)) > 1e-6:
            raise KernelError("real-space and spectral forms disagree beyond 1e-6")
        if np.any(np.abs(direct) > direct[0] + 1e-12):
            raise KernelError("|Phi(x)| exceeds Phi(0)")

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))

    def gradient(self, x):
        if self.gradient_fn is None:
            raise NotImplementedError(f"kernel {self.name!r} has no gradient")
        return self.gradient_fn(np.asarray(x, dtype=float))

    @property
    def spectral_weights(self) -> np.ndarray:
        """Quadrature weights of ``nu(d omega) = Phi_hat d omega / (2 pi)``."""
        return np.asarray(_trapezoid_weights(self.omega_grid) * self.spectral_density / TWO_PI)

    def inverse_transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.cos(np.multiply.outer(x, self.omega_grid)) @ self.spectral_weights


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def gaussian_line_kernel(amplitude: float = 1.0, width: float = 1.0, n_omega: int = 2001) -> LineKernel:
    """``Phi(x) = a exp(-x^2 / (2 s^2))`` with ``Phi_hat = a s sqrt(2 pi) exp(-s^2 w^2 / 2)``."""
    if amplitude < 0 or width <= 0:
        raise KernelError("gaussian kernel needs amplitude >= 0 and width > 0")
    cutoff = 12.0 / width
    omega = np.linspace(-cutoff, cutoff, n_omega)
    dens = amplitude * width * math.sqrt(TWO_PI) * np.exp(-0.5 * (width * omega) ** 2)
    a, s2 = amplitude, width * width
    return LineKernel(
        evaluator=lambda x: a * np.exp(-0.5 * x * x / s2),
        omega_grid=omega,
        spectral_density=dens,
        gradient_fn=lambda x: -a * x / s2 * np.exp(-0.5 * x * x / s2),
        name="gaussian",
    )
