"""Discrete Fokker-Planck generator, its eigenpairs and the G matrix.

The generator ``A = -beta^{-1} e^{beta U} div(e^{-beta U} grad)`` is discretised
in conservative (divergence) form on a cell-centred grid,

    (A f)_i = -1/(beta h^2 p_i) [w_{i+1/2}(f_{i+1} - f_i) - w_{i-1/2}(f_i - f_{i-1})],

with node weights ``p_i = e^{-beta U_i}`` and face weights ``w = e^{-beta U}``
at the cell faces.  Faces are periodic on the torus; the two outer faces of a
truncated line carry no flux.  ``A`` is self-adjoint for the weights ``p_i h``,
and the similarity transform ``D^{1/2} A D^{-1/2}`` (``D = diag p``) makes it a
symmetric matrix with the same spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .equilibrium import Grid
from .kernels import LineKernel, TorusKernel

DEGENERACY_RTOL = 1e-8


class ResolutionExceeded(ValueError):
    pass


class NoSpectralGap(ValueError):
    pass


class NotPSD(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Generator:
    grid: Grid
    beta: float
    U: np.ndarray
    rho: np.ndarray  # normalised equilibrium density e^{-beta U} / Z
    matrix: np.ndarray  # A acting on grid functions
    symmetric: np.ndarray  # D^{1/2} A D^{-1/2}
    lower: np.ndarray  # off-diagonal entries (face couplings) of the symmetric form
    diagonal: np.ndarray

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """``<f, g>`` in ``L^2(mu_*)``."""
        return float(np.sum(f * g * self.rho) * self.grid.h)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def dirichlet_form(self, f: np.ndarray) -> float:
        """``beta^{-1} int |grad f|^2 dmu_*`` with face-centred differences."""
        g = self.grid
        df = np.diff(f, append=f[:1]) if g.domain == "torus" else np.diff(f)
        wf = self._face_weights_normalised()
        return float(np.sum(wf * df**2) / (self.beta * g.h))

    def _face_weights_normalised(self) -> np.ndarray:
        # off-diagonal couplings recover w / Z
        p = self.rho
        if self.grid.domain == "torus":
            pn = np.roll(p, -1)
        else:
            pn = p[1:]
            p = p[:-1]
        return -self.lower * self.beta * self.grid.h**2 * np.sqrt(p * pn)


def build_generator(U, beta: float, grid: Grid) -> Generator:
    """Discretise ``A = -L`` for the effective potential ``U``.

    ``U`` may be an array of node values or a callable; with a callable the
    face weights use ``U`` at the faces, otherwise the mean of the adjacent
    node values.
    """
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError("beta must be positive and finite")
    h, x = grid.h, grid.x
    if hasattr(U, "value"):
        U = U.value
    Un = np.asarray(U(x), dtype=float) * np.ones(grid.n) if callable(U) else np.asarray(U, dtype=float)
    if Un.shape != (grid.n,) or not np.all(np.isfinite(Un)):
        raise ValueError("U must be finite on every grid node")
    if grid.domain == "line" and np.ptp(Un) < 1e-12:
        raise NoSpectralGap("a flat potential on the line has no spectral gap")

    shift = Un.min()
    p = np.exp(-beta * (Un - shift))
    if grid.domain == "torus":
        if callable(U):
            Uf = np.asarray(U(x + h / 2), dtype=float) * np.ones(grid.n)
        else:
            Uf = 0.5 * (Un + np.roll(Un, -1))
        pn = np.roll(p, -1)
    else:
        if callable(U):
            Uf = np.asarray(U(x[:-1] + h / 2), dtype=float) * np.ones(grid.n - 1)
        else:
            Uf = 0.5 * (Un[:-1] + Un[1:])
        pn = p[1:]
    w = np.exp(-beta * (Uf - shift))

    scale = 1.0 / (beta * h * h)
    n = grid.n
    if grid.domain == "torus":
        w_left = np.roll(w, 1)
        diag = scale * (w + w_left) / p
        off = -scale * w / np.sqrt(p * pn)  # coupling between i and i+1 (mod n)
        S = np.diag(diag)
        idx = np.arange(n)
        S[idx, (idx + 1) % n] += off
        S[(idx + 1) % n, idx] += off
        A = np.diag(diag)
        A[idx, (idx + 1) % n] += -scale * w / p
        A[(idx + 1) % n, idx] += -scale * w / pn
    else:
        wr = np.append(w, 0.0)
        wl = np.insert(w, 0, 0.0)
        diag = scale * (wr + wl) / p
        off = -scale * w / np.sqrt(p[:-1] * pn)
        S = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        A = np.diag(diag) + np.diag(-scale * w / p[:-1], 1) + np.diag(-scale * w / pn, -1)

    rho = p / (np.sum(p) * h)
    return Generator(grid=grid, beta=float(beta), U=Un, rho=rho, matrix=A, symmetric=S, lower=off, diagonal=diag)


@dataclass(frozen=True, eq=False)
class SpectralModel:
    generator: Generator
    eigenvalues: np.ndarray  # (J,) ascending
    eigenfunctions: np.ndarray  # (n, J), orthonormal in L^2(mu_*)

    @property
    def grid(self) -> Grid:
        return self.generator.grid

    @property
    def rho(self) -> np.ndarray:
        return self.generator.rho

    @property
    def beta(self) -> float:
        return self.generator.beta

    @property
    def J(self) -> int:
        return len(self.eigenvalues)

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[1])

    def gram(self) -> np.ndarray:
        P = self.eigenfunctions * (self.rho * self.grid.h)[:, None]
        return self.eigenfunctions.T @ P


def _fix_sign(v: np.ndarray) -> np.ndarray:
    thresh = 1e-8 * np.max(np.abs(v))
    first = np.argmax(np.abs(v) > thresh)
    return -v if v[first] < 0 else v


def _canonical_pairs(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Rotate two-fold degenerate eigenvectors so the first vanishes at node 0."""
    vecs = vecs.copy()
    i = 0
    while i < len(vals):
        j = i + 1
        while j < len(vals) and abs(vals[j] - vals[i]) <= DEGENERACY_RTOL * max(1.0, abs(vals[i])):
            j += 1
        if j - i == 2:
            a, b = vecs[:, i].copy(), vecs[:, i + 1].copy()
            r = math.hypot(a[0], b[0])
            if r > 1e-12 * max(np.abs(a).max(), np.abs(b).max()):
                vecs[:, i] = (b[0] * a - a[0] * b) / r
                vecs[:, i + 1] = (a[0] * a + b[0] * b) / r
        i = j
    return vecs


def eigendecompose(gen: Generator, J: int) -> SpectralModel:
    """Lowest ``J`` eigenpairs of ``A``.

    Eigenfunctions are normalised in ``L^2(mu_*)`` and made positive at their
    first non-negligible node; two-fold degenerate pairs (the sine/cosine
    pairs of a flat torus) are first rotated so that the earlier member
    vanishes at ``x_0``.
    """
    n = gen.grid.n
    if J < 1:
        raise ValueError("J must be at least 1")
    if J > n // 4:
        raise ResolutionExceeded(f"J={J} exceeds grid size / 4 = {n // 4}")
    if gen.grid.domain == "line":
        vals, vecs = sla.eigh_tridiagonal(gen.diagonal, gen.lower, select="i", select_range=(0, J - 1))
    else:
        vals, vecs = sla.eigh(gen.symmetric, subset_by_index=[0, J - 1])
    vecs = _canonical_pairs(vals, vecs)
    phi = vecs / np.sqrt(gen.rho * gen.grid.h)[:, None]
    for j in range(J):
        phi[:, j] = _fix_sign(phi[:, j])
    if J >= 2 and vals[1] < 1e-6:
        raise NoSpectralGap(f"lambda_1 = {vals[1]:.3e} shows no spectral gap")
    return SpectralModel(generator=gen, eigenvalues=vals, eigenfunctions=phi)


def coeff_c(model: SpectralModel, omega) -> np.ndarray:
    """``c_j(omega) = int phi_j(y) e^{i omega y} mu_*(dy)`` for ``j < J``.

    Scalar ``omega`` gives shape ``(J,)``; an array of frequencies gives
    ``(len(omega), J)``.
    """
    om = np.asarray(omega, dtype=float)
    x = model.grid.x
    wts = model.rho * model.grid.h
    E = np.exp(1j * np.multiply.outer(om, x)) * wts
    return E @ model.eigenfunctions


@dataclass(frozen=True, eq=False)
class GMatrix:
    matrix: np.ndarray  # (J, J)
    sqrt: np.ndarray  # symmetric PSD square root
    rates: np.ndarray  # (J,) lambda_j >= 0

    @property
    def J(self) -> int:
        return len(self.rates)

    def gamma(self, t, beta: float) -> np.ndarray:
        """Volterra kernel ``beta G^{1/2} Lambda(t) G^{1/2}``; ``(..., J, J)``."""
        t = np.asarray(t, dtype=float)
        lam = self.rates * np.exp(-np.multiply.outer(t, self.rates))
        return beta * np.einsum("ij,...j,jk->...ik", self.sqrt, lam, self.sqrt)


def g_sqrt(G: np.ndarray, clamp_tol: float = 1e-10, psd_tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root by eigendecomposition.

    Eigenvalues in ``[-psd_tol, 0)`` are treated as zero; anything more
    negative raises :class:`NotPSD`.
    """
    G = 0.5 * (np.asarray(G, dtype=float) + np.asarray(G, dtype=float).T)
    vals, vecs = np.linalg.eigh(G)
    if len(vals) and vals.min() < -psd_tol:
        raise NotPSD(f"smallest eigenvalue {vals.min():.3e}")
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return 0.5 * (root + root.T)


def make_gmatrix(G: np.ndarray, rates) -> GMatrix:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    rates = np.clip(np.asarray(rates, dtype=float).reshape(-1), 0.0, None)
    if G.shape != (len(rates), len(rates)):
        raise ValueError("G and the rate list disagree in size")
    return GMatrix(matrix=G, sqrt=g_sqrt(G), rates=rates)


def _kernel_values(kernel, diff: np.ndarray) -> np.ndarray:
    if kernel is None:
        return np.zeros_like(diff)
    return np.asarray(kernel(diff), dtype=float)


def g_matrix(model: SpectralModel, kernel) -> GMatrix:
    """``G_ij = iint Phi(y - y') phi_i(y) phi_j(y') mu_*(dy) mu_*(dy')`` by quadrature."""
    x = model.grid.x
    P = model.eigenfunctions * (model.rho * model.grid.h)[:, None]
    K = _kernel_values(kernel, x[:, None] - x[None, :])
    G = P.T @ K @ P
    return make_gmatrix(0.5 * (G + G.T), model.eigenvalues)


def g_matrix_spectral(model: SpectralModel, kernel: TorusKernel | LineKernel) -> np.ndarray:
    """Independent route ``G_ij = int c_i(w) conj(c_j(w)) nu(dw)``."""
    if isinstance(kernel, TorusKernel):
        if kernel.dim != 1:
            raise ValueError("the spectral module is one-dimensional")
        omega = kernel.wavevectors[:, 0].astype(float)
        nu = kernel.norm_const * kernel.weights
    else:
        omega = kernel.omega_grid
        nu = kernel.spectral_weights
    c = coeff_c(model, omega)  # (M, J)
    G = (c * nu[:, None]).T @ np.conj(c)
    return G.real


def kernel_k(model: SpectralModel, omega: float, omega_prime: float, s: float) -> complex:
    """``beta sum_j lambda_j e^{-lambda_j s} conj(c_j(omega)) c_j(omega')``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    lam = np.clip(model.eigenvalues, 0.0, None)
    c1 = coeff_c(model, omega)
    c2 = coeff_c(model, omega_prime)
    return complex(model.beta * np.sum(lam * np.exp(-lam * s) * np.conj(c1) * c2))


@dataclass(frozen=True)
class TruncationCheck:
    J: int
    trace: float
    trace_2J: float
    norm: float
    norm_2J: float
    tol: float

    @property
    def drift(self) -> float:
        return max(abs(self.trace_2J - self.trace), abs(self.norm_2J - self.norm))

    @property
    def converged(self) -> bool:
        return self.drift < self.tol


def truncation_check(gen: Generator, kernel, J: int, tol: float = 1e-4) -> TruncationCheck:
    """Compare trace and operator norm of ``G`` at truncations ``J`` and ``2J``."""
    G1 = g_matrix(eigendecompose(gen, J), kernel).matrix
    G2 = g_matrix(eigendecompose(gen, 2 * J), kernel).matrix
    return TruncationCheck(
        J=J,
        trace=float(np.trace(G1)),
        trace_2J=float(np.trace(G2)),
        norm=float(np.linalg.eigvalsh(G1).max()),
        norm_2J=float(np.linalg.eigvalsh(G2).max()),
        tol=tol,
    )
