import math

import numpy as np
import pytest

from mfluct.equilibrium import line_grid, torus_grid
from mfluct.kernels import gaussian_line_kernel
from mfluct.spectral import (
    NoSpectralGap,
    NotPSD,
    ResolutionExceeded,
    build_generator,
    coeff_c,
    eigendecompose,
    g_matrix,
    g_matrix_spectral,
    g_sqrt,
    kernel_k,
    make_gmatrix,
    truncation_check,
)
from mfluct.volterra import operator_norm

HARMONIC = lambda x: 0.5 * np.asarray(x) ** 2  # noqa: E731


@pytest.fixture(scope="module")
def flat_torus():
    return eigendecompose(build_generator(np.zeros(256), 1.0, torus_grid(256)), 9)


@pytest.fixture(scope="module")
def ou_model():
    return eigendecompose(build_generator(HARMONIC, 1.0, line_grid(8.0, 1024)), 8)


def test_flat_torus_spectrum(flat_torus):
    lam = flat_torus.eigenvalues
    assert lam[0] < 1e-8
    assert np.allclose(lam[1:], [1, 1, 4, 4, 9, 9, 16, 16], rtol=1e-3)


def test_flat_torus_beta_two_halves():
    lam = eigendecompose(build_generator(np.zeros(128), 2.0, torus_grid(128)), 5).eigenvalues
    assert np.allclose(lam[1:], [0.5, 0.5, 2, 2], rtol=1e-3)


def test_ou_spectrum(ou_model):
    assert np.allclose(ou_model.eigenvalues[1:7], np.arange(1, 7), rtol=1e-3)
    assert abs(ou_model.eigenvalues[0]) < 1e-8


def test_ou_eigenfunctions_are_hermite(ou_model):
    x = ou_model.grid.x
    wts = ou_model.rho * ou_model.grid.h
    for j, herm in [(1, x), (2, (x**2 - 1) / math.sqrt(2)), (3, (x**3 - 3 * x) / math.sqrt(6))]:
        phi = ou_model.eigenfunctions[:, j]
        phi = phi * np.sign(np.sum(phi * herm * wts))
        assert math.sqrt(np.sum((phi - herm) ** 2 * wts)) < 1e-3


@pytest.mark.parametrize("which", ["flat_torus", "ou_model"])
def test_orthonormal(which, request):
    m = request.getfixturevalue(which)
    assert np.max(np.abs(m.gram() - np.eye(m.J))) < 1e-8
    assert np.allclose(m.eigenfunctions[:, 0], 1.0, atol=1e-8)


def test_flat_torus_eigenfunctions(flat_torus):
    x = flat_torus.grid.x
    # phi_1 vanishes at x_0 = 0 so the pair is (sqrt2 sin, sqrt2 cos)
    assert np.allclose(flat_torus.eigenfunctions[:, 1], math.sqrt(2) * np.sin(x), atol=1e-8)
    assert np.allclose(flat_torus.eigenfunctions[:, 2], math.sqrt(2) * np.cos(x), atol=1e-8)


def test_single_eigenpair():
    m = eigendecompose(build_generator(HARMONIC, 1.0, line_grid(8.0, 256)), 1)
    assert m.J == 1 and abs(m.eigenvalues[0]) < 1e-8


def test_errors():
    gen = build_generator(np.zeros(64), 1.0, torus_grid(64))
    with pytest.raises(ResolutionExceeded):
        eigendecompose(gen, 17)
    with pytest.raises(NoSpectralGap):
        build_generator(np.zeros(64), 1.0, line_grid(4.0, 64))


def test_coeff_c(flat_torus):
    c0 = coeff_c(flat_torus, 0.0)
    assert c0[0] == pytest.approx(1.0)
    assert np.allclose(c0[1:], 0, atol=1e-12)
    c1 = np.abs(coeff_c(flat_torus, 1.0))
    assert c1[1] == pytest.approx(1 / math.sqrt(2))
    assert c1[2] == pytest.approx(1 / math.sqrt(2))
    assert np.allclose(np.delete(c1, [1, 2]), 0, atol=1e-12)


def test_parseval_smooth_potential():
    m = eigendecompose(build_generator(lambda x: 0.5 * np.cos(x), 1.0, torus_grid(512)), 64)
    assert abs(np.sum(np.abs(coeff_c(m, 1.0)) ** 2) - 1) < 1e-6


def test_g_flat_torus(flat_torus, ref):
    m = eigendecompose(flat_torus.generator, 3)
    G = g_matrix(m, ref).matrix
    assert np.allclose(G, np.diag([1, 0.5, 0.5]), atol=1e-8)
    assert np.allclose(g_matrix_spectral(m, ref), G, atol=1e-12)
    assert np.allclose(g_matrix(m, None).matrix, 0)


def test_g_line_psd_and_two_routes(ou_model):
    k = gaussian_line_kernel()
    G = g_matrix(ou_model, k).matrix
    assert np.linalg.eigvalsh(G).min() >= -1e-10
    assert np.allclose(g_matrix_spectral(ou_model, k), G, atol=1e-7)


def test_g_sqrt():
    assert np.allclose(g_sqrt(np.diag([1, 0.5, 0.5])), np.diag([1, 1 / math.sqrt(2), 1 / math.sqrt(2)]))
    assert np.allclose(g_sqrt(np.zeros((3, 3))), 0)
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = rng.normal(size=(5, 3))
        G = A @ A.T
        R = g_sqrt(G)
        assert np.allclose(R @ R, G, atol=1e-8)
    with pytest.raises(NotPSD):
        g_sqrt(np.diag([1.0, -1e-3]))


def test_kernel_k(flat_torus):
    assert kernel_k(flat_torus, 0.0, 0.0, 0.7) == pytest.approx(0, abs=1e-12)
    m = eigendecompose(flat_torus.generator, 3)
    assert kernel_k(m, 1.0, 1.0, 0.0) == pytest.approx(1.0, rel=1e-3)
    a = kernel_k(flat_torus, 0.3, -1.2, 0.4)
    b = kernel_k(flat_torus, -1.2, 0.3, 0.4)
    assert a == pytest.approx(b.conjugate())


def test_operator_norm_matches_power_iteration():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(6, 6))
    G = A @ A.T
    v = np.ones(6)
    for _ in range(2000):
        v = G @ v
        v /= np.linalg.norm(v)
    assert operator_norm(make_gmatrix(G, np.ones(6))) == pytest.approx(v @ G @ v, rel=1e-8)


def test_truncation_check_ou():
    gen = build_generator(HARMONIC, 1.0, line_grid(8.0, 512))
    assert not truncation_check(gen, gaussian_line_kernel(), 8).converged
    chk = truncation_check(gen, gaussian_line_kernel(), 24)
    assert chk.converged, chk
