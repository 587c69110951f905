import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfluct.kernels import (
    TWO_PI,
    AsymmetricModes,
    IndexOutOfSupport,
    KernelError,
    ModeVector,
    NegativeWeight,
    constant_kernel,
    eval_kernel,
    gaussian_line_kernel,
    kernel_gradient,
    mode_ordering,
    mode_position,
    phi_norm_sq,
    phi_series_coeff,
    torus_kernel_from_modes,
)


def test_ref_kernel_matches_one_plus_cos(ref):
    x = np.linspace(0, TWO_PI, 37)
    assert np.allclose(eval_kernel(ref, x), 1 + np.cos(x), atol=1e-14)


def test_ref_kernel_matches_quadrature_of_inverse_sum(ref):
    # Phi_hat(k) = int_0^{2pi} (1 + cos x) e^{-ikx} dx
    x = TWO_PI * np.arange(512) / 512
    for k, w in zip(ref.wavevectors[:, 0], ref.weights):
        hat = np.sum((1 + np.cos(x)) * np.exp(-1j * k * x)) * TWO_PI / 512
        assert abs(hat - w) < 1e-12


@pytest.mark.parametrize("x, expected", [(0.0, 2.0), (math.pi, 0.0), (math.pi / 2, 1.0)])
def test_eval_ref(ref, x, expected):
    assert eval_kernel(ref, x) == pytest.approx(expected, abs=1e-15)


def test_negative_weight_rejected():
    with pytest.raises(NegativeWeight):
        torus_kernel_from_modes(1, {(1,): -0.5})


def test_missing_partner_without_symmetrize():
    with pytest.raises(AsymmetricModes):
        torus_kernel_from_modes(1, {(0,): TWO_PI, (1,): math.pi}, symmetrize=False)


def test_mismatched_partner_weights():
    with pytest.raises(KernelError):
        torus_kernel_from_modes(1, {(1,): 1.0, (-1,): 2.0})


def test_constant_kernel_is_one():
    k = torus_kernel_from_modes(1, {(0,): TWO_PI})
    assert np.allclose(eval_kernel(k, np.linspace(0, 6, 11)), 1.0)


def test_gradient_against_finite_difference(ref):
    x = np.linspace(0.1, 6.0, 9)
    h = 1e-6
    fd = (eval_kernel(ref, x + h) - eval_kernel(ref, x - h)) / (2 * h)
    assert np.allclose(kernel_gradient(ref, x), fd, atol=1e-8)
    assert np.allclose(kernel_gradient(ref, x), -np.sin(x), atol=1e-14)


def test_2d_kernel_eval_and_gradient():
    k = torus_kernel_from_modes(2, {(0, 0): 4 * math.pi**2, (1, 0): 2 * math.pi**2, (0, 1): math.pi**2})
    p = np.array([[0.3, 1.1], [2.0, -0.5]])
    expected = 1 + np.cos(p[:, 0]) + 0.5 * np.cos(p[:, 1])
    assert np.allclose(eval_kernel(k, p), expected, atol=1e-14)
    g = kernel_gradient(k, p)
    assert np.allclose(g[:, 0], -np.sin(p[:, 0]), atol=1e-14)
    assert np.allclose(g[:, 1], -0.5 * np.sin(p[:, 1]), atol=1e-14)


def test_phi_norm_examples(ref):
    zero = ModeVector.from_mapping({(0,): 0, (1,): 0, (-1,): 0})
    assert phi_norm_sq(ref, zero) == 0
    mv = ModeVector.from_mapping({(0,): 0, (1,): (1 - 1j) / math.sqrt(2), (-1,): (1 + 1j) / math.sqrt(2)})
    assert phi_norm_sq(ref, mv) == pytest.approx(1.0, abs=1e-15)
    const = constant_kernel(1)
    assert phi_norm_sq(const, ModeVector.from_mapping({(0,): 0})) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_phi_norm_is_nonnegative(parts):
    from mfluct.kernels import one_plus_cos

    z = complex(*parts)
    mv = ModeVector.from_mapping({(0,): 0.7, (1,): z, (-1,): z.conjugate()})
    assert phi_norm_sq(one_plus_cos(), mv) >= 0


def test_series_coefficients(ref):
    assert phi_series_coeff(ref, 0) == pytest.approx(1.0)
    assert phi_series_coeff(ref, 1) == pytest.approx(1 / math.sqrt(2))
    assert phi_series_coeff(constant_kernel(1), 0) == pytest.approx(1.0)
    assert phi_series_coeff(ref, 2) == 0.0
    with pytest.raises(IndexOutOfSupport):
        phi_series_coeff(ref, 2, strict=True)


def test_mode_ordering_positions():
    order = mode_ordering(1, 4)
    assert order == [(1,), (2,), (3,), (4,)]
    for n, k in enumerate(mode_ordering(2, 6), start=1):
        assert mode_position(k) == n


def test_gaussian_line_kernel_transform():
    k = gaussian_line_kernel(1.0, 1.0)
    x = np.array([0.0, 0.7, 1.5, 3.0])
    assert np.allclose(k.inverse_transform(x), np.exp(-x**2 / 2), atol=1e-8)
    assert np.allclose(k.gradient(x), -x * np.exp(-x**2 / 2))
