import math

import numpy as np
import pytest

from mfluct.equilibrium import (
    DensityGrid,
    NoConvergence,
    confining_half_width,
    effective_potential,
    free_energy,
    line_grid,
    solve_gibbs_fixed_point,
    torus_grid,
    uniform_density,
)
from mfluct.kernels import constant_kernel, eval_kernel, gaussian_line_kernel

HARMONIC = lambda x: 0.5 * np.asarray(x) ** 2  # noqa: E731


def _ref_w(ref):
    return lambda d: eval_kernel(ref, d)


def test_free_energy_uniform_torus(ref):
    rep = free_energy(uniform_density(torus_grid(128)), None, _ref_w(ref), 2.0)
    assert rep.energy == pytest.approx(0.5, abs=1e-12)
    assert rep.entropy == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_free_energy_without_interaction_is_entropy():
    g = line_grid(6.0, 400)
    rho = DensityGrid(g, np.exp(-np.abs(g.x)) / 2)
    rep = free_energy(rho, None, None, 1.0)
    assert rep.total == pytest.approx(rep.entropy)


def test_free_energy_standard_gaussian():
    g = line_grid(10.0, 2000)
    rho = DensityGrid(g, np.exp(-g.x**2 / 2) / math.sqrt(2 * math.pi))
    rep = free_energy(rho, HARMONIC, None, 1.0)
    assert rep.energy == pytest.approx(0.5, abs=1e-8)
    assert rep.entropy == pytest.approx(-0.5 * math.log(2 * math.pi * math.e), abs=1e-8)


def test_uniform_fixed_point_on_torus(ref):
    fp = solve_gibbs_fixed_point(None, _ref_w(ref), 2.0, torus_grid(128))
    assert np.allclose(fp.density.rho, 1 / (2 * math.pi), rtol=0, atol=1e-14)


def test_harmonic_without_interaction_is_gaussian():
    g = line_grid(10.0, 1000)
    fp = solve_gibbs_fixed_point(HARMONIC, None, 1.0, g, tol=1e-12)
    exact = np.exp(-g.x**2 / 2)
    exact /= exact.sum() * g.h
    assert np.max(np.abs(fp.density.rho - exact)) < 1e-12


def test_gaussian_interaction_fixed_point():
    k = gaussian_line_kernel()
    g = line_grid(8.0, 400)
    fp = solve_gibbs_fixed_point(HARMONIC, k, 1.0, g, tol=1e-9)
    assert fp.residual < 1e-8
    assert fp.density.mass() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(fp.free_energies) <= 1e-12)
    # symmetric potential and kernel give an even density
    assert np.allclose(fp.density.rho, fp.density.rho[::-1], atol=1e-12)


def test_no_convergence_reported():
    k = gaussian_line_kernel()
    with pytest.raises(NoConvergence) as exc:
        solve_gibbs_fixed_point(HARMONIC, k, 1.0, line_grid(8.0, 200), tol=1e-14, max_iter=3)
    assert exc.value.iterations == 3 and exc.value.residual > 0


def test_non_confining_rejected():
    with pytest.raises(ValueError):
        solve_gibbs_fixed_point(None, None, 1.0, line_grid(5.0, 100))


def test_effective_potential_examples(ref):
    u = effective_potential(None, _ref_w(ref), uniform_density(torus_grid(64)))
    assert np.allclose(u, 1.0, atol=1e-13)
    g = line_grid(4.0, 50)
    assert np.allclose(effective_potential(HARMONIC, None, DensityGrid(g, np.ones(50))), g.x**2 / 2)
    c = constant_kernel(1)
    assert np.allclose(effective_potential(None, lambda d: eval_kernel(c, d), uniform_density(torus_grid(32))), 1.0)


def test_confining_half_width():
    L = confining_half_width(HARMONIC, 1.0)
    assert math.exp(-L**2 / 2) < 1e-14
