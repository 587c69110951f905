import math

import numpy as np
import pytest

from mfluct.kernels import TWO_PI, constant_kernel, gaussian_line_kernel, phi_norm_sq, torus_kernel_from_modes
from mfluct.particle_sim import (
    ParticleState,
    SimConfig,
    empirical_fluctuation,
    euler_maruyama_step,
    harmonic_potential,
    init_uniform,
    interaction_drift,
    mode_sums,
    pairwise_drift,
    simulate_batch,
    simulate_replica,
)

HALF_PI = math.pi / 2


def _cfg(ref, **kw):
    base = dict(n_particles=50, beta=2.0, dt=0.01, t_final=0.2, sign=1, kernel=ref, record_times=(0.0, 0.1, 0.2))
    base.update(kw)
    return SimConfig(**base)


def test_init_uniform_deterministic_and_in_range():
    a = init_uniform(4, 1, np.random.default_rng(7)).positions
    b = init_uniform(4, 1, np.random.default_rng(7)).positions
    assert np.array_equal(a, b)
    x = init_uniform(10_000, 2, np.random.default_rng(1)).positions
    assert x.min() >= 0 and x.max() < TWO_PI


def test_init_uniform_clt_bound():
    n = 10_000
    fails = sum(
        abs(np.mean(np.exp(1j * init_uniform(n, 1, np.random.default_rng(s)).positions))) > 4 / math.sqrt(n)
        for s in range(100)
    )
    assert fails <= 1


def test_init_uniform_needs_two():
    with pytest.raises(ValueError):
        init_uniform(1, 1, np.random.default_rng(0))


def test_mode_sums_examples(ref):
    s = mode_sums(np.array([[0.0], [HALF_PI]]), ref)
    assert s[(1,)] == pytest.approx(1 - 1j)
    assert s[(0,)] == pytest.approx(2)
    assert mode_sums(np.array([[0.0], [math.pi]]), ref)[(1,)] == pytest.approx(0, abs=1e-15)


def test_drift_two_particles(ref):
    x = np.array([[0.0], [HALF_PI]])
    # -(1/2) sum_j grad Phi(0 - x_j) with grad Phi = -sin
    assert interaction_drift(x, ref, +1)[0, 0] == pytest.approx(-0.5)
    assert interaction_drift(x, ref, -1)[0, 0] == pytest.approx(+0.5)
    assert np.allclose(interaction_drift(x, ref, +1), pairwise_drift(x, ref, +1), atol=1e-15)


def test_coincident_particles_have_no_drift(ref):
    x = np.full((5, 1), 1.234)
    assert np.allclose(interaction_drift(x, ref, 1), 0, atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2])
def test_fourier_drift_matches_pairwise(dim, rng):
    if dim == 1:
        k = torus_kernel_from_modes(1, {(0,): 1.0, (1,): 2.0, (3,): 0.5})
    else:
        k = torus_kernel_from_modes(2, {(1, 0): 1.0, (1, -2): 0.3, (0, 1): 2.0})
    x = rng.uniform(0, TWO_PI, (40, dim))
    for sign in (-1, 1):
        assert np.allclose(interaction_drift(x, k, sign), pairwise_drift(x, k, sign), atol=1e-13)


def test_line_drift_matches_pairwise(rng):
    k = gaussian_line_kernel()
    x = rng.normal(size=(30, 1))
    assert np.allclose(interaction_drift(x, k, 1, domain="line"), pairwise_drift(x, k, 1), atol=1e-14)


def test_em_brownian_increment_variance():
    n, dt, beta = 100_000, 0.01, 2.0
    cfg = SimConfig(n_particles=n, beta=beta, dt=dt, t_final=dt, sign=0, kernel=None, domain="line")
    x0 = np.zeros((n, 1))
    out = euler_maruyama_step(ParticleState(x0), cfg, np.random.default_rng(3))
    d = out.positions[:, 0]
    target = 2 * dt / beta
    se = target * math.sqrt(2 / (n - 1))
    assert abs(d.var(ddof=1) - target) <= 3 * se
    assert out.time == pytest.approx(dt)


def test_em_harmonic_drift_on_line():
    cfg = SimConfig(
        n_particles=2, beta=1e12, dt=0.01, t_final=0.01, sign=0, kernel=None, domain="line",
        potential=harmonic_potential(2.0), check_stability=False,
    )
    x = np.array([[1.0], [-2.0]])
    out = euler_maruyama_step(ParticleState(x), cfg, np.random.default_rng(0)).positions
    assert np.allclose(out, x * (1 - 0.02), atol=1e-5)


def test_config_validation(ref):
    with pytest.raises(ValueError):
        _cfg(ref, beta=math.inf)
    with pytest.raises(ValueError):
        _cfg(ref, sign=2)
    with pytest.raises(ValueError):
        _cfg(ref, n_particles=1)
    with pytest.raises(ValueError):
        _cfg(ref, dt=0.5)  # above 0.1 min(1, beta, 1/C)
    with pytest.raises(ValueError):
        _cfg(ref, record_times=(0.0, 0.105))
    with pytest.raises(ValueError):
        _cfg(ref, record_times=(0.1, 0.0))


def test_empirical_fluctuation_example(ref):
    fl = empirical_fluctuation(np.array([[0.0], [HALF_PI]]), ref)
    assert fl[(1,)] == pytest.approx((1 - 1j) / math.sqrt(2))
    assert fl[(-1,)] == pytest.approx((1 + 1j) / math.sqrt(2))
    assert fl[(0,)] == 0
    assert phi_norm_sq(ref, fl) == pytest.approx(1.0)


def test_fused_and_numpy_steppers_agree(ref):
    cfg = _cfg(ref)
    a = simulate_batch(cfg, [np.random.default_rng(i) for i in range(3)], fused=True)
    b = simulate_batch(cfg, [np.random.default_rng(i) for i in range(3)], fused=False)
    assert np.allclose(a.norms, b.norms, rtol=1e-10, atol=1e-12)


def test_replica_independent_of_batch(ref):
    cfg = _cfg(ref)
    batch = simulate_batch(cfg, [np.random.default_rng(i) for i in range(4)])
    alone = simulate_batch(cfg, [np.random.default_rng(2)])
    assert np.array_equal(batch.norms[2], alone.norms[0])


def test_simulate_replica_records(ref):
    out = simulate_replica(_cfg(ref), np.random.default_rng(0))
    assert [t for t, _, _ in out] == pytest.approx([0.0, 0.1, 0.2])
    for _, modes, nrm in out:
        assert phi_norm_sq(ref, modes) == pytest.approx(nrm)


def test_constant_kernel_gives_zero_norm():
    k = constant_kernel(1)
    cfg = SimConfig(n_particles=20, beta=1, dt=0.01, t_final=0.05, sign=1, kernel=k, record_times=(0.0, 0.05))
    tr = simulate_batch(cfg, [np.random.default_rng(0)])
    assert np.all(tr.norms == 0)


def test_baseline_expectation_small(ref):
    # E||eta_N||^2 = Phi(0) - Phi_0 = 1 for independent uniform particles
    cfg = _cfg(ref, sign=0, n_particles=100, record_times=(0.0, 0.2))
    tr = simulate_batch(cfg, [np.random.default_rng(1000 + i) for i in range(400)])
    m = tr.norms.mean(axis=0)
    se = tr.norms.std(axis=0, ddof=1) / math.sqrt(400)
    assert np.all(np.abs(m - 1) <= 3 * se)
