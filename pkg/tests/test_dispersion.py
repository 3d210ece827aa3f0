import numpy as np
import pytest

from kinwave.dispersion import (
    CrossingEstimate,
    build_dispersion,
    couplings_nn,
    couplings_nn_squared,
    crossing_integral_estimate,
    crossing_sweep,
    decay_exponent,
    find_critical_points,
    validate_couplings,
)
from kinwave.errors import ConfigError


def test_nn_band_edges():
    # omega^2 = 1 + 2 sum (1 - cos): min 1 at k = 0, max sqrt(13) at (1/2,1/2,1/2)
    c = couplings_nn(1.0)
    assert c.omega(np.zeros(3)) == pytest.approx(1.0, abs=1e-14)
    assert c.omega(np.full(3, 0.5)) == pytest.approx(np.sqrt(13.0), abs=1e-14)
    g = build_dispersion(c, 16)
    assert g.omega_min == pytest.approx(1.0, abs=1e-12)
    assert g.omega_max == pytest.approx(np.sqrt(13.0), abs=1e-12)


def test_gradient_matches_finite_differences():
    c = couplings_nn(1.3)
    g = build_dispersion(c, 8)
    rng = np.random.default_rng(42)
    k = rng.random((50, 3))
    h = 1e-6
    for axis in range(3):
        kp = k.copy()
        km = k.copy()
        kp[:, axis] += h
        km[:, axis] -= h
        fd = (c.omega(kp) - c.omega(km)) / (2 * h)
        np.testing.assert_allclose(c.grad_omega(k)[:, axis], fd, atol=1e-7)
    assert g.max_group_speed > 0.0


def test_symbol_positivity_guard():
    # a single off-site coupling has a sign-indefinite symbol
    from kinwave.io import couplings_from_obj

    c = couplings_from_obj([{"offset": [1, 0, 0], "value": 1.0}])
    with pytest.raises(ConfigError):
        build_dispersion(c, 8)


def test_validate_couplings_reports():
    rep = validate_couplings(couplings_nn(1.0))
    assert rep.ok
    assert rep.positive_symbol and rep.symmetric and rep.nonzero_offsite
    assert rep.min_alpha_hat == pytest.approx(1.0, rel=1e-6)
    assert validate_couplings(couplings_nn_squared(1.0)).ok


def test_critical_points_nn():
    # 8 critical values of omega_nn on the torus: one per corner of {0, 1/2}^3
    g = build_dispersion(couplings_nn(1.0), 16)
    pts = find_critical_points(g)
    assert len(pts) == 8
    assert all(p.converged for p in pts)
    assert all(not p.degenerate for p in pts)
    omegas = sorted(p.omega for p in pts)
    assert omegas[0] == pytest.approx(1.0, abs=1e-9)
    assert omegas[-1] == pytest.approx(np.sqrt(13.0), abs=1e-9)


def test_decay_exponent_guards():
    g = build_dispersion(couplings_nn(1.0), 8)
    with pytest.raises(ConfigError):
        decay_exponent(g, 1.0, 5.0, 2.0)
    with pytest.raises(ConfigError):
        decay_exponent(g, 1.0, 1.0, 4.0, samples=3)
    with pytest.raises(ConfigError):
        # aliasing guard: t_max far beyond what M = 8 resolves
        decay_exponent(g, 1.0, 1.0, 500.0)


def test_decay_exponent_free_wave():
    # on a well-resolved grid the oscillatory sum decays with a negative power
    g = build_dispersion(couplings_nn(1.0), 32)
    fit = decay_exponent(g, 1.0, 2.0, 16.0)
    assert fit.n_used >= 30
    assert fit.slope < -1.0
    assert fit.stderr < 0.2


def test_crossing_estimate_bounded_at_beta_one():
    c = couplings_nn(1.0)
    est = crossing_integral_estimate(
        c, alpha=(0.3, 0.1, 0.2), beta=1.0, signs=(1, -1, 1),
        u=(0.2, 0.0, 0.1), n_samples=2000, seed=1,
    )
    assert isinstance(est, CrossingEstimate)
    assert 0.0 < est.value <= 1.0
    assert est.stderr > 0.0


def test_crossing_estimate_validation():
    c = couplings_nn(1.0)
    with pytest.raises(ConfigError):
        crossing_integral_estimate(c, (0.1, 0.1, 0.1), 0.0, (1, 1, 1), (0, 0, 0))
    with pytest.raises(ConfigError):
        crossing_integral_estimate(c, (0.1, 0.1, 0.1), 0.5, (1, 1, 1), (0, 0, 0),
                                   n_samples=10)


def test_crossing_sweep_exponent_above_minus_one():
    """The three-resolvent integral grows slower than 1/beta: the fitted
    log-log exponent sits above -1 by a wide margin."""
    c = couplings_nn(1.0)
    ests, expo, se = crossing_sweep(
        c, alpha=(0.1, 0.2, 0.3), signs=(1, -1, 1), u=(0.25, 0.125, 0.0),
        betas=(0.2, 0.1, 0.05), n_samples=4000, seed=3,
    )
    assert len(ests) == 3
    assert expo > -1.0 + 5 * se
    with pytest.raises(ConfigError):
        crossing_sweep(c, (0.1, 0.2, 0.3), (1, -1, 1), (0, 0, 0), betas=(0.1, 0.05))


def test_deterministic_estimates():
    c = couplings_nn(1.0)
    a = crossing_integral_estimate(c, (0.3, 0.1, 0.2), 0.5, (1, -1, 1),
                                   (0.2, 0.0, 0.1), n_samples=500, seed=9)
    b = crossing_integral_estimate(c, (0.3, 0.1, 0.2), 0.5, (1, -1, 1),
                                   (0.2, 0.0, 0.1), n_samples=500, seed=9)
    assert a.value == b.value and a.stderr == b.stderr
