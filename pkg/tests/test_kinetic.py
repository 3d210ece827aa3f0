import math

import numpy as np
import pytest
import scipy.stats

from kinwave.dispersion import build_dispersion, couplings_nn
from kinwave.errors import ConfigError
from kinwave.initial import PointSource, WKBPacket
from kinwave.kinetic import (
    build_collision_table,
    characteristic_function,
    default_beta,
    dyson_characteristic,
    gate_function,
    k_simplex,
    pair_rate,
    sample_initial,
    sample_jump,
    simulate,
    theta_plus,
    truncation_tail,
)
from kinwave.wigner import Observable

C = couplings_nn(1.0)
GRID = build_dispersion(C, 12)
TABLE = build_collision_table(GRID, beta=0.3, xi2=1.0)
PACKET = WKBPacket(k0=(0.125, 0.0, 0.0), sigma=0.5)
ZERO = Observable(p=(0.0, 0.0, 0.0), n=(0, 0, 0))


def test_table_validation():
    with pytest.raises(ConfigError):
        build_collision_table(GRID, beta=0.0)
    with pytest.raises(ConfigError):
        build_collision_table(GRID, beta=1.5)
    with pytest.raises(ConfigError):
        build_collision_table(GRID, beta=0.3, xi2=-1.0)
    assert 0.0 < default_beta(GRID) <= 1.0


def test_rates_positive_and_bounded():
    assert TABLE.sigma_min > 0.0
    # sigma(k) = avg_k' 2 xi2 beta omega'^2 / ((w - w')^2 + beta^2)
    #         <= 2 xi2 omega_max^2 / beta
    assert TABLE.sigma_max <= 2.0 * GRID.omega_max**2 * TABLE.xi2 / TABLE.beta


def test_total_rate_is_the_pair_rate_average():
    idx = np.arange(GRID.n_points)
    rng = np.random.default_rng(0)
    for k in rng.integers(0, GRID.n_points, size=5):
        direct = float(np.mean(pair_rate(TABLE, k, idx)))
        assert TABLE.sigma_flat[k] == pytest.approx(direct, rel=5e-4)


def test_detailed_balance_exact():
    # omega(k)^2 R(k, k') is symmetric by inspection of the rate formula
    rng = np.random.default_rng(1)
    ii = rng.integers(0, GRID.n_points, size=300)
    jj = rng.integers(0, GRID.n_points, size=300)
    w = GRID.omega_flat
    fwd = w[ii] ** 2 * pair_rate(TABLE, ii, jj)
    bwd = w[jj] ** 2 * pair_rate(TABLE, jj, ii)
    np.testing.assert_allclose(fwd, bwd, rtol=1e-12)


def test_sample_jump_distribution():
    """Chi-square of rejection-sampled jump targets against the exact
    normalized row of the rate kernel, pooled to >= 5 expected per cell."""
    k_from = GRID.index_of(np.array([0.25, 0.0, 0.0]))
    n = 20000
    rng = np.random.default_rng(11)
    hits = np.bincount(
        sample_jump(TABLE, np.full(n, k_from), rng), minlength=GRID.n_points
    )
    probs = pair_rate(TABLE, k_from, np.arange(GRID.n_points))
    probs = probs / probs.sum()
    expected = probs * n

    order = np.argsort(expected)
    obs_m, exp_m = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += hits[i]
        acc_e += expected[i]
        if acc_e >= 5.0:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0:
        obs_m[-1] += acc_o
        exp_m[-1] += acc_e
    _, p = scipy.stats.chisquare(obs_m, exp_m)
    assert p > 0.01


def test_sample_initial_mass_and_support():
    rng = np.random.default_rng(5)
    ens = sample_initial(PACKET, 5000, PACKET.mass, TABLE, rng)
    assert ens.n == 5000
    assert ens.weights.sum() == pytest.approx(PACKET.mass, rel=1e-12)
    # packet wavevectors concentrate near k0 (sigma = 0.5: spread ~ 1/(2 pi))
    k = ens.k()
    spread = np.abs((k - np.array([0.125, 0.0, 0.0]) + 0.5) % 1.0 - 0.5)
    assert np.quantile(spread.max(axis=1), 0.9) < 0.45


def test_point_source_sampling_sits_at_the_origin():
    src = PointSource.from_dict({(0, 0, 0): 1.0 + 0j})
    rng = np.random.default_rng(6)
    ens = sample_initial(src, 2000, src.mass, TABLE, rng)
    assert np.max(np.abs(ens.x)) == 0.0


def test_simulate_conserves_mass_and_counts_collisions():
    rng = np.random.default_rng(7)
    ens = sample_initial(PACKET, 4000, PACKET.mass, TABLE, rng)
    w_before = ens.weights.copy()
    out, counts = simulate(ens, TABLE, 0.8, rng)
    np.testing.assert_array_equal(out.weights, w_before)
    # mean collisions within 4 sigma of the rate range
    mean_rate = counts.mean() / 0.8
    assert TABLE.sigma_min - 0.1 <= mean_rate <= TABLE.sigma_max + 0.1
    with pytest.raises(ConfigError):
        simulate(ens, TABLE, -1.0, rng)


def test_characteristic_function_mass_channel():
    rng = np.random.default_rng(8)
    ens = sample_initial(PACKET, 3000, PACKET.mass, TABLE, rng)
    est = characteristic_function(ens, [ZERO])[0]
    assert est.mean == pytest.approx(PACKET.mass, rel=1e-12)
    assert est.stderr_re < 1e-12


def test_k_simplex_level_one_and_two():
    w1, w2 = 1.3 - 0.2j, 0.4 - 0.7j
    t = 1.7
    assert k_simplex(t, [w1]) == pytest.approx(np.exp(-1j * t * w1))
    exact2 = (np.exp(-1j * t * w2) - np.exp(-1j * t * w1)) / (1j * (w1 - w2))
    assert k_simplex(t, [w1, w2]) == pytest.approx(exact2, rel=1e-10)
    # equal frequencies: K_2 = t exp(-i t w)
    assert k_simplex(t, [w1, w1]) == pytest.approx(t * np.exp(-1j * t * w1), rel=1e-10)


def test_k_simplex_validation():
    assert k_simplex(0.0, [1.0]) == 1.0
    assert k_simplex(0.0, [1.0, 2.0]) == 0.0
    with pytest.raises(ConfigError):
        k_simplex(1.0, [])
    with pytest.raises(ConfigError):
        k_simplex(1.0, np.ones(7))
    with pytest.raises(ConfigError):
        k_simplex(-1.0, [1.0])


def test_truncation_tail_decreases():
    lam = 2.5
    tails = [truncation_tail(lam, m) for m in range(2, 12, 2)]
    assert all(a > b for a, b in zip(tails, tails[1:]))
    # first omitted term dominates: tail(m) >= lam^(m+1)/(m+1)!
    for m, t in zip(range(2, 12, 2), tails):
        assert t >= lam ** (m + 1) / math.factorial(m + 1)


def test_theta_plus_approaches_half_the_rate():
    """Re g_++(k; omega(k) + i beta) -> sigma_beta(k)/2 as beta -> 0+, at
    each beta against the rate built with that beta."""
    k = np.array([0.25, 0.0, 0.0])        # exactly on the M = 12 grid
    idx = GRID.index_of(k)
    gaps = []
    for b in (0.4, 0.2, 0.1):
        half = build_collision_table(GRID, beta=b).sigma_flat[idx] / 2.0
        gaps.append(abs(theta_plus(GRID, k, b).real - half) / half)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.15
    with pytest.raises(ConfigError):
        theta_plus(GRID, k, 0.0)
    with pytest.raises(ConfigError):
        gate_function(GRID, k, 1.0 + 0.1j, 2, 1)


def test_dyson_characteristic_small():
    """Truncated collision expansion agrees with the jump simulation within
    the reported tail bound plus MC noise, and the tail is tighter than the
    crude factorial bound."""
    rng = np.random.default_rng(21)
    table = build_collision_table(GRID, beta=0.3, xi2=0.25)
    t_bar = 0.5
    ests, tail, tail_ok = dyson_characteristic(
        PACKET, table, t_bar, [ZERO], m_max=6, n_mc=4000,
        rng=np.random.default_rng(22), tail_tol=5e-3,
    )
    assert tail > 0.0
    assert tail < PACKET.mass * truncation_tail(table.sigma_max * t_bar, 6)
    assert tail_ok
    # two more orders shrink the reported bound
    _, tail10, _ = dyson_characteristic(
        PACKET, table, t_bar, [ZERO], m_max=8, n_mc=4000,
        rng=np.random.default_rng(22),
    )
    assert tail10 < tail

    ens = sample_initial(PACKET, 40000, PACKET.mass, table, rng)
    ens, _ = simulate(ens, table, t_bar, rng)
    ref = characteristic_function(ens, [ZERO])[0]
    gap = abs(ests[0].mean - ref.mean)
    budget = tail + 3.0 * math.hypot(ests[0].stderr_re, ests[0].stderr_im) + 3.0 * ref.stderr_re
    assert gap <= budget


def test_dyson_validation():
    with pytest.raises(ConfigError):
        dyson_characteristic(PACKET, TABLE, 0.5, [ZERO], m_max=-1)
    with pytest.raises(ConfigError):
        dyson_characteristic(PACKET, TABLE, 0.5, [ZERO], n_mc=10)
    with pytest.raises(ConfigError):
        dyson_characteristic(PACKET, TABLE, -0.5, [ZERO])
