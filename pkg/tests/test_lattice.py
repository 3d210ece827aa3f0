import numpy as np
import pytest

from kinwave.dispersion import couplings_nn
from kinwave.errors import ConfigError
from kinwave.initial import PointSource, WKBPacket
from kinwave.lattice import (
    DisorderField,
    LatticeState,
    energy,
    envelope_mass_outside,
    evolve,
    evolve_free_spectral,
    from_wavefunction,
    point_state,
    sample_disorder,
    signed_axis,
    to_wavefunction,
    wavefunction_norm_squared,
    wkb_state,
)

C = couplings_nn(1.0)


def random_psi(L, seed):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(L, L, L)) + 1j * rng.normal(size=(L, L, L))) / L**1.5


def test_signed_axis():
    np.testing.assert_array_equal(signed_axis(4), [0.0, 1.0, -2.0, -1.0])
    np.testing.assert_array_equal(signed_axis(5), [0.0, 1.0, 2.0, -2.0, -1.0])


def test_sample_disorder_statistics():
    d = sample_disorder(16, "rademacher", seed=5)
    assert set(np.unique(d.xi)) == {-1.0, 1.0}
    assert d.xi_bar == 1.0
    u = sample_disorder(24, "uniform", seed=5)
    assert np.max(np.abs(u.xi)) < np.sqrt(3.0)
    # unit variance within MC noise on 24^3 sites
    assert abs(u.xi.var() - 1.0) < 0.02
    assert abs(u.xi.mean()) < 0.02
    with pytest.raises(ConfigError):
        sample_disorder(8, "gaussian", seed=0)


def test_wave_map_roundtrip_disordered():
    """from_wavefunction with the disorder given inverts to_wavefunction
    exactly, realization by realization."""
    L, eps = 12, 0.3
    psi = random_psi(L, 7)
    d = sample_disorder(L, "rademacher", seed=11)
    state = from_wavefunction(psi, C, d, eps)
    back = to_wavefunction(state, d, eps, C)
    np.testing.assert_allclose(back, psi, atol=1e-13)


def test_wave_map_substitution_drops_mass_correction():
    # without the disorder the inverse uses unit masses: v = 2 Im psi
    L, eps = 8, 0.25
    psi = random_psi(L, 3)
    state = from_wavefunction(psi, C)
    np.testing.assert_allclose(state.v, 2.0 * psi.imag, atol=1e-15)


def test_energy_equals_norm_squared():
    L, eps = 12, 0.2
    psi = random_psi(L, 19)
    d = sample_disorder(L, "uniform", seed=2)
    state = from_wavefunction(psi, C, d, eps)
    e = energy(state, d, eps, C)
    assert e == pytest.approx(wavefunction_norm_squared(psi), rel=1e-12)


def test_evolve_conserves_energy():
    L, eps = 12, 0.4
    psi = random_psi(L, 23)
    d = sample_disorder(L, "rademacher", seed=29)
    state = from_wavefunction(psi, C, d, eps)
    e0 = energy(state, d, eps, C)
    out = evolve(state, d, eps, C, 5.0)
    e1 = energy(out, d, eps, C)
    assert abs(e1 - e0) / e0 < 1e-4
    # input state untouched
    np.testing.assert_array_equal(state.q, from_wavefunction(psi, C, d, eps).q)


def test_evolve_matches_spectral_on_clean_lattice():
    """Verlet with dt refinement converges to the exact free evolution."""
    L = 8
    psi = random_psi(L, 31)
    clean = DisorderField(
        xi=np.zeros((L, L, L)), xi_bar=1.0, distribution="rademacher", seed=0
    )
    state = from_wavefunction(psi, C, clean, 0.25)
    t = 2.0
    exact = evolve_free_spectral(LatticeState(q=state.q.copy(), v=state.v.copy()), C, t)
    coarse = evolve(state, clean, 0.25, C, t, dt=0.02)
    fine = evolve(state, clean, 0.25, C, t, dt=0.01)
    err_c = np.max(np.abs(coarse.q - exact.q))
    err_f = np.max(np.abs(fine.q - exact.q))
    assert err_f < err_c
    assert err_c / err_f == pytest.approx(4.0, rel=0.15)   # second order in dt


def test_mass_positivity_guard():
    L = 8
    d = sample_disorder(L, "rademacher", seed=1)
    state = LatticeState(q=np.zeros((L, L, L)), v=np.zeros((L, L, L)))
    with pytest.raises(ConfigError):
        energy(state, d, 1.0, C)            # sqrt(eps) xi_bar = 1


def test_wkb_state_mass_and_scaling():
    packet = WKBPacket(k0=(0.125, 0.0, 0.0), sigma=0.5)
    L, eps = 32, 0.25
    psi = wkb_state(L, eps, packet.envelope, packet.phase)
    # Riemann sum eps^3 sum |h|^2 -> (sqrt(pi) sigma)^3
    assert np.sum(np.abs(psi) ** 2) == pytest.approx(packet.mass, rel=1e-6)
    assert packet.mass == pytest.approx((np.sqrt(np.pi) * 0.5) ** 3)


def test_wkb_state_warns_when_packet_leaks():
    packet = WKBPacket(k0=(0.0, 0.0, 0.0), sigma=4.0)
    with pytest.warns(UserWarning, match="outside the box"):
        wkb_state(8, 0.5, packet.envelope, packet.phase)
    assert envelope_mass_outside(8, 0.5, packet.envelope) > 0.01


def test_point_state_placement():
    amps = {(0, 0, 0): 1.0 + 0j, (1, -2, 3): 0.5j}
    psi = point_state(16, 0.5, amps)
    assert psi[0, 0, 0] == 1.0
    assert psi[1, -2 % 16, 3] == 0.5j
    assert np.count_nonzero(psi) == 2
    with pytest.raises(ConfigError):
        point_state(8, 0.5, {(4, 0, 0): 1.0})        # offset at half the box


def test_point_source_mass_roundtrip():
    amps = {(0, 0, 0): 1.0 + 1.0j, (2, 0, -1): -0.5 + 0j}
    src = PointSource.from_dict(amps)
    assert src.mass == pytest.approx(sum(abs(v) ** 2 for v in amps.values()))
    assert src.as_dict() == amps


def test_wkb_packet_validation():
    with pytest.raises(ConfigError):
        WKBPacket(k0=(0.1, 0.0, 0.0), sigma=0.0)
    p = WKBPacket(k0=(0.1, 0.2, 0.3), sigma=1.5)
    assert p.diameter == pytest.approx(9.0)
