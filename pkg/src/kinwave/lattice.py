"""Disordered harmonic lattice: states, energy, wave dynamics.

Sites live on a periodic box {0..L-1}^3, re-centred to signed coordinates
[-L/2, L/2)^3 where positions matter.  A realization of the disorder rescales
the site masses to (1 + sqrt(eps) xi_y)^-2 with xi i.i.d., mean zero, bounded
by xi_bar; mass positivity requires sqrt(eps) * xi_bar < 1.  The dynamics is

    dq_y/dt = v_y,      (1 + sqrt(eps) xi_y)^-2 dv_y/dt = -(alpha * q)_y,

integrated by velocity Verlet with the convolution evaluated spectrally.
The complex wave variable psi_y = (Omega q + i (1+sqrt(eps) xi)^-1 v)_y / 2
(Omega = Fourier multiplier by omega(k)) satisfies 2 sum |psi|^2 = energy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dispersion import Couplings
from .errors import ConfigError, StabilityError

__all__ = [
    "DisorderField",
    "LatticeState",
    "sample_disorder",
    "signed_axis",
    "energy",
    "evolve",
    "evolve_free_spectral",
    "to_wavefunction",
    "from_wavefunction",
    "wavefunction_norm_squared",
    "wkb_state",
    "point_state",
    "envelope_mass_outside",
]

XI_BAR = {"uniform": float(np.sqrt(3.0)), "rademacher": 1.0}


@dataclass(frozen=True)
class DisorderField:
    """One realization of the i.i.d. site disorder (unit variance, mean zero)."""

    xi: np.ndarray
    xi_bar: float
    distribution: str
    seed: int


@dataclass
class LatticeState:
    q: np.ndarray   # real displacements, shape (L, L, L)
    v: np.ndarray   # real velocities, shape (L, L, L)

    @property
    def L(self) -> int:
        return self.q.shape[0]


def sample_disorder(L: int, distribution: str, seed: int) -> DisorderField:
    if distribution not in XI_BAR:
        raise ConfigError(f"unknown disorder distribution {distribution!r}")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        xi = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(L, L, L))
    else:
        xi = (2.0 * rng.integers(0, 2, size=(L, L, L)) - 1.0).astype(np.float64)
    return DisorderField(xi=xi, xi_bar=XI_BAR[distribution], distribution=distribution, seed=seed)


def signed_axis(L: int) -> np.ndarray:
    """Site coordinates along one axis, re-centred: 0, 1, .., L/2-1, -L/2, .., -1."""
    return np.fft.fftfreq(L, d=1.0 / L)


@lru_cache(maxsize=16)
def _multipliers(c: Couplings, L: int):
    """Symbol, dispersion and their rfft slices on the box grid k = m/L."""
    axis = np.arange(L, dtype=np.float64) / L
    k1, k2, k3 = np.meshgrid(axis, axis, axis, indexing="ij")
    kpts = np.stack([k1, k2, k3], axis=-1)
    alpha = c.alpha_hat(kpts)
    if np.any(alpha <= 0.0):
        raise ConfigError("symbol not positive on the box grid")
    omega = np.sqrt(alpha)
    half = L // 2 + 1
    return {
        "alpha": alpha,
        "omega": omega,
        "alpha_r": np.ascontiguousarray(alpha[..., :half]),
        "omega_r": np.ascontiguousarray(omega[..., :half]),
        "omega_max": float(omega.max()),
    }


def _check_mass_positivity(disorder: DisorderField, eps: float) -> None:
    if eps < 0.0:
        raise ConfigError("eps must be nonnegative")
    if np.sqrt(eps) * disorder.xi_bar >= 1.0:
        raise ConfigError(
            f"sqrt(eps)*xi_bar = {np.sqrt(eps) * disorder.xi_bar:.3f} >= 1; "
            "masses would not stay positive"
        )


def energy(state: LatticeState, disorder: DisorderField, eps: float, c: Couplings) -> float:
    """Total energy: kinetic with disordered masses plus the spectral quadratic form."""
    _check_mass_positivity(disorder, eps)
    L = state.L
    mul = _multipliers(c, L)
    mass = (1.0 + np.sqrt(eps) * disorder.xi) ** -2
    kinetic = 0.5 * float(np.sum(mass * state.v**2))
    qhat = np.fft.fftn(state.q)
    potential = 0.5 * float(np.sum(mul["alpha"] * np.abs(qhat) ** 2)) / L**3
    return kinetic + potential


def evolve(
    state: LatticeState,
    disorder: DisorderField,
    eps: float,
    c: Couplings,
    t_final: float,
    dt: float | None = None,
) -> LatticeState:
    """Velocity Verlet up to t_final.

    Takes the largest number of full steps with spacing dt not exceeding
    t_final, then one fractional step to land exactly on t_final.  The default
    step is 0.1 / omega_max_eff with omega_max_eff = omega_max (1 + sqrt(eps)
    xi_bar); any dt at or beyond the stability bound 2 / omega_max_eff is
    refused.  Blow-up (non-finite field values) aborts.
    """
    _check_mass_positivity(disorder, eps)
    if t_final < 0.0:
        raise ConfigError("t_final must be nonnegative")
    L = state.L
    mul = _multipliers(c, L)
    omega_max_eff = mul["omega_max"] * (1.0 + np.sqrt(eps) * disorder.xi_bar)
    if dt is None:
        dt = 0.1 / omega_max_eff
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    if dt >= 2.0 / omega_max_eff:
        raise StabilityError(
            f"dt = {dt:.4g} at or beyond the Verlet stability bound "
            f"{2.0 / omega_max_eff:.4g}"
        )

    msq = (1.0 + np.sqrt(eps) * disorder.xi) ** 2
    alpha_r = mul["alpha_r"]
    shape = state.q.shape

    def accel(q: np.ndarray) -> np.ndarray:
        return -msq * np.fft.irfftn(alpha_r * np.fft.rfftn(q), shape, axes=(0, 1, 2))

    n_steps = int(np.floor(t_final / dt + 1e-9))
    rem = t_final - n_steps * dt
    if rem < dt * 1e-9:
        rem = 0.0

    q = state.q.copy()
    v = state.v.copy()
    a = accel(q)
    for step in range(n_steps):
        v += (0.5 * dt) * a
        q += dt * v
        a = accel(q)
        v += (0.5 * dt) * a
        if step % 64 == 0 and not np.isfinite(np.sum(v)):
            raise StabilityError(f"field blew up at step {step}")
    if rem > 0.0:
        v += (0.5 * rem) * a
        q += rem * v
        a = accel(q)
        v += (0.5 * rem) * a
    if not (np.isfinite(np.sum(v)) and np.isfinite(np.sum(q))):
        raise StabilityError("field blew up during integration")
    return LatticeState(q=q, v=v)


def to_wavefunction(
    state: LatticeState, disorder: DisorderField, eps: float, c: Couplings
) -> np.ndarray:
    """psi_+ = (Omega q + i (1 + sqrt(eps) xi)^-1 v) / 2.  The minus component
    of a physical state is the complex conjugate and is never stored."""
    _check_mass_positivity(disorder, eps)
    mul = _multipliers(c, state.L)
    om_q = np.fft.irfftn(mul["omega_r"] * np.fft.rfftn(state.q), state.q.shape, axes=(0, 1, 2))
    return 0.5 * (om_q + 1j * state.v / (1.0 + np.sqrt(eps) * disorder.xi))


def from_wavefunction(
    psi_plus: np.ndarray,
    c: Couplings,
    disorder: DisorderField | None = None,
    eps: float = 0.0,
) -> LatticeState:
    """Invert psi_+ -> (q, v).

    With disorder given, inverts the full map so to_wavefunction returns
    psi_plus exactly: q = Omega^-1 (2 Re psi), v = (1+sqrt(eps) xi) 2 Im psi.
    Without it, uses the clean-lattice map v = 2 Im psi, which deliberately
    drops the O(sqrt(eps)) mass correction (substituted initial data)."""
    L = psi_plus.shape[0]
    mul = _multipliers(c, L)
    re2 = 2.0 * psi_plus.real
    q = np.fft.irfftn(np.fft.rfftn(re2) / mul["omega_r"], psi_plus.shape, axes=(0, 1, 2))
    v = 2.0 * psi_plus.imag
    if disorder is not None:
        v = (1.0 + np.sqrt(eps) * disorder.xi) * v
    return LatticeState(q=q, v=v)


def wavefunction_norm_squared(psi_plus: np.ndarray) -> float:
    """Norm over both components: 2 sum |psi_+|^2.  Equals the total energy."""
    return 2.0 * float(np.sum(np.abs(psi_plus) ** 2))


def evolve_free_spectral(state: LatticeState, c: Couplings, t: float) -> LatticeState:
    """Exact clean-lattice (xi = 0) evolution: psi_hat(k, t) = exp(-i omega t) psi_hat(k, 0)."""
    mul = _multipliers(c, state.L)
    om_q = np.fft.irfftn(mul["omega_r"] * np.fft.rfftn(state.q), state.q.shape, axes=(0, 1, 2))
    psi = 0.5 * (om_q + 1j * state.v)
    psi_t = np.fft.ifftn(np.exp(-1j * t * mul["omega"]) * np.fft.fftn(psi))
    re2 = 2.0 * psi_t.real
    q = np.fft.irfftn(np.fft.rfftn(re2) / mul["omega_r"], psi.shape, axes=(0, 1, 2))
    return LatticeState(q=q, v=2.0 * psi_t.imag)


def _macro_coords(L: int, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = eps * signed_axis(L)
    return np.meshgrid(s, s, s, indexing="ij")


def wkb_state(L: int, eps: float, envelope, phase) -> np.ndarray:
    """Semiclassical wave data psi_+(y) = eps^(3/2) h(eps y) exp(i S(eps y)/eps).

    envelope and phase are callables on macroscopic positions, taking an array
    of shape (..., 3).  Warns when more than 1% of the envelope mass falls
    outside the re-centred box (the packet is then not tight in the box).
    """
    if eps <= 0.0:
        raise ConfigError("eps must be positive")
    x1, x2, x3 = _macro_coords(L, eps)
    x = np.stack([x1, x2, x3], axis=-1)
    h = np.asarray(envelope(x), dtype=np.float64)
    s = np.asarray(phase(x), dtype=np.float64)
    psi = eps**1.5 * h * np.exp(1j * s / eps)

    outside = envelope_mass_outside(L, eps, envelope)
    if outside > 0.01:
        warnings.warn(
            f"envelope mass outside the box: {outside:.1%} (packet not tight)",
            stacklevel=2,
        )
    return psi.astype(np.complex128)


def envelope_mass_outside(L: int, eps: float, envelope) -> float:
    """Fraction of sum |h(eps y)|^2 carried by sites of the doubled box that
    fall outside the original one.  Cheap tightness diagnostic for wave data."""
    s2 = eps * signed_axis(2 * L)
    x1, x2, x3 = np.meshgrid(s2, s2, s2, indexing="ij")
    h2 = np.asarray(envelope(np.stack([x1, x2, x3], axis=-1)), dtype=np.float64)
    total = float(np.sum(h2**2))
    if total == 0.0:
        raise ConfigError("envelope vanishes identically")
    half = eps * (L / 2.0)
    inside = (np.abs(x1) < half) & (np.abs(x2) < half) & (np.abs(x3) < half)
    return 1.0 - float(np.sum((h2**2)[inside])) / total


def point_state(L: int, eps: float, amplitudes: dict[tuple[int, int, int], complex]) -> np.ndarray:
    """Finitely supported wave data placed around the re-centred origin."""
    if eps <= 0.0:
        raise ConfigError("eps must be positive")
    psi = np.zeros((L, L, L), dtype=np.complex128)
    for off, val in amplitudes.items():
        if any(abs(o) >= L // 2 for o in off):
            raise ConfigError(f"site offset {off} outside the box")
        psi[off[0] % L, off[1] % L, off[2] % L] = val
    return psi
