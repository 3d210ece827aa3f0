"""Linear transport on the dispersion grid: collision kernel and two solvers.

The elastic collision kernel on the M^3 wavevector grid is

    R(k, k') = 2 pi xi2 delta_beta(omega(k) - omega(k')) omega(k')^2,

with the Lorentzian regularization delta_beta(r) = (beta/pi) / (r^2 + beta^2);
the total rate sigma(k) is its grid average over k'.  Detailed balance
omega(k)^2 R(k, k') = omega(k')^2 R(k', k) is an algebraic identity of this
kernel.  Two solvers consume the same table: a jump-process simulator (free
flight at group velocity grad omega / 2 pi, exponential waiting times,
rejection-sampled jumps) and a truncated collision-expansion evaluator whose
m-th term integrates the same jump chain over the time simplex.  The module
also carries the spectral transport machinery: the gate function whose real
diagonal part recovers sigma/2, and the simplex kernels K_N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.signal

from .dispersion import DispersionGrid
from .errors import ConfigError, SamplingError
from .initial import PointSource, WKBPacket

__all__ = [
    "CollisionTable",
    "ParticleEnsemble",
    "TransportEstimate",
    "default_beta",
    "build_collision_table",
    "pair_rate",
    "sample_jump",
    "sample_initial",
    "simulate",
    "characteristic_function",
    "gate_function",
    "theta_plus",
    "k_simplex",
    "dyson_characteristic",
    "truncation_tail",
]

TWO_PI = 2.0 * np.pi


def default_beta(grid: DispersionGrid) -> float:
    """Resolution-tied regularization width: four band-widths per grid step."""
    return 4.0 * (grid.omega_max - grid.omega_min) / grid.M


@dataclass(frozen=True)
class CollisionTable:
    grid: DispersionGrid
    beta: float
    xi2: float
    sigma: np.ndarray          # (M, M, M) total rate
    max_neighbor_diff: float   # Lipschitz report: worst |sigma(k+e) - sigma(k)|

    @cached_property
    def sigma_flat(self) -> np.ndarray:
        return self.sigma.reshape(-1)

    @property
    def sigma_min(self) -> float:
        return float(self.sigma.min())

    @property
    def sigma_max(self) -> float:
        return float(self.sigma.max())

    @property
    def rejection_cap(self) -> float:
        # unnormalized jump weight u(k') = omega'^2 / ((omega - omega')^2 + beta^2)
        return self.grid.omega_max**2 / self.beta**2


def build_collision_table(
    grid: DispersionGrid, beta: float | None = None, xi2: float = 1.0
) -> CollisionTable:
    """Tabulate sigma(k) on the grid.

    sigma depends on k only through omega(k), so the quadratic grid sum is
    folded to one dimension: deposit omega'^2 mass on a fine omega axis
    (linear weights), convolve with the Lorentzian, and read the result back
    at the exact omega(k) values.  The binning error is O((bin/beta)^2),
    orders below every consumer's tolerance.
    """
    if beta is None:
        beta = min(1.0, default_beta(grid))
    if not (0.0 < beta <= 1.0):
        raise ConfigError("beta must lie in (0, 1]")
    if xi2 <= 0.0:
        raise ConfigError("xi2 must be positive")
    w = grid.omega_flat
    span = grid.omega_max - grid.omega_min
    scale = 2.0 * beta * xi2 / grid.n_points

    if span < 1e-12:                       # flat band: every pair at distance ~0
        val = scale * float(np.sum(w**2)) / beta**2
        sigma = np.full(grid.omega.shape, val)
    else:
        nb = 16384
        step = span / (nb - 1)
        pos = (w - grid.omega_min) / step
        i0 = np.minimum(pos.astype(np.int64), nb - 2)
        frac = pos - i0
        density = np.zeros(nb)
        np.add.at(density, i0, (1.0 - frac) * w**2)
        np.add.at(density, i0 + 1, frac * w**2)
        offsets = np.arange(-(nb - 1), nb, dtype=np.float64) * step
        kernel = 1.0 / (offsets**2 + beta**2)
        nodes = scipy.signal.fftconvolve(density, kernel)[nb - 1 : 2 * nb - 1]
        axis = grid.omega_min + step * np.arange(nb)
        sigma = scale * np.interp(w, axis, nodes).reshape(grid.omega.shape)

    bound = 2.0 * grid.omega_max**2 * xi2 / beta
    if sigma.min() <= 0.0 or sigma.max() > bound:
        raise RuntimeError(
            f"total rate left its analytic window (0, {bound:.3g}]: "
            f"[{sigma.min():.3g}, {sigma.max():.3g}]"
        )
    diffs = [
        float(np.max(np.abs(np.roll(sigma, -1, axis=a) - sigma))) for a in range(3)
    ]
    return CollisionTable(
        grid=grid, beta=float(beta), xi2=float(xi2), sigma=sigma,
        max_neighbor_diff=max(diffs),
    )


def pair_rate(table: CollisionTable, k_idx, kp_idx) -> np.ndarray:
    """R(k, k') for flat grid indices (broadcasting)."""
    w = table.grid.omega_flat
    wk = w[np.asarray(k_idx)]
    wp = w[np.asarray(kp_idx)]
    return 2.0 * table.xi2 * table.beta * wp**2 / ((wk - wp) ** 2 + table.beta**2)


def sample_jump(table: CollisionTable, k_idx, rng: np.random.Generator):
    """Draw post-collision wavevectors: k' with probability proportional to
    R(k, k') over the grid.

    Rejection sampling against the uniform proposal with the global weight cap
    omega_max^2/beta^2.  Aborts when the running acceptance rate degenerates
    below 1e-4 (the kernel is then effectively singular for this grid).
    """
    scalar = np.isscalar(k_idx) or np.ndim(k_idx) == 0
    k_arr = np.atleast_1d(np.asarray(k_idx, dtype=np.int64))
    out = np.empty_like(k_arr)
    wk = table.grid.omega_flat[k_arr]
    cap = table.rejection_cap
    w = table.grid.omega_flat
    beta2 = table.beta**2
    active = np.arange(k_arr.size)
    n_prop = 0
    n_acc = 0
    while active.size:
        m = active.size
        prop = rng.integers(0, table.grid.n_points, size=m)
        wp = w[prop]
        u = wp**2 / ((wk[active] - wp) ** 2 + beta2)
        acc = rng.random(m) * cap < u
        out[active[acc]] = prop[acc]
        active = active[~acc]
        n_prop += m
        n_acc += int(np.sum(acc))
        if n_prop >= max(20_000, 10 * k_arr.size) and n_acc < 1e-4 * n_prop:
            raise SamplingError(
                f"jump acceptance rate {n_acc / n_prop:.2e} below 1e-4"
            )
    return int(out[0]) if scalar else out


@dataclass
class ParticleEnsemble:
    """Weighted particles of the transport equation: macroscopic positions,
    flat wavevector grid indices, and weights summing to the total mass."""

    x: np.ndarray          # (n, 3) float
    k_idx: np.ndarray      # (n,) int flat grid indices
    weights: np.ndarray    # (n,) float
    M: int                 # wavevector grid resolution (index -> k = m/M)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def k(self) -> np.ndarray:
        """Wavevectors in [0,1)^3, shape (n, 3)."""
        M = self.M
        idx = self.k_idx
        return np.stack([(idx // (M * M)) % M, (idx // M) % M, idx % M], axis=-1) / M


def _sample_piecewise_linear(
    nodes: np.ndarray, values: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Inverse-CDF draws from piecewise-linear densities on a uniform node
    axis.  values: (n, m+1), one density row per draw; u uniform in [0,1)."""
    step = nodes[1] - nodes[0]
    cell_mass = 0.5 * (values[:, :-1] + values[:, 1:]) * step
    cdf = np.cumsum(cell_mass, axis=1)
    total = cdf[:, -1]
    if np.any(total <= 0.0):
        raise SamplingError("vanishing density row in position sampling")
    target = u * total
    idx = np.minimum(
        np.sum(cdf < target[:, None], axis=1), cell_mass.shape[1] - 1
    )
    rows = np.arange(values.shape[0])
    prev = np.where(
        idx > 0,
        np.take_along_axis(cdf, np.maximum(idx - 1, 0)[:, None], 1)[:, 0],
        0.0,
    )
    rem = target - prev
    a = values[rows, idx]
    b = values[rows, idx + 1]
    slope = (b - a) / step
    # in-cell offset s solves a s + slope s^2/2 = rem
    lin = np.abs(slope) * step <= 1e-12 * np.maximum(a, 1e-300)
    safe_slope = np.where(lin, 1.0, slope)
    disc = np.sqrt(np.maximum(a**2 + 2.0 * safe_slope * rem, 0.0))
    s = np.where(lin, rem / np.maximum(a, 1e-300), (disc - a) / safe_slope)
    return nodes[idx] + np.clip(s, 0.0, step)


def sample_initial(
    initial: WKBPacket | PointSource,
    n: int,
    total_mass: float,
    table: CollisionTable,
    rng: np.random.Generator,
) -> ParticleEnsemble:
    """Draw n particles from the limiting phase-space measure of the wave data.

    Semiclassical packets: positions by conditional inverse-CDF on a tabulated
    envelope-density grid (exact for the trilinear interpolant), wavevector
    the nearest grid point to grad S / 2 pi at the sampled position.  Point
    data: all particles at the origin, wavevectors drawn from the squared
    Fourier amplitudes on the grid.  Weights are uniform and sum to total_mass.
    """
    if n < 1:
        raise ConfigError("need at least one particle")
    grid = table.grid
    if isinstance(initial, PointSource):
        x = np.zeros((n, 3))
        axis = np.arange(grid.M, dtype=np.float64) / grid.M
        k1, k2, k3 = np.meshgrid(axis, axis, axis, indexing="ij")
        spectral = initial.fourier_weights(np.stack([k1, k2, k3], axis=-1)).reshape(-1)
        total = spectral.sum()
        if total <= 0.0:
            raise ConfigError("point data has no spectral weight on the grid")
        k_idx = rng.choice(grid.n_points, size=n, p=spectral / total)
    elif isinstance(initial, WKBPacket):
        half = initial.support_halfwidth
        nc = 128
        nodes = np.linspace(-half, half, nc + 1)
        g1, g2, g3 = np.meshgrid(nodes, nodes, nodes, indexing="ij")
        rho = initial.envelope(np.stack([g1, g2, g3], axis=-1)) ** 2

        trap = np.ones(nc + 1)
        trap[0] = trap[-1] = 0.5
        m01 = np.einsum("ijl,l->ij", rho, trap)          # marginal over axis 2
        m0 = m01 @ trap                                   # marginal over axes 1, 2

        x = np.empty((n, 3))
        x[:, 0] = _sample_piecewise_linear(
            nodes, np.broadcast_to(m0, (n, nc + 1)), rng.random(n)
        )
        step = nodes[1] - nodes[0]
        t0 = np.clip((x[:, 0] - nodes[0]) / step, 0, nc * (1 - 1e-12))
        i0 = t0.astype(np.int64)
        f0 = (t0 - i0)[:, None]
        cond1 = m01[i0] * (1.0 - f0) + m01[i0 + 1] * f0
        x[:, 1] = _sample_piecewise_linear(nodes, cond1, rng.random(n))
        t1 = np.clip((x[:, 1] - nodes[0]) / step, 0, nc * (1 - 1e-12))
        i1 = t1.astype(np.int64)
        f1 = (t1 - i1)[:, None]
        cond2 = (
            rho[i0, i1] * (1.0 - f0) * (1.0 - f1)
            + rho[i0 + 1, i1] * f0 * (1.0 - f1)
            + rho[i0, i1 + 1] * (1.0 - f0) * f1
            + rho[i0 + 1, i1 + 1] * f0 * f1
        )
        x[:, 2] = _sample_piecewise_linear(nodes, cond2, rng.random(n))

        k_cont = initial.grad_phase(x) / TWO_PI
        k_idx = grid.index_of(k_cont)
    else:
        raise ConfigError(f"unknown initial data spec {type(initial).__name__}")

    return ParticleEnsemble(
        x=x,
        k_idx=np.asarray(k_idx, dtype=np.int64),
        weights=np.full(n, total_mass / n),
        M=grid.M,
    )


def simulate(
    ens: ParticleEnsemble, table: CollisionTable, t: float, rng: np.random.Generator
) -> tuple[ParticleEnsemble, np.ndarray]:
    """Run the jump process for macroscopic time t.

    Each particle flies at grad omega(k)/(2 pi), waits an Exp(sigma(k)) time,
    then jumps through sample_jump; weights never change.  Returns the evolved
    ensemble and the per-particle collision counts.
    """
    if t < 0.0:
        raise ConfigError("time must be nonnegative")
    x = ens.x.copy()
    k = ens.k_idx.copy()
    counts = np.zeros(ens.n, dtype=np.int64)
    rem = np.full(ens.n, float(t))
    active = np.arange(ens.n)
    sigma = table.sigma_flat
    grad = table.grid.grad_flat
    while active.size:
        ka = k[active]
        tau = rng.exponential(scale=1.0 / sigma[ka])
        ra = rem[active]
        move = np.minimum(tau, ra)
        x[active] += grad[ka] * (move[:, None] / TWO_PI)
        rem[active] = ra - move
        jumpers = active[tau < ra]
        if jumpers.size:
            k[jumpers] = sample_jump(table, k[jumpers], rng)
            counts[jumpers] += 1
        active = jumpers     # everyone else exhausted their remaining time
    return ParticleEnsemble(x=x, k_idx=k, weights=ens.weights.copy(), M=ens.M), counts


@dataclass(frozen=True)
class TransportEstimate:
    observable: object
    mean: complex
    stderr_re: float
    stderr_im: float
    n: int


def _jackknife(weights: np.ndarray, z: np.ndarray) -> tuple[complex, float, float]:
    """Leave-one-out error of the reweighted sum F = (sum w z) * W/(W - w_i)."""
    n = z.size
    total_w = weights.sum()
    total = np.sum(weights * z)
    loo = (total - weights * z) * (total_w / (total_w - weights))
    center = loo.mean()
    fac = (n - 1) / n
    var_re = fac * np.sum((loo.real - center.real) ** 2)
    var_im = fac * np.sum((loo.imag - center.imag) ** 2)
    return complex(total), float(np.sqrt(var_re)), float(np.sqrt(var_im))


def characteristic_function(
    ens: ParticleEnsemble, observables
) -> list[TransportEstimate]:
    """sum_j w_j exp(-i 2 pi (p.x_j - n.k_j)) with jackknife standard errors."""
    kc = ens.k()
    out = []
    for obs in observables:
        p = np.asarray(obs.p, dtype=np.float64)
        nn = np.asarray(obs.n, dtype=np.float64)
        z = np.exp(-1j * TWO_PI * (ens.x @ p - kc @ nn))
        mean, se_re, se_im = _jackknife(ens.weights, z)
        out.append(
            TransportEstimate(
                observable=obs, mean=mean, stderr_re=se_re, stderr_im=se_im, n=ens.n
            )
        )
    return out


def gate_function(
    grid: DispersionGrid, k, w: complex, s1: int, s2: int, xi2: float = 1.0
) -> complex:
    """Grid quadrature of the resolvent gate

    g_{s1 s2}(k; w) = xi2 * sum_{s'} avg_{k'} i/(w - s' omega(k'))
                      * (omega(k) + s1 s' omega(k')) / 2
                      * (omega(k) + s2 s' omega(k')) / 2.
    """
    if s1 not in (-1, 1) or s2 not in (-1, 1):
        raise ConfigError("component signs must be +-1")
    wk = float(grid.couplings.omega(np.asarray(k, dtype=np.float64)))
    wp = grid.omega_flat
    total = 0.0 + 0.0j
    for sp in (-1, 1):
        total += np.sum(
            1j / (w - sp * wp) * ((wk + s1 * sp * wp) / 2.0) * ((wk + s2 * sp * wp) / 2.0)
        )
    return complex(xi2 * total / grid.n_points)


def theta_plus(grid: DispersionGrid, k, beta: float, xi2: float = 1.0) -> complex:
    """Gate diagonal at the shifted shell energy: g_{++}(k; omega(k) + i beta).

    As beta -> 0+ the real part converges to sigma(k)/2 (the half total
    collision rate), at the square-root rate in beta.
    """
    if beta <= 0.0:
        raise ConfigError("beta must be positive")
    wk = float(grid.couplings.omega(np.asarray(k, dtype=np.float64)))
    return gate_function(grid, k, wk + 1j * beta, 1, 1, xi2)


def _cheb_nodes(deg: int) -> np.ndarray:
    return np.cos(np.pi * np.arange(deg + 1) / deg)    # 1 .. -1


def _cheb_coeffs(values: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the interpolant through values at the
    second-kind points returned by _cheb_nodes."""
    deg = values.size - 1
    coeffs = scipy.fft.dct(values, type=1) / deg
    coeffs[0] /= 2.0
    coeffs[-1] /= 2.0
    return coeffs


def k_simplex(t: float, w) -> complex:
    """Simplex oscillatory kernel K_N(t, w), N = len(w) <= 6.

    K_1(t, w) = exp(-i t w); each further level applies the recursion
    K_{N+1}(t) = int_0^t dr exp(-i (t-r) w_{N+1}) K_N(r) with adaptive
    spectral quadrature: integrands are interpolated at Chebyshev nodes on
    [0, t], antidifferentiated in coefficient space, and the degree doubles
    until the coefficient tail is negligible.
    """
    ws = [complex(z) for z in np.atleast_1d(np.asarray(w, dtype=np.complex128))]
    n_levels = len(ws)
    if n_levels < 1:
        raise ConfigError("need at least one frequency")
    if n_levels > 6:
        raise ConfigError("kernel order above 6 not supported")
    if t < 0.0:
        raise ConfigError("t must be nonnegative")
    if t == 0.0:
        return 1.0 + 0.0j if n_levels == 1 else 0.0 + 0.0j
    if n_levels == 1:
        return complex(np.exp(-1j * t * ws[0]))

    for deg in (64, 128, 256, 512, 1024):
        x = _cheb_nodes(deg)
        r = (x + 1.0) * (t / 2.0)
        vals = np.exp(-1j * r * ws[0])
        tail = 0.0
        for w_next in ws[1:]:
            g = np.exp(1j * r * w_next) * vals
            coeffs = _cheb_coeffs(g)
            scale = np.max(np.abs(coeffs)) or 1.0
            tail = max(tail, float(np.max(np.abs(coeffs[-2:])) / scale))
            primitive = np.polynomial.chebyshev.chebint(coeffs, lbnd=-1.0, scl=t / 2.0)
            vals = np.exp(-1j * r * w_next) * np.polynomial.chebyshev.chebval(x, primitive)
        if tail < 1e-12:
            return complex(vals[0])          # node x = 1 is r = t
    raise RuntimeError(
        f"simplex kernel quadrature did not converge (t |w| too large: t={t}, w={ws})"
    )


def truncation_tail(lam: float, m_max: int) -> float:
    """sum_{m > m_max} lam^m / m!  (Poisson-type tail of the expansion bound)."""
    term = lam**m_max / math.factorial(m_max)
    total = 0.0
    for m in range(m_max + 1, m_max + 200):
        term *= lam / m
        total += term
        if term < 1e-18 * max(total, 1.0):
            break
    return total


def dyson_characteristic(
    initial: WKBPacket | PointSource,
    table: CollisionTable,
    t_bar: float,
    observables,
    m_max: int = 8,
    n_mc: int = 10_000,
    rng: np.random.Generator | None = None,
    tail_tol: float = 1e-3,
) -> tuple[list[TransportEstimate], float, bool]:
    """Collision-expansion estimate of the transport characteristic function.

    The m-th term runs the same jump chain as the simulator (each normalized
    jump carries its total rate as weight) and integrates the m+1 flight
    segments over the scaled time simplex by Monte Carlo (volume t^m / m!).

    Truncation at m_max is reported as a bound on the modulus of the missing
    sum, valid for every observable at once because each term's phase factor
    has modulus one: the leading missing term (order m_max + 1) is estimated
    with the same chain, and the orders beyond it are capped by the geometric
    ratio sigma_max t / (m + 1).  When that ratio is not contractive the crude
    (sigma_max t)^m / m! sum is reported instead.  The last return flags
    whether the bound stays below tail_tol relative to the mass.

    Returns (estimates, tail_bound, tail_ok).
    """
    if m_max < 0 or m_max > 64:
        raise ConfigError("m_max out of range")
    if n_mc < 1_000:
        raise ConfigError("need at least 1e3 samples")
    if t_bar < 0.0:
        raise ConfigError("t_bar must be nonnegative")
    rng = rng or np.random.default_rng(0)
    ens = sample_initial(initial, n_mc, initial.mass, table, rng)
    sigma = table.sigma_flat
    grad = table.grid.grad_flat

    # one extra jump beyond m_max feeds the leading-missing-term estimate
    chain = [ens.k_idx]
    for _ in range(m_max + 1):
        chain.append(sample_jump(table, chain[-1], rng))
    kcoord = [_k_of(idx, table.grid.M) for idx in chain]
    sig = [sigma[idx] for idx in chain]
    gvel = [grad[idx] for idx in chain]

    n_obs = len(observables)
    totals = np.zeros((n_obs, n_mc), dtype=np.complex128)
    prefac = np.ones(n_mc)
    for m in range(m_max + 1):
        if m > 0:
            prefac = prefac * sig[m - 1]
        if m == 0:
            r = np.full((n_mc, 1), t_bar)
        else:
            u = np.sort(rng.random((n_mc, m)), axis=1)
            bounds = np.concatenate(
                [np.zeros((n_mc, 1)), u, np.ones((n_mc, 1))], axis=1
            )
            r = np.diff(bounds, axis=1) * t_bar
        decay = np.exp(-sum(r[:, j] * sig[j] for j in range(m + 1)))
        vol = t_bar**m / math.factorial(m)
        base = prefac * decay * vol
        for i, obs in enumerate(observables):
            p = np.asarray(obs.p, dtype=np.float64)
            nn = np.asarray(obs.n, dtype=np.float64)
            phase = -sum(r[:, j] * (gvel[j] @ p) for j in range(m + 1))
            phase = phase - TWO_PI * (ens.x @ p) + TWO_PI * (kcoord[m] @ nn)
            totals[i] += base * np.exp(1j * phase)

    estimates = []
    for i, obs in enumerate(observables):
        mean, se_re, se_im = _jackknife(ens.weights, totals[i])
        estimates.append(
            TransportEstimate(
                observable=obs, mean=mean, stderr_re=se_re, stderr_im=se_im, n=n_mc
            )
        )

    # leading missing term, order q = m_max + 1, from the extended chain
    q = m_max + 1
    prefac = prefac * sig[m_max]
    u = np.sort(rng.random((n_mc, q)), axis=1)
    bounds = np.concatenate([np.zeros((n_mc, 1)), u, np.ones((n_mc, 1))], axis=1)
    r = np.diff(bounds, axis=1) * t_bar
    decay = np.exp(-sum(r[:, j] * sig[j] for j in range(q + 1)))
    lead = float(np.sum(ens.weights * prefac * decay)) * t_bar**q / math.factorial(q)
    ratio = table.sigma_max * t_bar / (q + 1)
    if ratio < 1.0:
        tail = lead / (1.0 - ratio)
    else:                               # not contractive yet: crude factorial sum
        tail = initial.mass * truncation_tail(table.sigma_max * t_bar, m_max)
    tail_ok = tail <= tail_tol * initial.mass
    return estimates, tail, tail_ok


def _k_of(idx: np.ndarray, M: int) -> np.ndarray:
    return np.stack([(idx // (M * M)) % M, (idx // M) % M, idx % M], axis=-1) / M
