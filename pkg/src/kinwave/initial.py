"""Initial wave data shared by the microscopic and kinetic solvers.

Both solvers must start from the same macroscopic data: the lattice gets the
wave field itself (semiclassical packet or finitely supported amplitudes), the
transport solver gets the matching limit measure on position x wavevector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = ["WKBPacket", "PointSource"]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class WKBPacket:
    """Gaussian envelope with a plane-wave carrier.

    envelope h(x) = amplitude * exp(-|x|^2 / (2 sigma^2)), phase S(x) = 2 pi
    k0.x, so the limiting phase-space measure is |h(x)|^2 dx x delta at k0.
    """

    k0: tuple[float, float, float]
    sigma: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ConfigError("packet width must be positive")

    def envelope(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.exp(-np.sum(x**2, axis=-1) / (2.0 * self.sigma**2))

    def phase(self, x: np.ndarray) -> np.ndarray:
        return TWO_PI * (x @ np.asarray(self.k0, dtype=np.float64))

    def grad_phase(self, x: np.ndarray) -> np.ndarray:
        k0 = np.asarray(self.k0, dtype=np.float64)
        return np.broadcast_to(TWO_PI * k0, x.shape).copy()

    @property
    def mass(self) -> float:
        """integral of |h|^2 over R^3 (Gaussian closed form)."""
        return float(self.amplitude**2 * (np.sqrt(np.pi) * self.sigma) ** 3)

    @property
    def diameter(self) -> float:
        """Macroscopic packet extent used by box-size guards (6 sigma)."""
        return 6.0 * self.sigma

    @property
    def support_halfwidth(self) -> float:
        """Half-width of the tabulation box for position sampling."""
        return 6.0 * self.sigma


@dataclass(frozen=True)
class PointSource:
    """Finitely supported amplitudes around the origin site.

    The limiting measure is delta(x) times |psi_hat(k)|^2 dk, psi_hat the
    lattice Fourier transform of the amplitudes.
    """

    amplitudes: tuple[tuple[tuple[int, int, int], complex], ...]

    @staticmethod
    def from_dict(amps: dict[tuple[int, int, int], complex]) -> "PointSource":
        items = tuple(sorted(
            (tuple(int(c) for c in off), complex(val)) for off, val in amps.items()
        ))
        return PointSource(amplitudes=items)

    def as_dict(self) -> dict[tuple[int, int, int], complex]:
        return dict(self.amplitudes)

    @property
    def mass(self) -> float:
        """sum |psi_y|^2; by Parseval also the k-integral of |psi_hat|^2."""
        return float(sum(abs(v) ** 2 for _, v in self.amplitudes))

    @property
    def diameter(self) -> float:
        if not self.amplitudes:
            return 0.0
        return 2.0 * max(abs(c) for off, _ in self.amplitudes for c in off) + 1.0

    def fourier_weights(self, k: np.ndarray) -> np.ndarray:
        """|psi_hat(k)|^2 at wavevectors of shape (..., 3)."""
        out = np.zeros(k.shape[:-1], dtype=np.complex128)
        for off, val in self.amplitudes:
            out += val * np.exp(-1j * TWO_PI * (k @ np.asarray(off, dtype=np.float64)))
        return np.abs(out) ** 2
