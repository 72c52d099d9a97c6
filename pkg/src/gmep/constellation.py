"""Square M-QAM constellations and their real PAM decomposition.

A complex M-QAM symbol is handled as two independent real components, each
drawn from a sqrt(M)-level PAM alphabet. The alphabet is scaled so that the
mean complex symbol energy equals ``energy``; each real component then
carries ``energy / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "Constellation",
    "SUPPORTED_ORDERS",
    "build_constellation",
    "slice_nearest",
    "symbols_to_bits",
    "bits_to_symbols",
]

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True, eq=False)
class Constellation:
    """Normalized square QAM alphabet.

    Attributes
    ----------
    order : int
        Number of complex points ``M``.
    real_points : np.ndarray
        Increasing PAM amplitudes used by each real component.
    energy : float
        Mean complex symbol energy ``E_s``.
    bits_per_symbol : int
        ``log2(M)``; half of these bits label each real component.
    """

    order: int
    real_points: np.ndarray
    energy: float
    bits_per_symbol: int
    _gray: np.ndarray = field(repr=False)

    @property
    def num_real_points(self) -> int:
        return self.real_points.size

    @property
    def bits_per_real(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def spacing(self) -> float:
        return float(self.real_points[1] - self.real_points[0])

    @property
    def real_energy(self) -> float:
        """Mean energy of one real component, ``E_s / 2``."""
        return self.energy / 2.0

    @property
    def complex_points(self) -> np.ndarray:
        re, im = np.meshgrid(self.real_points, self.real_points, indexing="ij")
        return (re + 1j * im).ravel()

    def index_of(self, points) -> np.ndarray:
        """Return the PAM level index of each entry of ``points``.

        Raises
        ------
        DomainError
            If any entry is not (to 1e-9 relative) one of ``real_points``.
        """
        points = np.asarray(points, dtype=float)
        dist = np.abs(points[..., None] - self.real_points)
        idx = np.argmin(dist, axis=-1)
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.real_points))))
        if np.any(np.take_along_axis(dist, idx[..., None], -1) > tol):
            raise DomainError("value is not a point of the constellation")
        return idx


def build_constellation(order: int, energy: float = 1.0) -> Constellation:
    """Build the normalized ``order``-QAM constellation.

    Examples
    --------
    >>> c = build_constellation(16)
    >>> np.round(c.real_points * np.sqrt(10), 12)
    array([-3., -1.,  1.,  3.])
    """
    if order not in SUPPORTED_ORDERS:
        raise ConfigurationError(
            f"unsupported QAM order {order!r}; expected one of {SUPPORTED_ORDERS}"
        )
    if not energy > 0:
        raise ConfigurationError("constellation energy must be positive")
    levels = int(round(np.sqrt(order)))
    raw = 2.0 * np.arange(levels) - (levels - 1)
    # E|u|^2 = 2 * mean(raw^2) * s^2 = 2 * s^2 * (M - 1) / 3
    scale = np.sqrt(3.0 * energy / (2.0 * (order - 1)))
    points = raw * scale
    points.setflags(write=False)
    idx = np.arange(levels)
    gray = idx ^ (idx >> 1)
    gray.setflags(write=False)
    return Constellation(
        order=order,
        real_points=points,
        energy=float(energy),
        bits_per_symbol=int(np.log2(order)),
        _gray=gray,
    )


def slice_nearest(value, c: Constellation):
    """Nearest constellation point per entry; exact ties go to the smaller point."""
    value = np.asarray(value, dtype=float)
    # argmin returns the first minimum, i.e. the smaller point on a tie
    idx = np.argmin(np.abs(value[..., None] - c.real_points), axis=-1)
    out = c.real_points[idx]
    return out if out.ndim else float(out)


def _int_to_bits(codes: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1)
    return ((codes[..., None] >> shifts) & 1).astype(np.uint8)


def symbols_to_bits(points, c: Constellation) -> np.ndarray:
    """Gray-label real components.

    ``points`` has a trailing axis of length 2 holding the (real, imaginary)
    components of each complex symbol; the result concatenates the labels of
    the two components, most significant bit first.
    """
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != 2:
        raise DomainError("expected a trailing axis of (real, imag) pairs")
    codes = c._gray[c.index_of(points)]
    bits = _int_to_bits(codes, c.bits_per_real)
    return bits.reshape(*points.shape[:-1], 2 * c.bits_per_real)


def bits_to_symbols(bits, c: Constellation) -> np.ndarray:
    """Inverse of :func:`symbols_to_bits`."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape[-1] != c.bits_per_symbol:
        raise DomainError(f"expected {c.bits_per_symbol} bits per symbol")
    if np.any((bits != 0) & (bits != 1)):
        raise DomainError("bits must be 0 or 1")
    halves = bits.reshape(*bits.shape[:-1], 2, c.bits_per_real)
    weights = 1 << np.arange(c.bits_per_real - 1, -1, -1)
    codes = halves @ weights
    inverse = np.argsort(c._gray)
    return c.real_points[inverse[codes]]
