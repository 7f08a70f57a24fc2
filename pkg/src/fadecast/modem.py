"""Square M-QAM with per-axis Gray labels, noise scaling and ML detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square QAM.

    ``points[i]`` carries the bit label ``bit_map[i]`` (MSB first, in-phase
    bits before quadrature bits).
    """

    m: int
    points: np.ndarray
    bit_map: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.m))


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def gray_qam(m: int) -> Constellation:
    """Square ``m``-QAM normalized to unit average energy."""
    if m not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {m}; choose from {SUPPORTED_ORDERS}")
    side = int(math.isqrt(m))
    half = int(math.log2(side))
    levels = np.arange(-(side - 1), side, 2, dtype=float)  # -3,-1,1,3 for side 4
    scale = math.sqrt(2.0 * (side * side - 1) / 3.0)
    points = np.empty(m, dtype=complex)
    bit_map = np.empty((m, 2 * half), dtype=np.uint8)
    for i_re in range(side):
        for i_im in range(side):
            idx = i_re * side + i_im
            points[idx] = (levels[i_re] + 1j * levels[i_im]) / scale
            label = (_gray(i_re) << half) | _gray(i_im)
            bit_map[idx] = [(label >> (2 * half - 1 - b)) & 1 for b in range(2 * half)]
    points.setflags(write=False)
    bit_map.setflags(write=False)
    return Constellation(m, points, bit_map)


def parse_modulation(name: str) -> Constellation:
    """``"4qam"``/``"16qam"``/``"64qam"`` (or the bare order) to a constellation."""
    text = str(name).lower().replace("-", "")
    if text == "qpsk":
        return gray_qam(4)
    if text.endswith("qam"):
        text = text[:-3]
    try:
        order = int(text)
    except ValueError:
        raise ValueError(f"unknown modulation {name!r}") from None
    return gray_qam(order)


def pilot_symbol() -> complex:
    """Fixed pilot: the first 4-QAM point, unit power like the data."""
    return complex(gray_qam(4).points[0])


def ebn0_to_sigma2(ebn0_db: float, m: int) -> float:
    """Complex noise variance for unit-energy symbols at the given Eb/N0."""
    if m < 4:
        raise ValueError(f"constellation order must be >= 4, got {m}")
    return 1.0 / (math.log2(m) * 10.0 ** (ebn0_db / 10.0))


def snr_to_sigma2(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def modulate(bits, c: Constellation) -> np.ndarray:
    """Map a flat bit array to symbols."""
    return c.points[bits_to_indices(bits, c)]


def bits_to_indices(bits, c: Constellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    k = c.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"{bits.size} bits is not a multiple of {k} bits/symbol")
    if bits.size == 0:
        return np.zeros(0, dtype=int)
    weights = 1 << np.arange(k - 1, -1, -1)
    labels = bits.reshape(-1, k) @ weights
    label_to_index = np.empty(c.m, dtype=int)
    label_to_index[c.bit_map @ weights] = np.arange(c.m)
    return label_to_index[labels]


def demap(indices, c: Constellation) -> np.ndarray:
    """Flat bit array for a sequence of symbol indices."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return np.zeros(0, dtype=np.uint8)
    return c.bit_map[indices].ravel()


def ml_detect(y, h_hat, c: Constellation):
    """Symbol-wise ML decision ``argmin_s |y - h_hat s|^2``.

    Works elementwise on arrays. Ties resolve to the lowest index. Returns
    ``(indices, bits)``; bits has a trailing axis of length log2(m).
    """
    y = np.asarray(y, dtype=complex)
    h_hat = np.asarray(h_hat, dtype=complex)
    if np.any(h_hat == 0):
        raise ValueError("degenerate channel estimate (h_hat = 0)")
    cost = np.abs(y[..., None] - h_hat[..., None] * c.points) ** 2
    idx = np.argmin(cost, axis=-1)
    return idx, c.bit_map[idx]


def rayleigh_ber_4qam(ebn0_db: float) -> float:
    """Closed-form BER of Gray 4-QAM over Rayleigh fading with perfect CSI."""
    g = 10.0 ** (ebn0_db / 10.0)
    return 0.5 * (1.0 - math.sqrt(g / (1.0 + g)))
