"""Pilot-based LMMSE channel estimation and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SOURCES = ("pilot_lmmse", "predicted", "data_refined")


@dataclass(frozen=True)
class ChannelEstimate:
    value: complex
    source: str = "pilot_lmmse"
    time_index: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown estimate source {self.source!r}")
        if not np.isfinite(self.value):
            raise ValueError("channel estimate must be finite")


def lmmse(y_p, p, sigma2: float):
    """LMMSE estimate ``y_p |p|^2 / (p (|p|^2 + sigma2))`` for a unit-power channel.

    Vectorized over ``y_p`` and ``p``.
    """
    p = np.asarray(p, dtype=complex)
    if np.any(p == 0):
        raise ValueError("pilot symbol must be nonzero")
    if sigma2 < 0:
        raise ValueError(f"noise variance must be non-negative, got {sigma2}")
    energy = np.abs(p) ** 2
    out = np.asarray(y_p, dtype=complex) * energy / (p * (energy + sigma2))
    if out.ndim == 0:
        return complex(out)
    return out


def lmmse_target_mse(sigma2: float, p=1.0) -> float:
    """Analytic MSE ``sigma2 / (|p|^2 + sigma2)`` of the LMMSE estimate."""
    if p == 0:
        raise ValueError("pilot symbol must be nonzero")
    energy = abs(p) ** 2
    return sigma2 / (energy + sigma2)


def mse(pred, truth) -> float:
    """Mean of ``|pred - truth|^2`` over all entries."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("mse of empty sequences")
    return float(np.mean(np.abs(pred - truth) ** 2))


def pilot_sequence(pilot: complex, n_taps: int) -> np.ndarray:
    """Pilot padded with ``L-1`` guard zeros on each side (length ``2L-1``)."""
    seq = np.zeros(2 * n_taps - 1, dtype=complex)
    seq[n_taps - 1] = pilot
    return seq


def estimate_multipath(received, pilot: complex, n_taps: int, n_pilots: int, sigma2: float,
                       start: int = 0) -> np.ndarray:
    """Per-tap LMMSE estimates from guarded pilot sequences.

    ``received[start:]`` must hold ``n_pilots`` back-to-back pilot sequences
    (see :func:`pilot_sequence`) as seen through an ``n_taps``-tap channel,
    i.e. ``y[t] = sum_l h_l x[t-l] + n[t]``. In sequence ``j`` the pilot sits
    at offset ``L-1``; tap ``l`` reaches the receiver ``l`` samples later and
    the guard zeros keep the taps apart.

    Returns an array of shape ``(n_pilots, n_taps)``.
    """
    received = np.asarray(received, dtype=complex)
    if n_taps < 1 or n_pilots < 1:
        raise ValueError("need at least one tap and one pilot sequence")
    seq_len = 2 * n_taps - 1
    if len(received) < start + n_pilots * seq_len:
        raise ValueError(
            f"{len(received) - start} samples cannot hold {n_pilots} pilot "
            f"sequences of length {seq_len}"
        )
    out = np.empty((n_pilots, n_taps), dtype=complex)
    for j in range(n_pilots):
        at = start + j * seq_len + n_taps - 1
        out[j] = lmmse(received[at:at + n_taps], pilot, sigma2)
    return out


def estimates_to_records(values: Sequence[complex], source: str = "pilot_lmmse",
                         start: int = 0) -> list[ChannelEstimate]:
    return [ChannelEstimate(complex(v), source, start + i) for i, v in enumerate(values)]
