"""Lookup table of achieved prediction MSE over (horizon, Doppler, SNR),
and horizon selection against a target MSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimation import lmmse
from .fading import complex_normal, make_rng, seed_sequence
from .modem import pilot_symbol, snr_to_sigma2
from .predictor import PredictorNet, make_dataset, predict_batch

DEFAULT_N_GRID = tuple(range(5, 101, 5))
DEFAULT_D_GRID = tuple(float(d) for d in range(5, 101, 5))
DEFAULT_SNR_GRID = tuple(float(s) for s in range(-5, 41, 5))


class FingerprintMismatch(ValueError):
    """A lookup table is used with a model it was not built for."""


@dataclass(frozen=True)
class MseLookupTable:
    """Achieved MSE indexed ``[n, doppler, snr]`` with Monte-Carlo stderr."""

    n_grid: tuple
    d_grid: tuple
    snr_grid: tuple
    mse: np.ndarray
    stderr: np.ndarray
    trials: int
    fingerprint: str

    def __post_init__(self):
        shape = (len(self.n_grid), len(self.d_grid), len(self.snr_grid))
        if 0 in shape:
            raise ValueError("lookup table grids must be nonempty")
        if self.mse.shape != shape or self.stderr.shape != shape:
            raise ValueError(f"table shape {self.mse.shape}, expected {shape}")
        if np.any(self.mse < 0):
            raise ValueError("negative MSE in lookup table")

    def lookup(self, n: int, doppler_hz: float, snr_db: float) -> float:
        return float(self.mse[self.n_grid.index(n), _nearest(self.d_grid, doppler_hz),
                              _nearest(self.snr_grid, snr_db)])

    def to_csv(self, path=None, header_lines=()) -> str:
        """Rows ``n,doppler_hz,snr_db,mse,stderr``; the fingerprint and
        trial count ride in ``#`` comment lines."""
        lines = [f"# {h}" for h in header_lines]
        lines.append(f"# fingerprint={self.fingerprint}")
        lines.append(f"# trials={self.trials}")
        lines.append("n,doppler_hz,snr_db,mse,stderr")
        for a, n in enumerate(self.n_grid):
            for b, d in enumerate(self.d_grid):
                for c, s in enumerate(self.snr_grid):
                    lines.append(f"{n},{d:g},{s:g},{self.mse[a, b, c]:.10e},{self.stderr[a, b, c]:.10e}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "MseLookupTable":
        meta = {}
        rows = []
        header_seen = False
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta.setdefault(key.strip(), val.strip())
                continue
            if not line.strip():
                continue
            if not header_seen:
                cols = [c.strip() for c in line.split(",")]
                if cols != ["n", "doppler_hz", "snr_db", "mse", "stderr"]:
                    raise ValueError(f"unexpected lookup table columns {cols}")
                header_seen = True
                continue
            n, d, s, m, e = line.split(",")
            rows.append((int(n), float(d), float(s), float(m), float(e)))
        if not rows:
            raise ValueError("empty lookup table")
        if "fingerprint" not in meta:
            raise ValueError("lookup table lacks a model fingerprint")
        n_grid = tuple(sorted({r[0] for r in rows}))
        d_grid = tuple(sorted({r[1] for r in rows}))
        s_grid = tuple(sorted({r[2] for r in rows}))
        shape = (len(n_grid), len(d_grid), len(s_grid))
        mse = np.full(shape, np.nan)
        err = np.full(shape, np.nan)
        for n, d, s, m, e in rows:
            idx = (n_grid.index(n), d_grid.index(d), s_grid.index(s))
            mse[idx], err[idx] = m, e
        if np.isnan(mse).any():
            raise ValueError("lookup table is missing cells")
        return cls(n_grid, d_grid, s_grid, mse, err, int(meta.get("trials", 0)), meta["fingerprint"])


def _nearest(grid, value) -> int:
    """Index of the grid point closest to ``value``; ties go to the lower one."""
    arr = np.asarray(grid, dtype=float)
    return int(np.argmin(np.abs(arr - float(value))))


def prediction_errors(net: PredictorNet, doppler_hz: float, snr_db: float, n_max: int,
                      trials: int, seed=0) -> np.ndarray:
    """Squared prediction errors ``(trials, n_max)`` from noisy pilot windows.

    Each trial draws an independent block of channel samples, observes
    the first ``window_n`` through unit-energy pilots at ``snr_db``,
    LMMSE-estimates them and predicts the next ``n_max`` coefficients.
    """
    ss = seed_sequence(seed)
    s_chan, s_noise = ss.spawn(2)
    w = net.window_n
    real, imag = make_dataset(doppler_hz, trials, s_chan, net.timing, length=w + n_max)
    h = real + 1j * imag
    p = pilot_symbol()
    sigma2 = snr_to_sigma2(snr_db)
    rng = make_rng(s_noise)
    y = h[:, :w] * p + complex_normal(rng, (trials, w), sigma2)
    pred = predict_batch(net, lmmse(y, p, sigma2), n_max)
    return np.abs(pred - h[:, w:]) ** 2


def build_lut(net: PredictorNet, n_grid=DEFAULT_N_GRID, d_grid=DEFAULT_D_GRID,
              snr_grid=DEFAULT_SNR_GRID, trials: int = 1000, seed=0) -> MseLookupTable:
    """Monte-Carlo achieved MSE for every (n, Doppler, SNR) cell.

    Each (Doppler, SNR) pair runs one batch of ``trials`` predictions out to
    ``max(n_grid)``; the MSE for horizon ``n`` averages the first ``n``
    errors of each trial, so all horizons share the same draws.
    """
    if trials < 2:
        raise ValueError("at least two trials are needed for a standard error")
    n_grid = tuple(sorted(int(n) for n in n_grid))
    d_grid = tuple(float(d) for d in d_grid)
    snr_grid = tuple(float(s) for s in snr_grid)
    if not n_grid or n_grid[0] < 1:
        raise ValueError("horizons must be >= 1")
    shape = (len(n_grid), len(d_grid), len(snr_grid))
    mse = np.empty(shape)
    err = np.empty(shape)
    cells = seed_sequence(seed).spawn(len(d_grid) * len(snr_grid))
    n_idx = np.asarray(n_grid) - 1
    for b, d in enumerate(d_grid):
        for c, s in enumerate(snr_grid):
            sq = prediction_errors(net, d, s, n_grid[-1], trials, cells[b * len(snr_grid) + c])
            per_trial = np.cumsum(sq, axis=1)[:, n_idx] / np.asarray(n_grid)
            mse[:, b, c] = per_trial.mean(axis=0)
            err[:, b, c] = per_trial.std(axis=0, ddof=1) / math.sqrt(trials)
    return MseLookupTable(n_grid, d_grid, snr_grid, mse, err, trials, net.fingerprint())


def select_n(lut: MseLookupTable, snr_db: float, doppler_hz: float, target_mse: float,
             fingerprint: str | None = None) -> int:
    """Largest horizon whose achieved MSE is below ``target_mse``.

    Off-grid operating points use the nearest grid point. When no horizon
    qualifies the smallest one is returned.
    """
    if fingerprint is not None and fingerprint != lut.fingerprint:
        raise FingerprintMismatch(
            f"lookup table built for model {lut.fingerprint}, not {fingerprint}"
        )
    column = lut.mse[:, _nearest(lut.d_grid, doppler_hz), _nearest(lut.snr_grid, snr_db)]
    ok = [n for n, m in zip(lut.n_grid, column) if m < target_mse]
    return max(ok) if ok else min(lut.n_grid)
