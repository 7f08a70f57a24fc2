"""Non-neural comparison schemes: AR(2) linear prediction fitted by
Yule-Walker least squares, and LMMSE pilots with linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .adaptive import MseLookupTable, select_n
from .estimation import lmmse, lmmse_target_mse
from .fading import ChannelTiming
from .modem import Constellation, ebn0_to_sigma2, pilot_symbol
from .predictor import PREDICTOR_SYMBOL_PERIOD, PredictorNet
from .receiver import (
    FrameLayout,
    ReceiverReport,
    _accumulate,
    _bit_errors,
    _decide,
    _draw,
    _sent_indices,
    ebn0_to_snr_db,
    monte_carlo,
)

RIDGE = 1e-12


class FitError(ValueError):
    """The AR(2) regression system is rank deficient."""


@dataclass(frozen=True)
class Ar2Model:
    """``h(t) = rho1 h(t-1) + rho2 h(t-2)`` with complex coefficients."""

    rho1: complex
    rho2: complex

    def __post_init__(self):
        if not (np.isfinite(self.rho1) and np.isfinite(self.rho2)):
            raise ValueError("AR(2) coefficients must be finite")


def fit_ar2_yw(estimates) -> Ar2Model:
    """Least-squares fit of the stacked AR(2) regression over t = 2..n-1.

    Solved through the ridge-regularized normal equations. A system whose
    regressors carry no energy (for example an all-zero record) raises
    :class:`FitError`. Other rank-deficient systems return the minimum-norm
    solution.
    """
    h = np.asarray([getattr(e, "value", e) for e in estimates], dtype=complex)
    if h.ndim != 1 or h.size < 4:
        raise ValueError("need at least 4 estimates")
    a = np.column_stack([h[1:-1], h[:-2]])
    b = h[2:]
    gram = a.conj().T @ a
    scale = np.trace(gram).real
    if not np.isfinite(scale) or scale <= 0:
        raise FitError("AR(2) regressors are identically zero")
    if np.linalg.matrix_rank(gram, tol=1e-10 * scale) < 2:
        rho = np.linalg.pinv(a, rcond=1e-10) @ b
    else:
        rho = np.linalg.solve(gram + RIDGE * scale * np.eye(2), a.conj().T @ b)
    return Ar2Model(complex(rho[0]), complex(rho[1]))


def fit_ar2_batch(windows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`fit_ar2_yw` over rows of ``windows``.

    Returns ``(rho1, rho2, ok)``; rows that cannot be fitted have ``ok``
    False and zero coefficients.
    """
    h = np.asarray(windows, dtype=complex)
    x1, x2, y = h[:, 1:-1], h[:, :-2], h[:, 2:]
    g11 = np.sum(np.abs(x1) ** 2, axis=1)
    g22 = np.sum(np.abs(x2) ** 2, axis=1)
    g12 = np.sum(x1.conj() * x2, axis=1)
    r1 = np.sum(x1.conj() * y, axis=1)
    r2 = np.sum(x2.conj() * y, axis=1)
    scale = g11 + g22
    ok = np.isfinite(scale) & (scale > 0)
    ridge = RIDGE * np.where(ok, scale, 1.0)
    a11, a22 = g11 + ridge, g22 + ridge
    det = a11 * a22 - np.abs(g12) ** 2
    well = ok & (det > 1e-10 * np.where(ok, scale, 1.0) ** 2)
    safe = np.where(well, det, 1.0)
    rho1 = np.where(well, (a22 * r1 - g12 * r2) / safe, 0)
    rho2 = np.where(well, (a11 * r2 - g12.conj() * r1) / safe, 0)
    for i in np.flatnonzero(ok & ~well):
        m = fit_ar2_yw(h[i])
        rho1[i], rho2[i] = m.rho1, m.rho2
    return rho1, rho2, ok


def ar2_predict(model: Ar2Model, last_two, n_preds: int) -> np.ndarray:
    """Recursive predictions from ``last_two = (h(t-1), h(t-2))``."""
    if n_preds < 1:
        raise ValueError("n_preds must be >= 1")
    prev, prev2 = (complex(v) for v in last_two)
    out = np.empty(n_preds, dtype=complex)
    for j in range(n_preds):
        cur = model.rho1 * prev + model.rho2 * prev2
        out[j] = cur
        prev2, prev = prev, cur
    return out


def ar2_predict_batch(rho1, rho2, prev, prev2, n_preds: int) -> np.ndarray:
    """Row-wise recursive AR(2) predictions, ``(batch, n_preds)``."""
    prev = np.asarray(prev, dtype=complex).copy()
    prev2 = np.asarray(prev2, dtype=complex).copy()
    out = np.empty(prev.shape + (n_preds,), dtype=complex)
    for j in range(n_preds):
        cur = rho1 * prev + rho2 * prev2
        out[..., j] = cur
        prev2, prev = prev, cur
    return out


def pilot_positions(n_p: int, n_d: int) -> np.ndarray:
    """Indices of the pilots in an interleaved frame of ``n_p + n_d`` symbols.

    Each pilot is followed by ``n_d // n_p`` data symbols; the remainder
    ``n_d % n_p`` is appended after the final group.
    """
    if n_p < 1 or n_d < 0:
        raise ValueError("need n_p >= 1 and n_d >= 0")
    step = n_d // n_p + 1
    return np.arange(n_p) * step


def linear_interpolate(positions, estimates, targets) -> np.ndarray:
    """Complex piecewise-linear interpolation of pilot estimates.

    Targets after the last pilot continue the final segment's slope. With
    one pilot the estimate is held constant. ``estimates`` may carry a
    leading batch axis.
    """
    pos = np.asarray(positions, dtype=float)
    est = np.asarray(estimates, dtype=complex)
    t = np.asarray(targets, dtype=float)
    if pos.size == 1:
        return np.broadcast_to(est[..., :1], est.shape[:-1] + t.shape).copy()
    seg = np.clip(np.searchsorted(pos, t, side="right") - 1, 0, pos.size - 2)
    x0, x1 = pos[seg], pos[seg + 1]
    w = (t - x0) / (x1 - x0)
    return est[..., seg] * (1 - w) + est[..., seg + 1] * w


# --- receivers ---------------------------------------------------------------


def _ar2_batch(ss, batch, *, c, f_d, ebn0_db, layout, timing):
    sigma2 = ebn0_to_sigma2(ebn0_db, c.m)
    n_p, n_c = layout.n_p, layout.n_c
    h, bits, noise = _draw(ss, batch, n_p + n_c, f_d, timing, c, n_c, sigma2)
    p = pilot_symbol()
    window = lmmse(h[:, :n_p] * p + noise[:, :n_p], p, sigma2)
    rho1, rho2, ok = fit_ar2_batch(window)
    pred = ar2_predict_batch(rho1[:, None], rho2[:, None], window[:, -1:], window[:, -2:-1], n_c)[:, 0]
    sent = _sent_indices(bits, c)
    y = h[:, n_p:] * c.points[sent] + noise[:, n_p:]
    keep = ok & np.all(pred != 0, axis=1)
    idx = _decide(y[keep], pred[keep], c)
    errors = _bit_errors(idx, bits[keep], c)
    sq = np.mean(np.abs(pred[keep] - h[keep, n_p:]) ** 2, axis=1)
    return _accumulate(errors, n_c * c.bits_per_symbol, sq, n_c, layout,
                       discarded=int((~keep).sum()))


def run_ar2_receiver(mod: Constellation, f_d: float, ebn0_db: float, lut: MseLookupTable | None,
                     trials: int, seed=0, *, net: PredictorNet | None = None,
                     n_preds: int | None = None, timing: ChannelTiming | None = None,
                     min_errors: int | None = 100, jobs: int = 1, n_p: int = 10) -> ReceiverReport:
    """AR(2) prediction receiver: ``n_p`` pilots, Yule-Walker fit, recursive
    prediction over the data block.

    The horizon comes from ``n_preds`` or, when omitted, from the lookup
    table at the operating point (the same choice the adaptive receiver
    makes). Trials whose fit fails are discarded and counted.
    """
    if n_preds is None:
        if lut is None:
            raise ValueError("either n_preds or a lookup table is required")
        sigma2 = ebn0_to_sigma2(ebn0_db, mod.m)
        n_preds = select_n(lut, ebn0_to_snr_db(ebn0_db, mod), f_d, lmmse_target_mse(sigma2),
                           fingerprint=net.fingerprint() if net is not None else None)
    layout = FrameLayout(n_p, n_preds, 1)
    timing = timing or (net.timing if net is not None else ChannelTiming(PREDICTOR_SYMBOL_PERIOD))
    fn = partial(_ar2_batch, c=mod, f_d=f_d, ebn0_db=ebn0_db, layout=layout, timing=timing)
    return monte_carlo(fn, trials, seed, min_errors, jobs=jobs)


def _li_batch(ss, batch, *, c, f_d, ebn0_db, layout, timing):
    sigma2 = ebn0_to_sigma2(ebn0_db, c.m)
    n_p, n_d = layout.n_p, layout.n_c
    length = n_p + n_d
    pilots = pilot_positions(n_p, n_d)
    data = np.setdiff1d(np.arange(length), pilots)
    h, bits, noise = _draw(ss, batch, length, f_d, timing, c, n_d, sigma2)
    p = pilot_symbol()
    est = lmmse(h[:, pilots] * p + noise[:, pilots], p, sigma2)
    h_hat = linear_interpolate(pilots, est, data)
    sent = _sent_indices(bits, c)
    y = h[:, data] * c.points[sent] + noise[:, data]
    idx = _decide(y, h_hat, c)
    errors = _bit_errors(idx, bits, c)
    sq = np.mean(np.abs(h_hat - h[:, data]) ** 2, axis=1)
    return _accumulate(errors, n_d * c.bits_per_symbol, sq, n_d, layout)


def run_lmmse_li_receiver(mod: Constellation, f_d: float, ebn0_db: float, n_p: int, n_d: int,
                          trials: int, seed=0, *, timing: ChannelTiming | None = None,
                          min_errors: int | None = 100, jobs: int = 1) -> ReceiverReport:
    """Benchmark: pilots interleaved with data, LMMSE at each pilot and
    linear interpolation in between.

    With ``n_p`` pilots and ``n_d`` data symbols per frame its efficiency
    equals the predictor receiver's for ``n_c = n_d``.
    """
    layout = FrameLayout(n_p, n_d, 1)
    timing = timing or ChannelTiming(PREDICTOR_SYMBOL_PERIOD)
    fn = partial(_li_batch, c=mod, f_d=f_d, ebn0_db=ebn0_db, layout=layout, timing=timing)
    return monte_carlo(fn, trials, seed, min_errors, jobs=jobs)
