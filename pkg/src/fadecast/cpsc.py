"""Cyclic-prefix single-carrier frames over a doubly-selective channel,
per-tap channel prediction and Viterbi sequence detection.

Within a frame each tap is constant over a coherence block and moves on
at block boundaries; symbol ``t`` of the frame body sees block ``t // B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .estimation import lmmse, pilot_sequence
from .fading import ChannelTiming, FadingProcess, complex_normal, make_rng
from .modem import Constellation, pilot_symbol, snr_to_sigma2
from .predictor import PredictorNet, make_dataset, predict_batch
from .receiver import (
    FrameLayout,
    ReceiverReport,
    _accumulate,
    _bit_errors,
    _sent_indices,
    monte_carlo,
)

BranchMetric = Callable[[np.ndarray, np.ndarray], np.ndarray]


def euclidean_metric(y, expected):
    """Default branch cost ``|y - expected|^2`` (broadcasting)."""
    return np.abs(y - expected) ** 2


@dataclass(frozen=True)
class CpscFrame:
    """One frame: ``n_p`` guarded pilot sequences, then the payload, with a
    cyclic prefix of the body's last ``l_taps - 1`` symbols in front."""

    n: int
    l_taps: int
    n_p: int
    body: np.ndarray
    cp: np.ndarray

    @property
    def n_c(self) -> int:
        return self.n - self.pilot_length

    @property
    def pilot_length(self) -> int:
        return self.n_p * (2 * self.l_taps - 1)

    @property
    def payload(self) -> np.ndarray:
        return self.body[self.pilot_length:]

    @property
    def transmitted(self) -> np.ndarray:
        return np.concatenate([self.cp, self.body])


def payload_length(n: int, l_taps: int, n_p: int) -> int:
    return n - n_p * (2 * l_taps - 1)


def build_frame(n: int, l_taps: int, n_p: int, data_symbols, pilot: complex | None = None) -> CpscFrame:
    """Assemble a frame around ``n - n_p (2L - 1)`` data symbols."""
    if l_taps < 1 or n_p < 0:
        raise ValueError("need l_taps >= 1 and n_p >= 0")
    n_c = payload_length(n, l_taps, n_p)
    if n_c < 1:
        raise ValueError(f"frame of {n} cannot hold {n_p} pilot sequences for {l_taps} taps")
    data = np.asarray(data_symbols, dtype=complex)
    if data.shape != (n_c,):
        raise ValueError(f"expected {n_c} data symbols, got {data.shape}")
    seq = pilot_sequence(pilot_symbol() if pilot is None else pilot, l_taps)
    body = np.concatenate([np.tile(seq, n_p), data])
    cp = body[n - (l_taps - 1):] if l_taps > 1 else body[:0]
    return CpscFrame(n, l_taps, n_p, body, cp.copy())


def _tap_array(taps, n: int) -> np.ndarray:
    """Taps as ``(L, n)`` per-time coefficients."""
    rows = [t.gains if isinstance(t, FadingProcess) else np.asarray(t, dtype=complex) for t in taps]
    if not rows:
        raise ValueError("at least one tap is required")
    if any(r.ndim != 1 or len(r) < n for r in rows):
        raise ValueError(f"every tap must cover the {n}-symbol frame")
    return np.stack([r[:n] for r in rows])


def apply_doubly_selective(frame: CpscFrame, taps, sigma2: float, seed=0) -> np.ndarray:
    """Received frame body after cyclic-prefix removal.

    ``y(t) = sum_l h_l(t) x(t - l) + n(t)`` where ``x`` is the transmitted
    sequence including the prefix, so the body sees a circular channel.
    """
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    h = _tap_array(taps, frame.n)
    if h.shape[0] != frame.l_taps:
        raise ValueError(f"frame built for {frame.l_taps} taps, got {h.shape[0]}")
    y = np.zeros(frame.n, dtype=complex)
    for lag in range(frame.l_taps):
        y += h[lag] * np.roll(frame.body, lag)
    if sigma2 > 0:
        y = y + complex_normal(make_rng(seed), frame.n, sigma2)
    return y


def viterbi_detect(y, taps, c: Constellation, prefix=None,
                   metric: BranchMetric = euclidean_metric) -> np.ndarray:
    """Maximum-likelihood symbol sequence by the Viterbi algorithm.

    Minimizes ``sum_t metric(y(t), sum_l h_l(t) x(t-l))`` over all symbol
    sequences. ``y`` is ``(T,)`` or ``(batch, T)``; ``taps`` is ``(T, L)``
    or ``(batch, T, L)``. Symbols before the sequence are the known values
    ``prefix = (x(-1), x(-2), ...)`` (zeros by default). The trellis has
    ``M^(L-1)`` states; ties go to the lowest state index. Returns
    constellation indices.

    State ``s`` holds the previous ``L-1`` symbol indices as base-``M``
    digits, the most recent in the lowest digit.
    """
    y = np.asarray(y, dtype=complex)
    taps = np.asarray(taps, dtype=complex)
    single = y.ndim == 1
    if single:
        y, taps = y[None], taps[None]
    if taps.ndim != 3 or taps.shape[:2] != y.shape:
        raise ValueError(f"taps must give L coefficients for each of the {y.shape[-1]} samples")
    batch, n_t, n_l = taps.shape
    pts = c.points
    m = c.m
    pre = np.zeros(max(n_l - 1, 0), dtype=complex)
    if prefix is not None:
        given = np.asarray(prefix, dtype=complex)
        if given.shape != pre.shape:
            raise ValueError(f"prefix must hold {n_l - 1} symbols")
        pre = given
    if n_l == 1:
        cost = metric(y[..., None], taps[..., 0, None] * pts)
        out = np.argmin(cost, axis=-1)
        return out[0] if single else out

    n_s = m ** (n_l - 1)
    digits = (np.arange(n_s)[:, None] // m ** np.arange(n_l - 1)) % m  # (S, L-1)
    high = m ** (n_l - 2)
    # predecessor d of next state ns (input ns % M) is ns // M + d * M^(L-2)
    pred = np.arange(n_s)[:, None] // m + high * np.arange(m)[None, :]
    inp = np.arange(n_s) % m
    cost = np.full((batch, n_s), np.inf)
    cost[:, 0] = 0.0
    back = np.empty((n_t, batch, n_s), dtype=np.int64)
    rows = np.arange(batch)[:, None]
    for t in range(n_t):
        isi = np.zeros((batch, n_s), dtype=complex)
        for lag in range(1, n_l):
            sym = pts[digits[:, lag - 1]] if t - lag >= 0 else np.full(n_s, pre[lag - t - 1])
            isi += taps[:, t, lag, None] * sym[None, :]
        expected = isi[:, :, None] + taps[:, t, 0, None, None] * pts[None, None, :]
        branch = metric(y[:, t, None, None], expected)  # (B, S, M)
        cand = cost[:, :, None] + branch
        options = cand[:, pred, inp[:, None]]  # (B, S_next, M predecessors)
        choice = np.argmin(options, axis=2)
        back[t] = pred[np.arange(n_s)[None, :], choice]
        cost = np.take_along_axis(options, choice[..., None], axis=2)[..., 0]
    state = np.argmin(cost, axis=1)
    out = np.empty((batch, n_t), dtype=np.int64)
    for t in range(n_t - 1, -1, -1):
        out[:, t] = state % m
        state = back[t][rows[:, 0], state]
    return out[0] if single else out


# --- end-to-end --------------------------------------------------------------


def pad_window(estimates, window_n: int) -> np.ndarray:
    """Left-pad ``(batch, n_p)`` estimates to ``window_n`` by repeating the
    earliest one; longer records keep their latest ``window_n`` entries."""
    est = np.asarray(estimates, dtype=complex)
    n_p = est.shape[-1]
    if n_p >= window_n:
        return est[..., -window_n:]
    pad = np.repeat(est[..., :1], window_n - n_p, axis=-1)
    return np.concatenate([pad, est], axis=-1)


def _cpsc_batch(ss, batch, *, net, c, f_d, snr_db, n, l_taps, n_p, timing, csi, powers):
    sigma2 = snr_to_sigma2(snr_db)
    n_c = payload_length(n, l_taps, n_p)
    block = timing.block_length(f_d)
    n_blocks = math.ceil(n / block)
    s_taps, s_bits, s_noise = ss.spawn(3)
    h_blocks = np.empty((batch, l_taps, n_blocks), dtype=complex)
    for lag, s in enumerate(s_taps.spawn(l_taps)):
        re, im = make_dataset(f_d, batch, s, timing, length=n_blocks)
        h_blocks[:, lag] = (re + 1j * im) * math.sqrt(powers[lag])
    block_of = np.arange(n) // block
    h = h_blocks[:, :, block_of]  # (B, L, n)

    bits = make_rng(s_bits).integers(0, 2, (batch, n_c * c.bits_per_symbol), dtype=np.uint8)
    sent = _sent_indices(bits, c)
    frame = build_frame(n, l_taps, n_p, np.zeros(n_c))
    body = np.tile(frame.body, (batch, 1))
    body[:, frame.pilot_length:] = c.points[sent]
    y = np.zeros((batch, n), dtype=complex)
    for lag in range(l_taps):
        y += h[:, lag] * np.roll(body, lag, axis=1)
    y += complex_normal(make_rng(s_noise), (batch, n), sigma2)

    data = slice(frame.pilot_length, n)
    if csi == "perfect":
        h_hat = h
    else:
        seq_len = 2 * l_taps - 1
        p = pilot_symbol()
        at = np.arange(n_p)[:, None] * seq_len + l_taps - 1 + np.arange(l_taps)[None, :]
        est = lmmse(y[:, at], p, sigma2)  # (B, n_p, L)
        # blocks up to the last pilot use the pilot average, later blocks
        # the predictions stepped from that block
        known = int(block_of[frame.pilot_length - 1]) + 1
        h_hat_blocks = np.empty_like(h_blocks)
        h_hat_blocks[:, :, :known] = est.mean(axis=1)[:, :, None]
        if n_blocks > known:
            for lag in range(l_taps):
                window = pad_window(est[:, :, lag], net.window_n)
                h_hat_blocks[:, lag, known:] = predict_batch(net, window, n_blocks - known)
        h_hat = h_hat_blocks[:, :, block_of]
    prefix = body[0, frame.pilot_length - 1::-1][: l_taps - 1] if l_taps > 1 else None
    taps_t = np.transpose(h_hat[:, :, data], (0, 2, 1))
    idx = viterbi_detect(y[:, data], taps_t, c, prefix=prefix)
    errors = _bit_errors(idx, bits, c)
    sq = np.mean(np.abs(h_hat[:, :, data] - h[:, :, data]) ** 2, axis=(1, 2))
    return _accumulate(errors, n_c * c.bits_per_symbol, sq, n_c, FrameLayout(max(frame.pilot_length, 1), n_c))


def run_cpsc(net: PredictorNet | None, mod: Constellation, f_d: float, snr_db: float, n_p: int,
             trials: int, seed=0, *, n: int = 128, l_taps: int = 2, csi: str = "predicted",
             timing: ChannelTiming | None = None, tap_powers=None,
             min_errors: int | None = 100, jobs: int = 1) -> ReceiverReport:
    """CPSC link: per-tap pilot estimates, per-tap prediction across the
    frame's coherence blocks, Viterbi detection of the payload.

    Coherence blocks holding pilots use the average of the tap's pilot
    estimates; each later block uses the next predicted coefficient.

    ``tap_powers`` defaults to equal power per tap (total one). The
    observations wrapped in by the cyclic prefix (the first ``L-1`` body
    samples) are not used by the detector.
    """
    if csi not in ("predicted", "perfect"):
        raise ValueError(f"csi must be 'predicted' or 'perfect', got {csi!r}")
    if n_p < 1:
        raise ValueError("at least one pilot sequence is required")
    if csi == "predicted" and net is None:
        raise ValueError("a trained network is required for predicted CSI")
    if payload_length(n, l_taps, n_p) < 1:
        raise ValueError("frame has no room for data")
    powers = np.full(l_taps, 1.0 / l_taps) if tap_powers is None else np.asarray(tap_powers, float)
    if powers.shape != (l_taps,):
        raise ValueError("one power per tap required")
    timing = timing or (net.timing if net is not None else ChannelTiming())
    fn = partial(_cpsc_batch, net=net, c=mod, f_d=f_d, snr_db=snr_db, n=n, l_taps=l_taps,
                 n_p=n_p, timing=timing, csi=csi, powers=powers)
    return monte_carlo(fn, trials, seed, min_errors, batch_size=100, jobs=jobs)
