"""End-to-end flat-fading receivers: fixed horizon, adaptive horizon and
data-decision-driven 1:k prediction, with Monte-Carlo BER accounting.

Every symbol (pilot or data) occupies its own coherence block, so one
trial is a run of consecutive block-rate channel samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import partial
from typing import Callable

import numpy as np

from .adaptive import MseLookupTable, select_n
from .estimation import ChannelEstimate, lmmse, lmmse_target_mse
from .fading import ChannelTiming, complex_normal, make_rng, seed_sequence
from .modem import Constellation, bits_to_indices, ebn0_to_sigma2, ml_detect, pilot_symbol
from .predictor import PredictorNet, make_dataset, predict_batch

CONVERGENCE_CAP = 200
DEFAULT_BATCH = 250


@dataclass(frozen=True)
class FrameLayout:
    """``n_p`` pilots followed by ``k`` data blocks of ``n_c`` symbols."""

    n_p: int = 10
    n_c: int = 100
    k: int = 1

    def __post_init__(self):
        if self.n_p < 1 or self.n_c < 1 or self.k < 1:
            raise ValueError(f"invalid layout {self}")


def efficiency(layout: FrameLayout) -> float:
    """Fraction of channel uses that carry data."""
    data = layout.k * layout.n_c
    return data / (layout.n_p + data)


@dataclass
class ReceiverReport:
    """Counters from a Monte-Carlo run; reports merge by addition."""

    bits_sent: int = 0
    bit_errors: int = 0
    trials: int = 0
    efficiency: float = 0.0
    n_c_sum: float = 0.0
    ber_sum: float = 0.0
    ber_sq_sum: float = 0.0
    mse_sum: float = 0.0
    mse_sq_sum: float = 0.0
    convergence_failures: int = 0
    discarded: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_sent if self.bits_sent else 0.0

    @property
    def prediction_mse(self) -> float:
        return self.mse_sum / self.trials if self.trials else 0.0

    @property
    def n_c_mean(self) -> float:
        return self.n_c_sum / self.trials if self.trials else 0.0

    @property
    def ber_stderr(self) -> float:
        """Standard error of the BER across trials."""
        return _stderr(self.ber_sum, self.ber_sq_sum, self.trials)

    @property
    def mse_stderr(self) -> float:
        return _stderr(self.mse_sum, self.mse_sq_sum, self.trials)

    def __add__(self, other: "ReceiverReport") -> "ReceiverReport":
        out = ReceiverReport()
        for f in fields(self):
            setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        out.efficiency = self.efficiency if self.trials else other.efficiency
        return out


def _stderr(total, sq_total, count) -> float:
    if count < 2:
        return math.inf
    mean = total / count
    var = max(sq_total / count - mean * mean, 0.0) * count / (count - 1)
    return math.sqrt(var / count)


def _accumulate(errors, bits_per_trial, sq_err, n_c, layout, failures=0, discarded=0):
    """Report from per-trial error counts and per-trial mean squared errors."""
    ber_t = errors / bits_per_trial
    return ReceiverReport(
        bits_sent=int(bits_per_trial * len(errors)),
        bit_errors=int(errors.sum()),
        trials=len(errors),
        efficiency=efficiency(layout),
        n_c_sum=float(n_c * len(errors)),
        ber_sum=float(ber_t.sum()),
        ber_sq_sum=float((ber_t ** 2).sum()),
        mse_sum=float(sq_err.sum()),
        mse_sq_sum=float((sq_err ** 2).sum()),
        convergence_failures=int(failures),
        discarded=int(discarded),
    )


def ebn0_to_snr_db(ebn0_db: float, c: Constellation) -> float:
    """Symbol SNR (Es/N0, dB) for unit-energy symbols."""
    return ebn0_db + 10.0 * math.log10(c.bits_per_symbol)


# --- Monte-Carlo driver ------------------------------------------------------


def batch_seed(seed, index: int) -> np.random.SeedSequence:
    """Seed for batch ``index`` of a run; independent of worker count."""
    ss = seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (index,))


def monte_carlo(batch_fn: Callable[[np.random.SeedSequence, int], ReceiverReport],
                trials: int, seed=0, min_errors: int | None = 100,
                batch_size: int = DEFAULT_BATCH, jobs: int = 1) -> ReceiverReport:
    """Run batches until ``min_errors`` bit errors or ``trials`` trials.

    Batches are seeded by index and merged in index order, so the result
    does not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sizes = [min(batch_size, trials - s) for s in range(0, trials, batch_size)]
    total = ReceiverReport()
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        for start in range(0, len(sizes), max(jobs, 1)):
            idx = range(start, min(start + max(jobs, 1), len(sizes)))
            args = [(batch_seed(seed, i), sizes[i]) for i in idx]
            if pool:
                parts = list(pool.map(batch_fn, *zip(*args)))
            else:
                parts = [batch_fn(*a) for a in args]
            for part in parts:
                total = total + part
                if min_errors is not None and total.bit_errors >= min_errors:
                    return total
    finally:
        if pool:
            pool.shutdown()
    return total


# --- receiver core -----------------------------------------------------------


def _draw(ss, batch, length, f_d, timing, c: Constellation, n_data, sigma2):
    """Channel blocks, data bits, noise for one batch (fixed draw order)."""
    s_chan, s_bits, s_noise = ss.spawn(3)
    re, im = make_dataset(f_d, batch, s_chan, timing, length=length)
    h = re + 1j * im
    bits = make_rng(s_bits).integers(0, 2, (batch, n_data * c.bits_per_symbol), dtype=np.uint8)
    noise = complex_normal(make_rng(s_noise), (batch, length), sigma2)
    return h, bits, noise


def refine_estimates(y_data, decoded_symbols, sigma2: float, start_index: int = 0):
    """LMMSE channel estimates treating decoded symbols as pilots."""
    y = np.asarray(y_data, dtype=complex)
    s = np.asarray(decoded_symbols, dtype=complex)
    if y.shape != s.shape:
        raise ValueError("received samples and decoded symbols differ in length")
    values = lmmse(y, s, sigma2)
    return [ChannelEstimate(complex(v), "data_refined", start_index + i)
            for i, v in enumerate(np.ravel(values))]


def _decide(y, h_hat, c):
    idx, _ = ml_detect(y, h_hat, c)
    return idx


def _refine_loop(y, h_pred, c, sigma2, cap=CONVERGENCE_CAP):
    """Decode, refine by LMMSE on the decisions, re-decode until stable.

    Returns ``(indices, refined_estimates, failed_rows)`` for a batch.
    """
    idx = _decide(y, h_pred, c)
    failed = np.ones(len(y), dtype=bool)
    active = np.arange(len(y))
    for _ in range(cap):
        h_ref = lmmse(y[active], c.points[idx[active]], sigma2)
        new = _decide(y[active], h_ref, c)
        same = np.all(new == idx[active], axis=1)
        idx[active] = new
        failed[active[same]] = False
        active = active[~same]
        if active.size == 0:
            break
    refined = lmmse(y, c.points[idx], sigma2)
    return idx, refined, failed


def _bit_errors(idx, bits, c):
    """Per-trial bit errors between detected indices and sent bits."""
    got = c.bit_map[idx].reshape(bits.shape)
    return np.sum(got != bits, axis=1)


def _sent_indices(bits, c):
    """Constellation indices carrying each row of ``bits``."""
    return bits_to_indices(bits, c).reshape(bits.shape[0], -1)


def _pilot_batch(ss, batch, *, predictor, c, f_d, ebn0_db, layout, timing, csi):
    """One batch of the pilot-then-k-data-blocks receiver."""
    sigma2 = ebn0_to_sigma2(ebn0_db, c.m)
    n_p, n_c, k = layout.n_p, layout.n_c, layout.k
    n_data = k * n_c
    h, bits, noise = _draw(ss, batch, n_p + n_data, f_d, timing, c, n_data, sigma2)
    p = pilot_symbol()
    window = lmmse(h[:, :n_p] * p + noise[:, :n_p], p, sigma2)
    sent = _sent_indices(bits, c)
    y = h[:, n_p:] * c.points[sent] + noise[:, n_p:]
    decided = np.empty_like(sent)
    sq = np.zeros(batch)
    failures = 0
    for j in range(k):
        block = slice(j * n_c, (j + 1) * n_c)
        truth = h[:, n_p:][:, block]
        h_hat = truth if csi == "perfect" else predictor(window, n_c)
        sq += np.sum(np.abs(h_hat - truth) ** 2, axis=1)
        if j < k - 1:
            idx, refined, failed = _refine_loop(y[:, block], h_hat, c, sigma2)
            failures += int(failed.sum())
            window = np.concatenate([window, refined], axis=1)[:, -n_p:]
        else:
            idx = _decide(y[:, block], h_hat, c)
        decided[:, block] = idx
    errors = _bit_errors(decided, bits, c)
    return _accumulate(errors, n_data * c.bits_per_symbol, sq / n_data, n_c, layout, failures)


def net_predictor(net: PredictorNet):
    return partial(predict_batch, net)


def _window_fit(net: PredictorNet | None, layout: FrameLayout) -> FrameLayout:
    if net is not None and layout.n_p != net.window_n:
        raise ValueError(f"predictor expects {net.window_n} pilots, layout has {layout.n_p}")
    return layout


def run_fixed(net: PredictorNet | None, mod: Constellation, f_d: float, ebn0_db: float,
              n_preds: int, trials: int, seed=0, *, csi: str = "predicted",
              timing: ChannelTiming | None = None, min_errors: int | None = 100,
              jobs: int = 1, n_p: int = 10) -> ReceiverReport:
    """Fixed-horizon predictor-aided receiver.

    With ``csi="perfect"`` detection uses the true coefficients and ``net``
    may be None.
    """
    if csi not in ("predicted", "perfect"):
        raise ValueError(f"csi must be 'predicted' or 'perfect', got {csi!r}")
    if csi == "predicted" and net is None:
        raise ValueError("a trained network is required for predicted CSI")
    layout = _window_fit(net if csi == "predicted" else None, FrameLayout(n_p, n_preds, 1))
    timing = timing or (net.timing if net is not None else ChannelTiming())
    fn = partial(_pilot_batch, predictor=net_predictor(net) if net else None, c=mod, f_d=f_d,
                 ebn0_db=ebn0_db, layout=layout, timing=timing, csi=csi)
    return monte_carlo(fn, trials, seed, min_errors, jobs=jobs)


def adaptive_horizon(net: PredictorNet, lut: MseLookupTable, mod: Constellation,
                     f_d: float, ebn0_db: float) -> int:
    """Horizon chosen for an operating point; the target is the pilot LMMSE MSE."""
    sigma2 = ebn0_to_sigma2(ebn0_db, mod.m)
    snr_db = ebn0_to_snr_db(ebn0_db, mod)
    return select_n(lut, snr_db, f_d, lmmse_target_mse(sigma2), fingerprint=net.fingerprint())


def run_adaptive(net: PredictorNet, lut: MseLookupTable, mod: Constellation, f_d: float,
                 ebn0_db: float, trials: int, seed=0, **kw) -> ReceiverReport:
    """Predictor-aided receiver with the horizon picked from the lookup table."""
    n_c = adaptive_horizon(net, lut, mod, f_d, ebn0_db)
    return run_fixed(net, mod, f_d, ebn0_db, n_c, trials, seed, **kw)


def run_data_driven(net: PredictorNet, lut: MseLookupTable, mod: Constellation, f_d: float,
                    ebn0_db: float, k: int, trials: int, seed=0, *,
                    min_errors: int | None = 100, jobs: int = 1) -> ReceiverReport:
    """1:k scheme: one pilot block, then k data blocks whose decisions are
    refined into new predictor inputs."""
    n_c = adaptive_horizon(net, lut, mod, f_d, ebn0_db)
    layout = _window_fit(net, FrameLayout(net.window_n, n_c, k))
    fn = partial(_pilot_batch, predictor=net_predictor(net), c=mod, f_d=f_d, ebn0_db=ebn0_db,
                 layout=layout, timing=net.timing, csi="predicted")
    return monte_carlo(fn, trials, seed, min_errors, jobs=jobs)
