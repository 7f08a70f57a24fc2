"""The thirteen acceptance criteria, each at its stated tolerance.

A one-line pass/fail summary per criterion is printed at the end of the
session. Criteria that need a trained network share one desk-preset run
(cached between sessions, see ``conftest.py``).
"""

import dataclasses
import math

import numpy as np
import pytest

from fadecast import cli
from fadecast.adaptive import build_lut, prediction_errors, select_n
from fadecast.baseline import run_ar2_receiver, run_lmmse_li_receiver
from fadecast.cpsc import run_cpsc, viterbi_detect
from fadecast.estimation import lmmse, lmmse_target_mse
from fadecast.fading import bessel_j0, complex_normal, generate_fading, make_rng
from fadecast.modem import gray_qam, pilot_symbol, rayleigh_ber_4qam, snr_to_sigma2
from fadecast.predictor import PredictorNet
from fadecast.receiver import FrameLayout, efficiency, run_adaptive, run_data_driven, run_fixed
from helpers import brute_force_ml, finite_difference_error

from conftest import trained

QAM4, QAM16 = gray_qam(4), gray_qam(16)


def within(a, b, sa, sb, k=2.0):
    """``|a - b|`` within ``k`` combined standard errors."""
    return abs(a - b) <= k * math.hypot(sa, sb)


def not_above(a, b, sa, sb, k=2.0):
    """``a <= b`` up to ``k`` combined standard errors."""
    return a <= b + k * math.hypot(sa, sb)


def clearly_below(a, b, sa, sb, k=2.0):
    """``a < b`` by more than ``k`` combined standard errors."""
    return a + k * math.hypot(sa, sb) < b


@pytest.fixture(scope="module")
def lut50(desk_net):
    return build_lut(desk_net, d_grid=(50.0,), trials=300, seed=3)


# --- channel and estimation ------------------------------------------------------


def empirical_acf(h, max_lag):
    n = len(h)
    r = np.fft.ifft(np.abs(np.fft.fft(h, 2 * n)) ** 2)[: max_lag + 1]
    return (r / (n - np.arange(max_lag + 1))).real


def test_01_fading_statistics(record):
    t_s, n = 1e-4, 1 << 20
    worst_acf, worst_power, worst_oob = 0.0, 0.0, 0.0
    for i, f_d in enumerate((10.0, 50.0, 100.0)):
        g = generate_fading(n, f_d, t_s, seed=i).gains
        max_lag = int(80 / (2 * np.pi * f_d * t_s))
        lags = np.arange(max_lag + 1)
        ref = bessel_j0(2 * np.pi * f_d * lags * t_s)
        keep = np.abs(ref) >= 0.1
        worst_acf = max(worst_acf, np.max(np.abs(empirical_acf(g, max_lag) - ref)[keep]))
        worst_power = max(worst_power, abs(np.mean(np.abs(g) ** 2) - 1.0))
        psd = np.abs(np.fft.fft(g)) ** 2
        freqs = np.fft.fftfreq(n, t_s)
        worst_oob = max(worst_oob, psd[np.abs(freqs) > f_d].sum() / psd.sum())
    ok = worst_acf <= 0.02 and worst_power <= 0.01 and worst_oob < 0.01
    record(1, ok, f"fading: max ACF err {worst_acf:.4f}, power err {worst_power:.2e}, "
                  f"out-of-band {worst_oob:.2e}")
    assert ok


def test_02_lmmse_oracle(record):
    rng = make_rng(2)
    p = pilot_symbol()
    worst = 0.0
    for sigma2 in (0.01, 0.1, 1.0):
        h = complex_normal(rng, 100_000)
        y = h * p + complex_normal(rng, 100_000, sigma2)
        mse = np.mean(np.abs(lmmse(y, p, sigma2) - h) ** 2)
        worst = max(worst, abs(mse / (sigma2 / (abs(p) ** 2 + sigma2)) - 1))
    record(2, worst <= 0.02, f"LMMSE MSE worst relative error {worst:.4f}")
    assert worst <= 0.02


def test_03_gradients(record):
    worst = max(finite_difference_error(seed) for seed in range(20))
    record(3, worst <= 1e-4, f"BPTT vs finite differences, 20 nets, max rel err {worst:.2e}")
    assert worst <= 1e-4


def test_04_parameter_counts(record):
    counts = [PredictorNet.initialize(100, layers).parameter_count() for layers in (1, 2, 3)]
    ok = counts == [41301, 122101, 202901]
    record(4, ok, f"parameter counts {counts}")
    assert ok


def test_05_perfect_csi_chain(record):
    r = run_fixed(None, QAM4, 50.0, 10.0, 100, 20_000, seed=5, csi="perfect", min_errors=None)
    expected = rayleigh_ber_4qam(10.0)
    rel = abs(r.ber / expected - 1)
    ok = rel <= 0.05 and r.bit_errors >= 100 and abs(expected - 0.02327) < 1e-5
    record(5, ok, f"perfect-CSI 4-QAM BER {r.ber:.5f} vs {expected:.5f} ({r.bit_errors} errors)")
    assert ok


# --- training and prediction -------------------------------------------------------


def test_06_training(request, record, desk_run, desk_config):
    net, rep = desk_run
    plain_cfg = dataclasses.replace(desk_config.without_enhancements(), max_epochs=rep.epochs,
                                    min_epochs=min(desk_config.min_epochs, rep.epochs))
    _, plain = trained(request, plain_cfg)
    final_val = min(rep.val_loss)
    plain_val = min(plain.val_loss)
    early = rep.stop_reason == "early_stop" and rep.epochs < desk_config.max_epochs
    ok = early and final_val < 5e-3 and plain_val > final_val
    record(6, ok, f"training: stop={rep.stop_reason} after {rep.epochs} epochs, val {final_val:.2e}; "
                  f"without enhancements val {plain_val:.2e}")
    assert ok


def test_07_horizon_monotonicity(record, desk_net):
    sq = prediction_errors(desk_net, 50.0, 20.0, 100, 500, seed=7)
    m10, m100 = sq[:, :10].mean(), sq.mean()
    record(7, m100 > m10, f"MSE(N=10) {m10:.3e} < MSE(N=100) {m100:.3e}")
    assert m100 > m10


def unimodal(seq):
    k = int(np.argmax(seq))
    return all(a <= b for a, b in zip(seq[:k], seq[1:k + 1])) and all(
        a >= b for a, b in zip(seq[k:], seq[k + 1:]))


def test_08_adaptive_bell_shape(record, lut50):
    snrs = np.arange(-5.0, 40.0, 1.0)
    n_c = [select_n(lut50, s, 50.0, lmmse_target_mse(snr_to_sigma2(s))) for s in snrs]
    bins = [max(n for s, n in zip(snrs, n_c) if lo <= s < lo + 5) for lo in range(-5, 40, 5)]
    ok = unimodal(bins)
    record(8, ok, f"N_c bin maxima {bins}")
    assert ok


def test_09_scheme_ordering(record, desk_net, lut50):
    ra = run_adaptive(desk_net, lut50, QAM16, 50.0, 10.0, 4000, seed=1, min_errors=None)
    n_c = int(round(ra.n_c_mean))
    rl = run_lmmse_li_receiver(QAM16, 50.0, 10.0, 10, n_c, 4000, seed=2, min_errors=None)
    rr = run_ar2_receiver(QAM16, 50.0, 10.0, None, 4000, seed=3, n_preds=n_c, min_errors=None)
    ok = (clearly_below(ra.ber, rl.ber, ra.ber_stderr, rl.ber_stderr)
          and clearly_below(ra.ber, rr.ber, ra.ber_stderr, rr.ber_stderr)
          and ra.efficiency == rl.efficiency == rr.efficiency)
    record(9, ok, f"16-QAM 10 dB, N_c={n_c}: adaptive {ra.ber:.3e}±{ra.ber_stderr:.1e}, "
                  f"LMMSE+LI {rl.ber:.3e}±{rl.ber_stderr:.1e}, AR2 {rr.ber:.3e}±{rr.ber_stderr:.1e}")
    assert ok


def test_10_data_driven(record, desk_net, lut50):
    res = {}
    for ebn0 in (5.0, 30.0):
        for k in (1, 5, 10):
            r = run_data_driven(desk_net, lut50, QAM16, 50.0, ebn0, k, 2000, seed=4, min_errors=None)
            res[ebn0, k] = (r.prediction_mse, r.mse_stderr)
    low = [res[5.0, k] for k in (1, 5, 10)]
    high = [res[30.0, k] for k in (1, 5, 10)]
    ordered = all(not_above(a[0], b[0], a[1], b[1]) for a, b in zip(low, low[1:]))
    agree = all(within(a[0], b[0], a[1], b[1]) for i, a in enumerate(high) for b in high[i + 1:])
    effs = [efficiency(FrameLayout(*layout)) for layout in ((10, 100, 1), (10, 100, 10), (10, 5, 1))]
    eff_ok = effs == [100 / 110, 1000 / 1010, 5 / 15] and [round(e, 3) for e in effs] == [0.909, 0.99, 0.333]
    ok = ordered and agree and eff_ok
    fmt = lambda v: "/".join(f"{m:.2e}" for m, _ in v)
    record(10, ok, f"data-driven MSE k=1/5/10 at 5 dB {fmt(low)} (ordered={ordered}), "
                   f"at 30 dB {fmt(high)} (agree={agree}); efficiencies ok={eff_ok}")
    assert ok


# --- CPSC ---------------------------------------------------------------------------


def test_11_viterbi_exactness(record):
    mismatches = 0
    for seed in range(100):
        rng = make_rng(1000 + seed)
        taps = complex_normal(rng, (2, 8))
        prefix = QAM4.points[rng.integers(0, 4, 1)]
        y = complex_normal(rng, 8)
        got = viterbi_detect(y, taps.T, QAM4, prefix=prefix[::-1])
        mismatches += not np.array_equal(got, brute_force_ml(y, taps, QAM4.points, prefix))
    record(11, mismatches == 0, f"Viterbi vs exhaustive search: {mismatches}/100 mismatches")
    assert mismatches == 0


def test_12_cpsc_ordering(record, desk_net):
    snrs = range(0, 31, 5)
    runs = {}
    for label, n_p, csi in (("np2", 2, "predicted"), ("np4", 4, "predicted"), ("perfect", 4, "perfect")):
        runs[label] = [run_cpsc(desk_net if csi == "predicted" else None, QAM4, 50.0, s, n_p, 1000,
                                seed=12, csi=csi, min_errors=None) for s in snrs]
    pilots_ok = all(not_above(a.ber, b.ber, a.ber_stderr, b.ber_stderr)
                    for a, b in zip(runs["np4"], runs["np2"]))
    csi_ok = all(not_above(p.ber, q.ber, p.ber_stderr, q.ber_stderr)
                 for key in ("np2", "np4") for p, q in zip(runs["perfect"], runs[key]))
    ok = pilots_ok and csi_ok
    fmt = lambda rs: "/".join(f"{r.ber:.1e}" for r in rs)
    record(12, ok, f"CPSC BER n_p=2 {fmt(runs['np2'])}; n_p=4 {fmt(runs['np4'])}; "
                   f"perfect {fmt(runs['perfect'])}")
    assert ok


# --- tooling ------------------------------------------------------------------------


def test_13_determinism(record, tmp_path):
    tiny = ["hidden_size=4", "batches_per_epoch=32", "batch_size=16", "min_epochs=1", "max_epochs=2",
            "dataset_size=100", "horizon=5", "val_sequences=10"]
    sets = [a for item in tiny for a in ("--set", item)]

    def commands(d):
        m, lut, trace = d / "m.fcp", d / "lut.csv", d / "h.csv"
        return [
            ["gen-channel", "--fd", "50", "--n", "64", "--out", trace],
            ["train", "--preset", "desk", *sets, "--out", m, "--report", d / "train.csv"],
            ["predict", "--model", m, "--estimates", trace, "--n-preds", "5", "--out", d / "p.csv"],
            ["build-lut", "--model", m, "--trials", "10", "--n-grid", "5:5:10", "--d-grid", "50",
             "--snr-grid", "0:10:20", "--out", lut],
            ["run-ber", "--model", m, "--lut", lut, "--ebn0", "0:10:20", "--trials", "50", "--out", d / "b.csv"],
            ["run-cpsc", "--model", m, "--snr", "10,20", "--trials", "20", "--out", d / "c.csv"],
            ["report", d / "b.csv", "--out", d / "r.csv"],
        ]

    outputs = ("h.csv", "train.csv", "p.csv", "lut.csv", "b.csv", "c.csv", "r.csv")
    bodies = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        for argv in commands(d):
            assert cli.main([str(a) for a in argv] + ["--seed", "13"]) == 0
        bodies.append(["".join(ln for ln in (d / f).read_text().splitlines(True) if not ln.startswith("#"))
                       for f in outputs])
    same = [a == b for a, b in zip(*bodies)]
    record(13, all(same), f"byte-identical bodies per output: {dict(zip(outputs, same))}")
    assert all(same)
