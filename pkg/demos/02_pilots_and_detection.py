"""Pilots, LMMSE estimates and symbol detection.

A known pilot p is sent, the receiver sees y = h p + n and forms the
LMMSE estimate conj(p) y / (|p|^2 + sigma^2). Its error is
sigma^2 / (|p|^2 + sigma^2). With the channel known, Gray-coded QAM over
Rayleigh fading has a closed-form bit error rate that the simulator has
to reproduce.

Run:  python demos/02_pilots_and_detection.py
"""

import numpy as np

from fadecast.estimation import lmmse, lmmse_target_mse
from fadecast.fading import complex_normal, make_rng
from fadecast.modem import gray_qam, pilot_symbol, rayleigh_ber_4qam
from fadecast.receiver import run_fixed

rng = make_rng(0)
p = pilot_symbol()
print("LMMSE estimation error, Monte-Carlo vs closed form")
for sigma2 in (0.01, 0.1, 1.0):
    h = complex_normal(rng, 100_000)
    y = h * p + complex_normal(rng, 100_000, sigma2)
    mse = np.mean(np.abs(lmmse(y, p, sigma2) - h) ** 2)
    print(f"  sigma2 {sigma2:5.2f}: {mse:.4f} vs {lmmse_target_mse(sigma2):.4f}")

# Gray mapping: neighbouring points differ in one bit.
qam16 = gray_qam(16)
print("16-QAM labels on the first row:", ["".join(map(str, b)) for b in qam16.bit_map[:4]])

# Perfect channel knowledge gives the textbook Rayleigh curve.
qam4 = gray_qam(4)
print("4-QAM over Rayleigh fading with perfect CSI")
for ebn0 in (0, 10, 20):
    r = run_fixed(None, qam4, 50.0, ebn0, 100, 3000, seed=ebn0, csi="perfect", min_errors=None)
    print(f"  Eb/N0 {ebn0:2d} dB: simulated {r.ber:.2e}, closed form {rayleigh_ber_4qam(ebn0):.2e}")
