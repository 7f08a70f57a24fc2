"""Adaptive prediction horizon and the comparison receivers.

Every frame starts with ten pilots. The predictor then covers N_c data
symbols. A lookup table of prediction MSE against horizon, Doppler and
SNR lets the receiver pick the longest N_c whose MSE stays below what a
pilot would achieve. The same frame efficiency is then given to pilot
interpolation and to an AR(2) predictor for comparison.

Needs the model from demo 03.

Run:  python demos/04_adaptive_receiver.py
"""

from pathlib import Path

import numpy as np

from fadecast.adaptive import build_lut
from fadecast.baseline import run_ar2_receiver, run_lmmse_li_receiver
from fadecast.modem import gray_qam
from fadecast.predictor import PredictorNet
from fadecast.receiver import adaptive_horizon, run_adaptive, run_data_driven

model = Path(__file__).with_name("out") / "predictor.fcp"
if not model.exists():
    raise SystemExit("run demos/03_train_predictor.py first")
net = PredictorNet.load(model)
lut = build_lut(net, d_grid=(50.0,), trials=200, seed=1)
qam16 = gray_qam(16)

print("chosen horizon against Eb/N0")
for ebn0 in range(0, 41, 5):
    print(f"  {ebn0:2d} dB -> N_c = {adaptive_horizon(net, lut, qam16, 50.0, ebn0)}")

ebn0 = 10.0
ra = run_adaptive(net, lut, qam16, 50.0, ebn0, 1000, seed=1, min_errors=None)
n_c = int(round(ra.n_c_mean))
rl = run_lmmse_li_receiver(qam16, 50.0, ebn0, 10, n_c, 1000, seed=2, min_errors=None)
rr = run_ar2_receiver(qam16, 50.0, ebn0, None, 1000, seed=3, n_preds=n_c, min_errors=None)
print(f"16-QAM at {ebn0:.0f} dB, efficiency {ra.efficiency:.3f}")
for name, r in (("adaptive predictor", ra), ("pilot interpolation", rl), ("AR(2)", rr)):
    print(f"  {name:20s} BER {r.ber:.3e} +- {r.ber_stderr:.1e}")

print("decision-directed refinement, one pilot block per k data blocks")
for k in (1, 5, 10):
    r = run_data_driven(net, lut, qam16, 50.0, 30.0, k, 300, seed=4, min_errors=None)
    print(f"  k={k:2d}: efficiency {r.efficiency:.3f}, BER {r.ber:.2e}, MSE {r.prediction_mse:.2e}")
