"""Block transmission over a frequency-selective, time-varying channel.

A cyclic-prefix single-carrier frame carries pilot sequences and data.
The prefix makes the multipath channel act circularly on the frame body.
Each tap is estimated from the pilots, predicted across the frame's
coherence blocks and handed to a Viterbi detector.

Needs the model from demo 03.

Run:  python demos/05_cpsc_viterbi.py
"""

from pathlib import Path

import numpy as np

from fadecast.cpsc import apply_doubly_selective, build_frame, run_cpsc, viterbi_detect
from fadecast.fading import complex_normal, make_rng
from fadecast.modem import gray_qam
from fadecast.predictor import PredictorNet

qam4 = gray_qam(4)
rng = make_rng(0)

# One frame of 128 symbols, two taps, two pilot sequences.
n_c = 128 - 2 * 3
data = rng.integers(0, 4, n_c)
frame = build_frame(128, 2, 2, qam4.points[data])
print(f"payload {frame.n_c} symbols, prefix {frame.cp.size} symbol")

# A static two-tap channel at high SNR: Viterbi recovers the payload.
taps = complex_normal(rng, 2) / np.sqrt(2)
y = apply_doubly_selective(frame, [np.full(128, t) for t in taps], 1e-3, seed=1)
body = slice(frame.pilot_length, 128)
known = np.tile(taps, (n_c, 1))
detected = viterbi_detect(y[body], known, qam4, prefix=frame.body[frame.pilot_length - 1::-1][:1])
print(f"symbol errors with known taps: {np.sum(detected != data)}")

model = Path(__file__).with_name("out") / "predictor.fcp"
if not model.exists():
    raise SystemExit("run demos/03_train_predictor.py first for the predicted-CSI sweep")
net = PredictorNet.load(model)
print("SNR   perfect   n_p=2     n_p=4")
for snr in range(0, 31, 10):
    perfect = run_cpsc(None, qam4, 50.0, snr, 2, 300, seed=snr, csi="perfect", min_errors=None)
    two = run_cpsc(net, qam4, 50.0, snr, 2, 300, seed=snr, min_errors=None)
    four = run_cpsc(net, qam4, 50.0, snr, 4, 300, seed=snr, min_errors=None)
    print(f"{snr:3d}   {perfect.ber:.2e}  {two.ber:.2e}  {four.ber:.2e}")
