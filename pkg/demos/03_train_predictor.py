"""Training the recurrent channel predictor.

Two LSTM networks, one for the real and one for the imaginary part, read
a window of past channel samples and roll forward, feeding each output
back as the next input. Training uses teacher forcing, a learning rate
that drops on plateaus and an early stop.

The default here is a small network so the demo finishes in under a minute.
Pass ``desk`` for the desk-scale preset (several minutes).

Run:  python demos/03_train_predictor.py [desk]
"""

import sys
import time
from pathlib import Path

import numpy as np

from fadecast.adaptive import prediction_errors
from fadecast.predictor import TrainingConfig, predict, train
from fadecast.fading import block_records

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

if sys.argv[1:] == ["desk"]:
    cfg = TrainingConfig.desk()
else:
    cfg = TrainingConfig.desk(hidden_size=32, max_epochs=80, min_epochs=20, batches_per_epoch=256,
                              dataset_size=2000, plateau_patience=5, early_stop_patience=10)
print(f"hidden {cfg.hidden_size}, window {cfg.window}, horizon {cfg.horizon}, "
      f"epochs {cfg.min_epochs}-{cfg.max_epochs}")

start = time.time()


def progress(epoch, report, _net):
    if epoch % 5 == 0:
        print(f"  epoch {epoch:3d}  train {report.train_loss[-1]:.2e}  val {report.val_loss[-1]:.2e}"
              f"  lr {report.lr[-1]:.0e}")


net, report = train(cfg, progress=progress)
print(f"stopped by {report.stop_reason} after {report.epochs} epochs in {time.time() - start:.0f} s; "
      f"best validation {min(report.val_loss):.2e}")
net.save(OUT / "predictor.fcp")

# Predict one channel 20 blocks ahead from ten noiseless samples.
h = block_records(50.0, 1, 30, net.timing, seed=11)[0]
pred = predict(net, h[:10], 20)
print("step  |error|")
for step in (1, 5, 10, 20):
    print(f"  {step:3d}  {abs(pred[step - 1] - h[9 + step]):.3f}")

# Error grows with horizon; this drives the adaptive receiver.
sq = prediction_errors(net, 50.0, 20.0, 100, 300, seed=1)
for n in (10, 50, 100):
    print(f"mean MSE over the first {n:3d} predictions at 20 dB: {sq[:, :n].mean():.2e}")
