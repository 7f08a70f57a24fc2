"""A first look at the fading channel.

A mobile receiver sees the transmitted signal through a complex gain h(t)
that drifts as the user moves. Under Clarke's isotropic scattering model
the gain is a unit-power complex Gaussian process whose autocorrelation
is J0(2 pi f_D dt) and whose spectrum is the U-shaped Jakes spectrum.

Run:  python demos/01_fading_channel.py
"""

import numpy as np

from fadecast.fading import (
    ChannelTiming,
    bessel_j0,
    block_records,
    coherence_block_length,
    generate_fading,
    max_doppler,
)

# Doppler follows from speed and carrier: 27 km/h at 2 GHz gives 50 Hz.
f_d = max_doppler(27 / 3.6, 2e9)
print(f"max Doppler at 27 km/h, 2 GHz: {f_d:.1f} Hz")

# Smith's frequency-domain generator shapes white noise by sqrt(S(f)).
t_s = 1e-4
g = generate_fading(1 << 18, 50.0, t_s, seed=1).gains
print(f"mean power {np.mean(np.abs(g) ** 2):.4f}")

# Compare the time-averaged autocorrelation with the Bessel function.
lags = np.array([0, 10, 20, 50, 100, 200])
acf = [np.vdot(g[:-lag or None], g[lag:]).real / (len(g) - lag) for lag in lags]
for lag, a in zip(lags, acf):
    print(f"  lag {lag:4d}: empirical {a:+.3f}   J0 {bessel_j0(2 * np.pi * 50 * lag * t_s):+.3f}")

# Nothing should leak outside the Doppler band.
psd = np.abs(np.fft.fft(g)) ** 2
freqs = np.fft.fftfreq(len(g), t_s)
print(f"power beyond f_D: {psd[np.abs(freqs) > 50].sum() / psd.sum():.2e}")

# The receivers work at one channel sample per coherence block.
for f in (10.0, 50.0, 100.0):
    print(f"coherence block at {f:5.1f} Hz: {coherence_block_length(f)} symbols")

# Independent short records for Monte-Carlo: each row is its own channel.
timing = ChannelTiming()
rows = block_records(50.0, 4, 8, timing, seed=2)
print("four independent 8-block records, magnitude:")
print(np.round(np.abs(rows), 3))
