"""Shared oracles for the test suite."""

import itertools

import numpy as np

from fadecast.nn import RecurrentNet, bptt, mse_loss, rollout


def finite_difference_error(seed: int, eps: float = 1e-5) -> float:
    """Worst relative error between BPTT and central differences for one
    random small net (hidden <= 8, horizon <= 8, random teacher mask)."""
    rng = np.random.default_rng(seed)
    hidden = int(rng.integers(2, 9))
    layers = int(rng.integers(1, 3))
    n = int(rng.integers(1, 5))
    horizon = int(rng.integers(1, 9))
    batch = 2
    net = RecurrentNet.initialize(hidden, layers, seed=seed)
    for p in net.parameters():
        p *= 3.0  # leave the near-linear regime
    window = rng.normal(size=(batch, n))
    target = rng.normal(size=(batch, horizon))
    mask = rng.random((batch, horizon - 1)) < 0.3
    _, grads, _ = bptt(net, window, target, mask)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = mse_loss(rollout(net, window, horizon, target, mask)[0], target)[0]
            p[idx] = old - eps
            down = mse_loss(rollout(net, window, horizon, target, mask)[0], target)[0]
            p[idx] = old
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    return worst


def brute_force_ml(y, taps, points, prefix):
    """Exhaustive ML sequence search over all ``M^N`` candidate sequences.

    ``taps[l][t]`` is the coefficient at delay ``l`` applied at time ``t``;
    ``prefix`` holds the ``L-1`` known symbols preceding the sequence
    (earliest first). Ties keep the lexicographically first sequence.
    """
    y = np.asarray(y, dtype=complex)
    taps = np.asarray(taps, dtype=complex)
    n, n_taps = len(y), len(taps)
    cands = np.array(list(itertools.product(range(len(points)), repeat=n)))
    pre = np.broadcast_to(np.asarray(prefix, dtype=complex), (len(cands), n_taps - 1))
    s = np.concatenate([pre, points[cands]], axis=1)
    cost = np.zeros(len(cands))
    for t in range(n):
        expected = sum(taps[l][t] * s[:, t + n_taps - 1 - l] for l in range(n_taps))
        cost += np.abs(y[t] - expected) ** 2
    return cands[np.argmin(cost)]
