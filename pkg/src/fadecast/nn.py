"""Small hand-differentiated recurrent network: stacked LSTM plus dense head.

Everything is float64. Gradients are derived by hand for the one topology
used here (LSTM layers -> linear head, with the head output optionally fed
back as the next LSTM input) and checked against finite differences in the
test suite.

Parameter flat order, used by serialization and by the optimizer::

    for each LSTM layer k = 0..num_layers-1:
        w_ih[k]  (4H, in_k)   gates stacked as input, forget, cell, output
        w_hh[k]  (4H, H)
        b_ih[k]  (4H,)
        b_hh[k]  (4H,)
    dense.weights  (out, H)
    dense.bias     (out,)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent dense shapes {self.weights.shape} / {self.bias.shape}"
            )
        if self.activation != "linear":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    """``W x + b`` over the trailing axis of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_features:
        raise ValueError(f"dense expects {layer.in_features} inputs, got {x.shape[-1]}")
    return x @ layer.weights.T + layer.bias


@dataclass
class LstmCell:
    """Stacked unidirectional LSTM with separate input-side and recurrent-side biases."""

    input_size: int
    hidden_size: int
    num_layers: int
    w_ih: list = field(default_factory=list)
    w_hh: list = field(default_factory=list)
    b_ih: list = field(default_factory=list)
    b_hh: list = field(default_factory=list)

    def __post_init__(self):
        h = self.hidden_size
        if len(self.w_ih) != self.num_layers:
            raise ValueError("one weight set per layer required")
        for k in range(self.num_layers):
            in_k = self.input_size if k == 0 else h
            self.w_ih[k] = np.asarray(self.w_ih[k], dtype=float)
            self.w_hh[k] = np.asarray(self.w_hh[k], dtype=float)
            self.b_ih[k] = np.asarray(self.b_ih[k], dtype=float)
            self.b_hh[k] = np.asarray(self.b_hh[k], dtype=float)
            expected = [(4 * h, in_k), (4 * h, h), (4 * h,), (4 * h,)]
            got = [self.w_ih[k].shape, self.w_hh[k].shape, self.b_ih[k].shape, self.b_hh[k].shape]
            if got != expected:
                raise ValueError(f"layer {k}: shapes {got}, expected {expected}")

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, num_layers: int = 1) -> "LstmCell":
        h = hidden_size
        sizes = [input_size] + [h] * (num_layers - 1)
        return cls(
            input_size, hidden_size, num_layers,
            [np.zeros((4 * h, s)) for s in sizes],
            [np.zeros((4 * h, h)) for _ in sizes],
            [np.zeros(4 * h) for _ in sizes],
            [np.zeros(4 * h) for _ in sizes],
        )

    def parameters(self) -> list:
        out = []
        for k in range(self.num_layers):
            out += [self.w_ih[k], self.w_hh[k], self.b_ih[k], self.b_hh[k]]
        return out


def lstm_layer_step(w_ih, w_hh, b_ih, b_hh, x, h_prev, c_prev):
    """One LSTM layer step; returns ``(h, c, gates)`` with gates = (i, f, g, o)."""
    hidden = h_prev.shape[-1]
    a = h_prev @ w_hh.T
    a += x @ w_ih.T if x.shape[-1] > 1 else x * w_ih[:, 0]
    a += b_ih + b_hh
    # sigmoid(z) = (1 + tanh(z/2)) / 2 on the i, f, o blocks, tanh on g
    a[..., :2 * hidden] *= 0.5
    a[..., 3 * hidden:] *= 0.5
    np.tanh(a, out=a)
    a[..., :2 * hidden] += 1.0
    a[..., :2 * hidden] *= 0.5
    a[..., 3 * hidden:] += 1.0
    a[..., 3 * hidden:] *= 0.5
    i = a[..., :hidden]
    f = a[..., hidden:2 * hidden]
    g = a[..., 2 * hidden:3 * hidden]
    o = a[..., 3 * hidden:]
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (i, f, g, o)


def lstm_forward(cell: LstmCell, x_t, s_prev, c_prev):
    """Advance every layer of ``cell`` by one time step.

    ``s_prev`` and ``c_prev`` have a leading layer axis:
    ``(num_layers, ..., hidden)``. Returns the new ``(s, c)`` stacks.
    """
    x = np.asarray(x_t, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    if x.shape[-1] != cell.input_size:
        raise ValueError(f"LSTM expects input size {cell.input_size}, got {x.shape[-1]}")
    if s_prev.shape[0] != cell.num_layers or s_prev.shape[-1] != cell.hidden_size:
        raise ValueError(f"state shape {s_prev.shape} does not match the cell")
    if c_prev.shape != s_prev.shape:
        raise ValueError("hidden and cell state shapes differ")
    s_new = np.empty(s_prev.shape[:1] + np.broadcast_shapes(x.shape[:-1], s_prev.shape[1:-1]) + (cell.hidden_size,))
    c_new = np.empty_like(s_new)
    inp = x
    for k in range(cell.num_layers):
        h, c, _ = lstm_layer_step(
            cell.w_ih[k], cell.w_hh[k], cell.b_ih[k], cell.b_hh[k], inp, s_prev[k], c_prev[k]
        )
        s_new[k], c_new[k] = h, c
        inp = h
    return s_new, c_new


def mse_loss(x_hat, x):
    """Mean squared error and its gradient with respect to ``x_hat``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    diff = x_hat - x
    n = diff.size
    if n == 0:
        return 0.0, np.zeros_like(diff)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class RecurrentNet:
    """LSTM stack followed by a linear head (one scalar output per step)."""

    lstm: LstmCell
    head: DenseLayer

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    @property
    def num_layers(self) -> int:
        return self.lstm.num_layers

    def parameters(self) -> list:
        return self.lstm.parameters() + [self.head.weights, self.head.bias]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "RecurrentNet":
        return RecurrentNet.from_flat(
            self.lstm.input_size, self.hidden_size, self.num_layers,
            [p.copy() for p in self.parameters()],
        )

    @classmethod
    def from_flat(cls, input_size, hidden_size, num_layers, params) -> "RecurrentNet":
        params = list(params)
        lstm = LstmCell(
            input_size, hidden_size, num_layers,
            params[0:4 * num_layers:4], params[1:4 * num_layers:4],
            params[2:4 * num_layers:4], params[3:4 * num_layers:4],
        )
        head = DenseLayer(params[4 * num_layers], params[4 * num_layers + 1])
        return cls(lstm, head)

    @classmethod
    def initialize(cls, hidden_size: int = 100, num_layers: int = 1, seed=0,
                   input_size: int = 1) -> "RecurrentNet":
        """Uniform ``[-1/sqrt(H), 1/sqrt(H)]`` initialization of every parameter."""
        rng = np.random.Generator(np.random.PCG64(seed))
        bound = 1.0 / math.sqrt(hidden_size)
        template = cls.from_flat(
            input_size, hidden_size, num_layers,
            _zero_params(input_size, hidden_size, num_layers),
        )
        params = [rng.uniform(-bound, bound, p.shape) for p in template.parameters()]
        return cls.from_flat(input_size, hidden_size, num_layers, params)

    def zero_state(self, batch_shape=()):
        shape = (self.num_layers,) + tuple(batch_shape) + (self.hidden_size,)
        return np.zeros(shape), np.zeros(shape)


def _zero_params(input_size, hidden_size, num_layers):
    h = hidden_size
    out = []
    for k in range(num_layers):
        in_k = input_size if k == 0 else h
        out += [np.zeros((4 * h, in_k)), np.zeros((4 * h, h)), np.zeros(4 * h), np.zeros(4 * h)]
    return out + [np.zeros((1, h)), np.zeros(1)]


def lstm_parameter_count(hidden_size: int = 100, num_layers: int = 1, input_size: int = 1) -> int:
    """Parameters of the LSTM stack plus the ``hidden -> 1`` head."""
    return sum(p.size for p in _zero_params(input_size, hidden_size, num_layers))


# --- unrolled forward / backward with output feedback ----------------------


def rollout(net: RecurrentNet, window, horizon: int, targets=None, teacher_mask=None):
    """Closed-loop rollout used for both inference and training.

    ``window`` is ``(batch, n)``. The first output is emitted after the last
    window entry; each later step takes the previous output as its input,
    unless ``teacher_mask[:, j]`` is set, in which case ``targets[:, j]``
    (the ground truth for output ``j``) is fed instead.

    Returns ``(outputs, cache)`` with outputs of shape ``(batch, horizon)``.
    """
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ValueError("window must be 2-D (batch, n)")
    batch, n = window.shape
    if n < 1:
        raise ValueError("window must hold at least one entry")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if teacher_mask is not None:
        teacher_mask = np.asarray(teacher_mask, dtype=bool)
        if teacher_mask.shape != (batch, max(horizon - 1, 0)):
            raise ValueError(f"teacher mask shape {teacher_mask.shape}, expected {(batch, max(horizon - 1, 0))}")
        if targets is None:
            raise ValueError("teacher forcing needs targets")
    lstm, head = net.lstm, net.head
    layers = lstm.num_layers
    hid = lstm.hidden_size
    h = [np.zeros((batch, hid)) for _ in range(layers)]
    c = [np.zeros((batch, hid)) for _ in range(layers)]
    outputs = np.zeros((batch, horizon))
    steps = n + horizon - 1 if horizon > 0 else 0
    cache = []
    x = None
    for t in range(steps):
        if t < n:
            x = window[:, t:t + 1]
        else:
            j = t - n  # previous output index
            x = outputs[:, j:j + 1]
            if teacher_mask is not None:
                x = np.where(teacher_mask[:, j:j + 1], targets[:, j:j + 1], x)
        inp = x
        step_cache = []
        for k in range(layers):
            h_prev, c_prev = h[k], c[k]
            h[k], c[k], gates = lstm_layer_step(
                lstm.w_ih[k], lstm.w_hh[k], lstm.b_ih[k], lstm.b_hh[k], inp, h_prev, c_prev
            )
            step_cache.append((inp, h_prev, c_prev, gates, c[k]))
            inp = h[k]
        if t >= n - 1:
            outputs[:, t - n + 1] = (inp @ head.weights.T + head.bias)[:, 0]
        cache.append(step_cache)
    return outputs, {"cache": cache, "n": n, "mask": teacher_mask, "steps": steps}


def bptt(net: RecurrentNet, input_seq, target_seq, teacher_mask=None):
    """Loss and exact parameter gradients for a closed-loop rollout.

    The loss is the mean squared error over all ``batch * horizon`` outputs.
    Gradients flow through the output -> input feedback edges on every step
    that was not teacher forced. Returns ``(loss, grads, outputs)`` with
    ``grads`` in the flat parameter order of the module docstring.
    """
    input_seq = np.asarray(input_seq, dtype=float)
    target_seq = np.asarray(target_seq, dtype=float)
    if input_seq.ndim == 1:
        input_seq = input_seq[None]
        target_seq = target_seq[None]
        if teacher_mask is not None:
            teacher_mask = np.asarray(teacher_mask)[None]
    batch, horizon = target_seq.shape
    if input_seq.shape[0] != batch:
        raise ValueError("input and target batch sizes differ")
    if teacher_mask is None:
        teacher_mask = np.zeros((batch, max(horizon - 1, 0)), dtype=bool)
    outputs, state = rollout(net, input_seq, horizon, target_seq, teacher_mask)
    grads = [np.zeros_like(p) for p in net.parameters()]
    if horizon == 0:
        return 0.0, grads, outputs
    loss, d_out = mse_loss(outputs, target_seq)

    lstm, head = net.lstm, net.head
    layers, hid = lstm.num_layers, lstm.hidden_size
    n = state["n"]
    cache = state["cache"]
    feedback = ~np.asarray(teacher_mask, dtype=bool)
    dh_next = [np.zeros((batch, hid)) for _ in range(layers)]
    dc_next = [np.zeros((batch, hid)) for _ in range(layers)]
    dx_next = np.zeros(batch)  # gradient w.r.t. the input of step t+1
    g_head_w, g_head_b = grads[4 * layers], grads[4 * layers + 1]

    steps = state["steps"]
    # per-layer gate gradients, inputs and previous hidden states by step;
    # the weight gradients are contracted over all steps at the end
    d_act = [np.empty((steps, batch, 4 * hid)) for _ in range(layers)]
    d_out_eff = np.zeros((steps, batch))
    for t in range(steps - 1, -1, -1):
        step_cache = cache[t]
        dh_from_above = None
        if t >= n - 1:
            j = t - n + 1
            dy = d_out[:, j].copy()
            if j < horizon - 1:
                dy += np.where(feedback[:, j], dx_next, 0.0)
            d_out_eff[t] = dy
            dh_from_above = np.outer(dy, head.weights[0])
        for k in range(layers - 1, -1, -1):
            _, _, c_prev, (i, f, g, o), c = step_cache[k]
            dh = dh_next[k] if dh_from_above is None else dh_from_above + dh_next[k]
            tc = np.tanh(c)
            dc = dc_next[k] + dh * o * (1.0 - tc * tc)
            da = d_act[k][t]
            da[:, :hid] = dc * g * i * (1.0 - i)
            da[:, hid:2 * hid] = dc * c_prev * f * (1.0 - f)
            da[:, 2 * hid:3 * hid] = dc * i * (1.0 - g * g)
            da[:, 3 * hid:] = dh * tc * o * (1.0 - o)
            dh_next[k] = da @ lstm.w_hh[k]
            dc_next[k] = dc * f
            dh_from_above = da @ lstm.w_ih[k]
        dx_next = dh_from_above[:, 0]

    first = n - 1
    h_top = np.stack([_layer_output(cache[t][-1]) for t in range(first, steps)])
    dy_all = d_out_eff[first:]
    g_head_w += np.einsum("tb,tbh->h", dy_all, h_top)[None, :]
    g_head_b += dy_all.sum()
    for k in range(layers):
        inputs = np.stack([cache[t][k][0] for t in range(steps)]).reshape(steps * batch, -1)
        h_prevs = np.stack([cache[t][k][1] for t in range(steps)]).reshape(steps * batch, hid)
        da_flat = d_act[k].reshape(steps * batch, 4 * hid)
        grads[4 * k] += da_flat.T @ inputs
        grads[4 * k + 1] += da_flat.T @ h_prevs
        db = da_flat.sum(axis=0)
        grads[4 * k + 2] += db
        grads[4 * k + 3] += db
    return loss, grads, outputs


def _layer_output(layer_cache):
    _, _, _, (_, _, _, o), c = layer_cache
    return o * np.tanh(c)


# --- optimizer -------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """In-place bias-corrected Adam update of ``params``; returns ``params``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params
