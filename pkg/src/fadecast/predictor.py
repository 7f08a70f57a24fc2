"""Deep channel predictor: twin LSTM+dense networks for the real and
imaginary parts of the fading coefficient, closed-loop multi-step
inference, and the training loop (teacher forcing, learning-rate
reduction on plateau, early stop).
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimation import lmmse
from .fading import ChannelTiming, block_records, make_rng, seed_sequence
from .modem import pilot_symbol, snr_to_sigma2
from .nn import AdamState, RecurrentNet, TrainingDivergence, adam_step, bptt, rollout

log = logging.getLogger(__name__)

# Default symbol period for predictor experiments (s). Sets the time
# between one-per-coherence-block samples together with the block length.
PREDICTOR_SYMBOL_PERIOD = 1e-7


@dataclass
class TrainingConfig:
    """Training hyperparameters; defaults are the full-scale values."""

    start_lr: float = 0.01
    min_lr: float = 1e-8
    min_epochs: int = 200
    max_epochs: int = 1000
    batches_per_epoch: int = 4500  # sequences drawn per epoch
    batch_size: int = 32
    teacher_force_p: float = 0.2
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    plateau_unit: str = "epoch"
    plateau_monitor: str = "train"
    early_stop_monitor: str = "val"
    lr_reset_tolerance: float = 1.0
    early_stop_patience: int = 50
    early_stop_tolerance: float = 1e-3
    restore_best: bool = True
    use_teacher_forcing: bool = True
    use_lr_schedule: bool = True
    use_early_stop: bool = True
    horizon: int = 100
    window: int = 10
    hidden_size: int = 100
    num_layers: int = 1
    doppler_hz: float = 10.0
    symbol_period_s: float = PREDICTOR_SYMBOL_PERIOD
    dataset_size: int = 50000
    val_fraction: float = 0.1
    val_sequences: int = 500
    train_snr_db: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.teacher_force_p <= 1.0:
            raise ValueError("teacher_force_p must lie in [0, 1]")
        if self.min_lr > self.start_lr:
            raise ValueError("min_lr exceeds start_lr")
        if self.min_epochs > self.max_epochs:
            raise ValueError("min_epochs exceeds max_epochs")
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be positive")
        if self.plateau_unit != "epoch":
            raise ValueError("only plateau_unit='epoch' is supported")
        if self.plateau_monitor not in ("train", "val"):
            raise ValueError("plateau_monitor must be 'train' or 'val'")
        if self.early_stop_monitor not in ("train", "val"):
            raise ValueError("early_stop_monitor must be 'train' or 'val'")
        if isinstance(self.train_snr_db, (int, float)):
            self.train_snr_db = (float(self.train_snr_db),)
        self.train_snr_db = tuple(float(s) for s in self.train_snr_db)

    @classmethod
    def paper(cls, **overrides) -> "TrainingConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        values = dict(batches_per_epoch=500, min_epochs=50, max_epochs=250, dataset_size=5000)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainingConfig":
        if name == "paper":
            return cls.paper(**overrides)
        if name == "desk":
            return cls.desk(**overrides)
        raise ValueError(f"unknown preset {name!r}")

    def without_enhancements(self) -> "TrainingConfig":
        return dataclasses.replace(
            self, use_teacher_forcing=False, use_lr_schedule=False, use_early_stop=False
        )

    @property
    def timing(self) -> ChannelTiming:
        return ChannelTiming(self.symbol_period_s)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train_snr_db"] = list(self.train_snr_db)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, preset: str = "paper") -> "TrainingConfig":
        """Parse a flat ``key = value`` file; ``preset`` supplies the defaults."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {raw!r}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "preset":
                preset = val
                continue
            if key not in types:
                raise ValueError(f"unknown training config key {key!r}")
            values[key] = parse_config_value(val, types[key])
        return cls.preset(preset, **values)


def parse_config_value(text: str, type_name: str):
    if type_name == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if type_name == "int":
        return int(float(text))
    if type_name == "float":
        return float(text)
    if type_name == "tuple":
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    return text


@dataclass
class TrainingReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,lr"]
        for e, (t, v, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr), 1):
            lines.append(f"{e},{t:.10e},{v:.10e},{lr:.3e}")
        return "\n".join(lines) + "\n"


@dataclass
class PredictorNet:
    """Twin networks for the real and imaginary channel components."""

    real_net: RecurrentNet
    imag_net: RecurrentNet
    window_n: int = 10
    trained_doppler_hz: float = 10.0
    config: TrainingConfig | None = None

    def __post_init__(self):
        if self.window_n < 1:
            raise ValueError("window_n must be >= 1")
        a, b = self.real_net, self.imag_net
        if (a.hidden_size, a.num_layers) != (b.hidden_size, b.num_layers):
            raise ValueError("real and imaginary networks differ in architecture")

    @classmethod
    def initialize(cls, hidden_size=100, num_layers=1, window_n=10, seed=0,
                   trained_doppler_hz=10.0, config=None) -> "PredictorNet":
        ss = seed_sequence(seed)
        s_re, s_im = ss.spawn(2)
        return cls(
            RecurrentNet.initialize(hidden_size, num_layers, seed=s_re),
            RecurrentNet.initialize(hidden_size, num_layers, seed=s_im),
            window_n, trained_doppler_hz, config,
        )

    def parameter_count(self) -> int:
        """Parameters of one network (the real and imaginary nets are identical)."""
        return self.real_net.parameter_count()

    @property
    def symbol_period_s(self) -> float:
        return self.config.symbol_period_s if self.config else PREDICTOR_SYMBOL_PERIOD

    @property
    def timing(self) -> ChannelTiming:
        return ChannelTiming(self.symbol_period_s)

    def copy(self) -> "PredictorNet":
        return PredictorNet(self.real_net.copy(), self.imag_net.copy(), self.window_n,
                            self.trained_doppler_hz, self.config)

    # -- persistence ------------------------------------------------------

    def to_bytes(self) -> bytes:
        return serialize(self)

    def fingerprint(self) -> str:
        return model_fingerprint(self)

    def save(self, path) -> None:
        Path(path).write_bytes(serialize(self))

    @classmethod
    def load(cls, path) -> "PredictorNet":
        return deserialize(Path(path).read_bytes())


# --- inference ---------------------------------------------------------------


def predict_batch(net: PredictorNet, windows, n_preds: int) -> np.ndarray:
    """Closed-loop predictions for a batch of complex windows ``(B, n)``."""
    windows = np.asarray(windows, dtype=complex)
    if windows.ndim != 2 or windows.shape[1] != net.window_n:
        raise ValueError(
            f"expected windows of shape (batch, {net.window_n}), got {windows.shape}"
        )
    if n_preds < 1:
        raise ValueError("n_preds must be >= 1")
    re, _ = rollout(net.real_net, windows.real, n_preds)
    im, _ = rollout(net.imag_net, windows.imag, n_preds)
    return re + 1j * im


def predict(net: PredictorNet, estimates, n_preds: int) -> np.ndarray:
    """Predict ``n_preds`` future coefficients from ``window_n`` estimates.

    ``estimates`` are complex values (or ChannelEstimate records) in
    chronological order, least recent first.
    """
    values = [getattr(e, "value", e) for e in estimates]
    if len(values) != net.window_n:
        raise ValueError(f"need exactly {net.window_n} estimates, got {len(values)}")
    return predict_batch(net, np.asarray(values, dtype=complex)[None], n_preds)[0]


# --- data --------------------------------------------------------------------


def make_dataset(f_d: float, count: int, seed=0, timing: ChannelTiming | None = None,
                 length: int = 110):
    """Independent blocks of one-per-coherence-block channel samples.

    Returns ``(real, imag)`` arrays of shape ``(count, length)``; every
    block is its own fading realization.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    timing = timing or ChannelTiming(PREDICTOR_SYMBOL_PERIOD)
    data = block_records(f_d, count, length, timing, seed)
    return data.real.copy(), data.imag.copy()


def split_dataset(real, imag, val_fraction: float):
    """Hold out the trailing ``val_fraction`` of blocks for validation."""
    n = len(real)
    n_val = max(1, int(round(n * val_fraction))) if val_fraction > 0 else 0
    if n - n_val < 1:
        raise ValueError("dataset too small to split")
    return (real[: n - n_val], imag[: n - n_val]), (real[n - n_val:], imag[n - n_val:])


def noisy_windows(windows, snr_db, rng):
    """LMMSE estimates of ``windows`` (complex) observed through unit pilots."""
    p = pilot_symbol()
    sigma2 = snr_to_sigma2(snr_db)
    noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(windows.shape)
                                     + 1j * rng.standard_normal(windows.shape))
    return lmmse(windows * p + noise, p, sigma2)


# --- training ----------------------------------------------------------------


def validate(net: PredictorNet, held_out, window: int | None = None) -> float:
    """Mean squared error over held-out blocks without teacher forcing.

    ``held_out`` is ``(real, imag)`` with blocks of length window+horizon;
    the result averages the real and imaginary networks' losses.
    """
    real, imag = held_out
    real = np.asarray(real, dtype=float)
    imag = np.asarray(imag, dtype=float)
    if real.size == 0:
        raise ValueError("empty validation set")
    n = window or net.window_n
    horizon = real.shape[1] - n
    out_re, _ = rollout(net.real_net, real[:, :n], horizon)
    out_im, _ = rollout(net.imag_net, imag[:, :n], horizon)
    err = np.concatenate([(out_re - real[:, n:]).ravel(), (out_im - imag[:, n:]).ravel()])
    return float(np.mean(err * err))


class _Schedule:
    """Learning-rate reduction on plateau with reset, plus early stop."""

    def __init__(self, cfg: TrainingConfig):
        self.cfg = cfg
        self.lr = cfg.start_lr
        self.best = math.inf
        self.since_best = 0
        self.reference = math.inf
        self.history: list[float] = []
        self.at_floor: list[float] = []

    def _level(self) -> float:
        # median over the patience window, robust to single-epoch spikes
        recent = self.history[-self.cfg.plateau_patience:]
        return float(np.median(recent))

    def update(self, loss: float, epoch: int, stop_loss: float | None = None) -> bool:
        """Record one epoch; ``loss`` drives the rate, ``stop_loss`` (default
        ``loss``) the early stop. Return True to stop."""
        cfg = self.cfg
        stop_loss = loss if stop_loss is None else stop_loss
        if not cfg.use_lr_schedule:
            return False
        self.history.append(loss)
        decreasing = cfg.min_lr <= self.lr < cfg.start_lr
        level = self._level()
        if decreasing and level > self.reference * (1.0 + cfg.lr_reset_tolerance):
            # the loss level rose above its level when the rate was last cut
            log.debug("epoch %d: loss level rose to %.3e during decay, lr reset", epoch, level)
            self.lr = cfg.start_lr
            self.since_best = 0
            self.best = loss
            self.reference = math.inf
            self.at_floor.clear()
            return False
        if loss < self.best:
            self.best = loss
            self.since_best = 0
        else:
            self.since_best += 1
            if self.since_best >= cfg.plateau_patience and self.lr > cfg.min_lr:
                self.lr = max(self.lr / cfg.plateau_factor, cfg.min_lr)
                self.reference = level
                self.since_best = 0
        if self.lr <= cfg.min_lr:
            self.at_floor.append(stop_loss)
        if not cfg.use_early_stop or epoch < cfg.min_epochs:
            return False
        k = cfg.early_stop_patience
        if len(self.at_floor) <= k:
            return False
        before = min(self.at_floor[:-k])
        recent = min(self.at_floor[-k:])
        return (before - recent) < cfg.early_stop_tolerance * before


def _epoch(nets, states, cfg, lr, train, rng):
    real, imag = train
    n_train = len(real)
    count = cfg.batches_per_epoch
    order = rng.permutation(n_train) if count <= n_train else rng.integers(0, n_train, count)
    order = order[:count]
    w, hz = cfg.window, cfg.horizon
    total = 0.0
    seen = 0
    for start in range(0, count, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        b = len(idx)
        seq = real[idx] + 1j * imag[idx]
        window = seq[:, :w]
        if cfg.train_snr_db:
            snr = np.asarray(cfg.train_snr_db)[rng.integers(0, len(cfg.train_snr_db), b)]
            window = noisy_windows(window, snr[:, None], rng)
        target = seq[:, w:w + hz]
        if cfg.use_teacher_forcing and cfg.teacher_force_p > 0:
            mask = rng.random((b, hz - 1)) < cfg.teacher_force_p
        else:
            mask = np.zeros((b, hz - 1), dtype=bool)
        batch_loss = 0.0
        for net, state, part in zip(nets, states, (np.real, np.imag)):
            loss, grads, _ = bptt(net, part(window), part(target), mask)
            if not math.isfinite(loss):
                raise TrainingDivergence(f"non-finite training loss ({loss})")
            adam_step(net.parameters(), grads, state, lr)
            batch_loss += loss / 2
        total += batch_loss * b
        seen += b
    return total / seen


def train(config: TrainingConfig, dataset=None, init: PredictorNet | None = None,
          progress=None):
    """Train the twin predictor networks.

    ``dataset`` is ``(real, imag)`` of blocks; by default it is generated
    at ``config.doppler_hz``. The trailing ``val_fraction`` of blocks is
    held out. Returns ``(PredictorNet, TrainingReport)``; on divergence a
    :class:`TrainingDivergence` is raised carrying the partial report as
    its ``report`` attribute.
    """
    cfg = config
    if dataset is None:
        dataset = make_dataset(cfg.doppler_hz, cfg.dataset_size, seed=(cfg.seed, 1),
                               timing=cfg.timing, length=cfg.window + cfg.horizon)
    real, imag = (np.asarray(a, dtype=float) for a in dataset)
    if len(real) == 0:
        raise ValueError("empty dataset")
    if real.shape[1] < cfg.window + cfg.horizon:
        raise ValueError("dataset blocks shorter than window + horizon")
    train_set, val_set = split_dataset(real, imag, cfg.val_fraction)
    val_set = (val_set[0][: cfg.val_sequences, : cfg.window + cfg.horizon],
               val_set[1][: cfg.val_sequences, : cfg.window + cfg.horizon])

    net = init.copy() if init else PredictorNet.initialize(
        cfg.hidden_size, cfg.num_layers, cfg.window, seed=(cfg.seed, 0),
        trained_doppler_hz=cfg.doppler_hz, config=cfg,
    )
    net.config = cfg
    net.trained_doppler_hz = cfg.doppler_hz
    nets = (net.real_net, net.imag_net)
    states = [AdamState.for_params(n.parameters()) for n in nets]
    rng = make_rng((cfg.seed, 2))
    schedule = _Schedule(cfg)
    report = TrainingReport()
    params = net.real_net.parameters() + net.imag_net.parameters()
    best_val, best_params = math.inf, None
    for epoch in range(1, cfg.max_epochs + 1):
        lr = schedule.lr
        try:
            train_loss = _epoch(nets, states, cfg, lr, train_set, rng)
        except TrainingDivergence as exc:
            exc.report = report
            raise
        val_loss = validate(net, val_set, cfg.window) if len(val_set[0]) else math.nan
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.lr.append(lr)
        if cfg.restore_best and math.isfinite(val_loss) and val_loss < best_val:
            best_val, best_params = val_loss, [p.copy() for p in params]
            report.best_epoch = epoch
        if progress:
            progress(epoch, report, net)
        losses = {"train": train_loss, "val": val_loss if math.isfinite(val_loss) else train_loss}
        if schedule.update(losses[cfg.plateau_monitor], epoch, losses[cfg.early_stop_monitor]):
            report.stop_reason = "early_stop"
            break
    if best_params is not None:
        for p, b in zip(params, best_params):
            p[...] = b
    else:
        report.best_epoch = report.epochs
    return net, report


# --- serialization -----------------------------------------------------------

MAGIC = b"FCPNET"
FORMAT_VERSION = 1


def serialize(net: PredictorNet) -> bytes:
    """Binary model file.

    Layout: ``MAGIC`` (6 bytes), format version (uint16 LE), header length
    (uint32 LE), UTF-8 JSON header (sorted keys), then the real network's
    parameters followed by the imaginary network's, each in the flat order
    of :mod:`fadecast.nn`, as little-endian float64.
    """
    header = {
        "format": FORMAT_VERSION,
        "input_size": net.real_net.lstm.input_size,
        "hidden_size": net.real_net.hidden_size,
        "num_layers": net.real_net.num_layers,
        "window_n": net.window_n,
        "trained_doppler_hz": net.trained_doppler_hz,
        "shapes": [list(p.shape) for p in net.real_net.parameters()],
        "config": net.config.to_dict() if net.config else None,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(head)))
    buf.write(head)
    for sub in (net.real_net, net.imag_net):
        for p in sub.parameters():
            buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def deserialize(data: bytes) -> PredictorNet:
    if data[:6] != MAGIC:
        raise ValueError("not a predictor model file")
    version, head_len = struct.unpack("<HI", data[6:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    header = json.loads(data[12:12 + head_len])
    offset = 12 + head_len
    nets = []
    for _ in range(2):
        params = []
        for shape in header["shapes"]:
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            params.append(arr.astype(float).reshape(shape))
            offset += 8 * count
        nets.append(RecurrentNet.from_flat(
            header["input_size"], header["hidden_size"], header["num_layers"], params
        ))
    if offset != len(data):
        raise ValueError("trailing bytes in model file")
    cfg = TrainingConfig.from_dict(header["config"]) if header["config"] else None
    return PredictorNet(nets[0], nets[1], header["window_n"], header["trained_doppler_hz"], cfg)


def model_fingerprint(net: PredictorNet) -> str:
    """64-bit hash (hex) of the serialized parameters."""
    h = hashlib.blake2b(digest_size=8)
    for sub in (net.real_net, net.imag_net):
        for p in sub.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()
