"""Temporally correlated Rayleigh fading.

Flat fading is generated with the frequency-domain (Smith) realization of
the Clarke/Gans model: spectral lines shaped by the Jakes Doppler spectrum
with random phases, followed by an inverse FFT. Multipath channels are built
from independent flat-fading taps weighted by a power-delay profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Symbol period used when none is given (s).
DEFAULT_SYMBOL_PERIOD = 1e-4

# Coherence block length (symbols) at the two calibration Dopplers (Hz).
COHERENCE_ANCHORS: dict[float, int] = {50.0: 42, 100.0: 11}


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def seed_sequence(seed) -> np.random.SeedSequence:
    """``seed`` as a SeedSequence (int, sequence of ints or SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def complex_normal(rng: np.random.Generator, size, variance: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples, variance/2 per component."""
    scale = math.sqrt(variance / 2.0)
    re = rng.standard_normal(size)
    im = rng.standard_normal(size)
    return scale * (re + 1j * im)


def max_doppler(v: float, f_c: float) -> float:
    """Maximum Doppler shift ``f_c * v / c`` in Hz."""
    if v < 0:
        raise ValueError(f"velocity must be non-negative, got {v}")
    if f_c <= 0:
        raise ValueError(f"carrier frequency must be positive, got {f_c}")
    return f_c * v / SPEED_OF_LIGHT


# --- Bessel J0 -----------------------------------------------------------

_SERIES_LIMIT = 12.0


def _j0_series(z: np.ndarray) -> np.ndarray:
    # sum_k (-1)^k (z^2/4)^k / (k!)^2 ; cancellation error < 1e-11 for z < 12
    q = -(z * z) / 4.0
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 80):
        term = term * q / (k * k)
        total = total + term
        if np.all(np.abs(term) < 1e-17 * np.maximum(1.0, np.abs(total))):
            break
    return total


def _j0_asymptotic(z: np.ndarray) -> np.ndarray:
    # Hankel expansion J0(z) = sqrt(2/(pi z)) (P cos(z - pi/4) - Q sin(z - pi/4))
    # t_k = a_k(0) / z^k with a_k(0) = prod_{j<=k} (-(2j-1)^2) / (k! 8^k);
    # P sums even k with sign (-1)^(k/2), Q odd k with sign (-1)^((k-1)/2).
    p = np.ones_like(z)
    q = np.zeros_like(z)
    term = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    live = np.ones(z.shape, dtype=bool)
    for k in range(1, 60):
        term = term * (-((2 * k - 1) ** 2)) / (k * 8.0 * z)
        # the series is asymptotic: stop each entry once its terms start growing
        live &= np.abs(term) < prev
        prev = np.abs(term)
        t = np.where(live, term, 0.0)
        if k % 2:
            q = q + (-1) ** ((k - 1) // 2) * t
        else:
            p = p + (-1) ** (k // 2) * t
        if not np.any(live & (prev > 1e-17)):
            break
    phase = z - math.pi / 4.0
    return np.sqrt(2.0 / (math.pi * z)) * (p * np.cos(phase) - q * np.sin(phase))


def bessel_j0(z):
    """Bessel function of the first kind, order zero.

    Power series below ``|z| = 12`` and the Hankel asymptotic expansion
    above; absolute error is below 1e-10 everywhere.
    """
    z_arr = np.abs(np.asarray(z, dtype=float))
    out = np.empty_like(z_arr)
    small = z_arr < _SERIES_LIMIT
    if np.any(small):
        out[small] = _j0_series(z_arr[small])
    if np.any(~small):
        out[~small] = _j0_asymptotic(z_arr[~small])
    if np.ndim(z) == 0:
        return float(out)
    return out


def jakes_acf(delta_t, f_d: float):
    """Autocorrelation ``J0(2 pi f_D dt)`` of unit-power Clarke fading."""
    if f_d < 0:
        raise ValueError(f"Doppler must be non-negative, got {f_d}")
    return bessel_j0(2.0 * math.pi * f_d * np.asarray(delta_t, dtype=float))


_EDGE_CLAMP = 1.0 - 1e-12


def jakes_psd(f, f_d: float):
    """Jakes Doppler spectrum.

    Zero outside ``[-f_D, f_D]``. At ``|f| = f_D`` the density is infinite;
    the ratio ``|f|/f_D`` is clamped to ``1 - 1e-12`` there so the function
    returns a large finite value instead.
    """
    if f_d <= 0:
        raise ValueError(f"Doppler must be positive, got {f_d}")
    ratio = np.abs(np.asarray(f, dtype=float)) / f_d
    inside = ratio <= 1.0
    r = np.minimum(ratio, _EDGE_CLAMP)
    out = np.where(inside, 1.0 / (math.pi * f_d * np.sqrt(1.0 - r * r)), 0.0)
    if np.ndim(f) == 0:
        return float(out)
    return out


def _jakes_cdf(f: np.ndarray, f_d: float) -> np.ndarray:
    return 0.5 + np.arcsin(np.clip(f / f_d, -1.0, 1.0)) / math.pi


def doppler_bin_power(n: int, f_d: float, t_s: float) -> np.ndarray:
    """Jakes spectral mass captured by each FFT bin (numpy bin order).

    Each bin integrates the PSD over its own width, so the bins straddling
    ``+-f_D`` carry finite mass and the total is exactly one.
    """
    df = 1.0 / (n * t_s)
    f = np.fft.fftfreq(n, d=t_s)
    mass = _jakes_cdf(f + df / 2, f_d) - _jakes_cdf(f - df / 2, f_d)
    # a bin centred just beyond +-f_D still overlaps the band; hand its
    # share to the inward neighbour so nothing lands out of band
    outside = np.flatnonzero((np.abs(f) > f_d) & (mass > 0))
    for k in outside:
        inward = (k - 1) % n if f[k] > 0 else (k + 1) % n
        mass[inward] += mass[k]
        mass[k] = 0.0
    return mass


@dataclass(frozen=True)
class FadingProcess:
    """Complex channel gains sampled every ``sample_period_s`` seconds."""

    gains: np.ndarray
    doppler_hz: float
    sample_period_s: float
    seed: object = None

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=complex)
        if not np.all(np.isfinite(gains)):
            raise ValueError("fading gains must be finite")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)

    def __len__(self) -> int:
        return len(self.gains)


SPECTRUM_METHODS = ("phase", "gaussian")


def smith_gains(
    n: int, f_d: float, t_s: float, rng: np.random.Generator, method: str = "phase"
) -> np.ndarray:
    """One Smith realization of length ``n`` drawn from ``rng``.

    ``method="phase"`` gives every spectral line its exact Jakes amplitude
    and a uniform random phase, so each realization carries the target
    spectrum (and, over the full record, exactly unit power).
    ``method="gaussian"`` draws complex Gaussian line amplitudes, the
    classic form; its per-realization ACF scatters by roughly
    ``1/sqrt(n f_D T_s)``.
    """
    if method not in SPECTRUM_METHODS:
        raise ValueError(f"unknown spectrum method {method!r}")
    if f_d == 0:
        return np.full(n, complex_normal(rng, 1)[0])
    mass = doppler_bin_power(n, f_d, t_s)
    if method == "phase":
        lines = np.sqrt(mass) * np.exp(2j * math.pi * rng.random(n))
    else:
        lines = np.sqrt(mass) * complex_normal(rng, n)
    return np.fft.ifft(lines) * n


def generate_fading(
    n: int,
    f_d: float,
    t_s: float = DEFAULT_SYMBOL_PERIOD,
    seed=0,
    method: str = "phase",
) -> FadingProcess:
    """Generate ``n`` correlated Rayleigh gains with Doppler ``f_d``.

    The returned gains are scaled to unit mean power. Identical arguments
    reproduce identical gains.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if f_d < 0:
        raise ValueError(f"Doppler must be non-negative, got {f_d}")
    if t_s <= 0:
        raise ValueError(f"sample period must be positive, got {t_s}")
    if f_d * t_s >= 0.5:
        raise ValueError(
            f"normalized Doppler f_D*T_s = {f_d * t_s:g} must be below 0.5"
        )
    rng = make_rng(seed)
    # Very low Doppler with a short record puts every line in the DC bin;
    # generate a longer record and keep its head so the spectrum is resolved.
    n_gen = n
    if f_d > 0:
        min_len = int(math.ceil(64.0 / (f_d * t_s)))
        n_gen = max(n, min(min_len, 1 << 22))
    gains = smith_gains(n_gen, f_d, t_s, rng, method)[:n]
    gains = gains / math.sqrt(np.mean(np.abs(gains) ** 2))
    return FadingProcess(gains, f_d, t_s, seed)


def apply_channel(x, h: FadingProcess | np.ndarray, sigma2: float, seed=0) -> np.ndarray:
    """Received samples ``y = h x + n`` with ``n ~ CN(0, sigma2)``."""
    x = np.asarray(x, dtype=complex)
    gains = h.gains if isinstance(h, FadingProcess) else np.asarray(h, dtype=complex)
    if sigma2 < 0:
        raise ValueError(f"noise variance must be non-negative, got {sigma2}")
    if len(x) > len(gains):
        raise ValueError(f"{len(x)} symbols but only {len(gains)} channel gains")
    y = gains[: len(x)] * x
    if sigma2 > 0:
        y = y + complex_normal(make_rng(seed), len(x), sigma2)
    return y


# --- multipath -------------------------------------------------------------


@dataclass(frozen=True)
class TapProfile:
    """Power-delay profile: tap delays (ns) and average powers (dB)."""

    name: str
    delays_ns: tuple
    powers_db: tuple

    def __post_init__(self):
        delays = tuple(float(d) for d in self.delays_ns)
        powers = tuple(float(p) for p in self.powers_db)
        if not delays:
            raise ValueError("tap profile is empty")
        if len(delays) != len(powers):
            raise ValueError("delays and powers differ in length")
        if delays[0] != 0.0:
            raise ValueError("first tap delay must be 0")
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("tap delays must be strictly increasing")
        object.__setattr__(self, "delays_ns", delays)
        object.__setattr__(self, "powers_db", powers)

    @property
    def relative_powers(self) -> np.ndarray:
        """Linear tap powers normalized to sum to one."""
        lin = 10.0 ** (np.asarray(self.powers_db) / 10.0)
        return lin / lin.sum()

    @classmethod
    def from_file(cls, path, name: str = "custom") -> "TapProfile":
        """Read ``delay_ns,power_db`` lines; blank lines and ``#`` comments skipped."""
        delays, powers = [], []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValueError(f"bad tap line {raw!r}: expected delay_ns,power_db")
            try:
                delays.append(float(parts[0]))
                powers.append(float(parts[1]))
            except ValueError:
                if not delays:  # header row
                    continue
                raise
        return cls(name, tuple(delays), tuple(powers))


EPA = TapProfile(
    "EPA",
    (0, 30, 70, 90, 110, 190, 410),
    (0, -1, -2, -3, -8, -17.2, -20.8),
)
EVA = TapProfile(
    "EVA",
    (0, 30, 150, 310, 370, 710, 1090, 1730, 2510),
    (0, -1.5, -1.4, -3.6, -0.6, -9.1, -7, -12, -16.9),
)
ETU = TapProfile(
    "ETU",
    (0, 50, 120, 200, 230, 500, 1600, 2300, 5000),
    (-1, -1, -1, 0, 0, 0, -3, -5, -7),
)
PROFILES = {"EPA": EPA, "EVA": EVA, "ETU": ETU}


def tap_powers_on_grid(profile: TapProfile, t_s: float) -> np.ndarray:
    """Normalized tap powers after snapping delays to multiples of ``t_s``.

    Taps landing on the same sample merge by power addition; empty grid
    positions between occupied ones carry zero power.
    """
    rel = profile.relative_powers
    idx = np.rint(np.asarray(profile.delays_ns) * 1e-9 / t_s).astype(int)
    grid = np.zeros(idx.max() + 1)
    np.add.at(grid, idx, rel)
    return grid


def generate_multipath(
    profile: TapProfile, f_d: float, t_s: float, n: int, seed=0
) -> list[FadingProcess]:
    """Independent fading taps on the symbol grid, total power one.

    Tap ``l`` of the result is the channel coefficient at delay ``l * t_s``.
    """
    powers = tap_powers_on_grid(profile, t_s)
    children = seed_sequence(seed).spawn(len(powers))
    taps = []
    for power, child in zip(powers, children):
        flat = generate_fading(n, f_d, t_s, seed=child)
        taps.append(FadingProcess(flat.gains * math.sqrt(power), f_d, t_s, seed))
    return taps


# --- coherence blocks ------------------------------------------------------


def coherence_block_length(f_d: float, anchors: Mapping[float, int] | None = None) -> int:
    """Symbols per coherence block at Doppler ``f_d``.

    Anchor values are returned verbatim. Between anchors the length is
    interpolated linearly in ``1/f_D``; outside them it scales as
    ``1/f_D`` from the nearest anchor. Result is rounded, at least 1.
    """
    if f_d <= 0:
        raise ValueError(f"Doppler must be positive, got {f_d}")
    table = sorted((float(f), float(b)) for f, b in (anchors or COHERENCE_ANCHORS).items())
    for f, b in table:
        if math.isclose(f, f_d):
            return int(b)
    if f_d < table[0][0]:
        f0, b0 = table[0]
        value = b0 * f0 / f_d
    elif f_d > table[-1][0]:
        f0, b0 = table[-1]
        value = b0 * f0 / f_d
    else:
        for (fa, ba), (fb, bb) in zip(table, table[1:]):
            if fa <= f_d <= fb:
                w = (1.0 / f_d - 1.0 / fa) / (1.0 / fb - 1.0 / fa)
                value = ba + w * (bb - ba)
                break
    return max(1, int(round(value)))


@dataclass(frozen=True)
class ChannelTiming:
    """Maps a Doppler to the spacing of one-per-coherence-block samples."""

    symbol_period_s: float = DEFAULT_SYMBOL_PERIOD
    anchors: Mapping[float, int] = field(default_factory=lambda: dict(COHERENCE_ANCHORS))

    def block_length(self, f_d: float) -> int:
        return coherence_block_length(f_d, self.anchors)

    def block_period(self, f_d: float) -> float:
        """Seconds between consecutive coherence blocks."""
        return self.block_length(f_d) * self.symbol_period_s


def block_fading(
    f_d: float, n: int, timing: ChannelTiming, seed, min_length: int = 1 << 16
) -> np.ndarray:
    """Channel gains sampled once per coherence block (one realization).

    The record is generated at least ``min_length`` blocks long so the
    Doppler spectrum spans many FFT bins, then truncated to ``n``.
    """
    t_block = timing.block_period(f_d)
    if f_d * t_block >= 0.5:
        raise ValueError(
            f"one sample per coherence block aliases at f_D={f_d} Hz "
            f"(f_D*T = {f_d * t_block:g}); reduce the symbol period"
        )
    return generate_fading(max(n, min_length), f_d, t_block, seed).gains[:n]


SOS_PATHS = 64


def sum_of_sinusoids(x: float, count: int, length: int, seed=0, n_paths: int = SOS_PATHS,
                     chunk: int = 4096) -> np.ndarray:
    """Independent short fading records from the Clarke sum-of-sinusoids model.

    Row ``b`` is ``sum_m exp(j(2 pi x cos(a_m) t + phi_m)) / sqrt(n_paths)``
    for ``t = 0..length-1`` with fresh uniform angles ``a_m`` and phases
    ``phi_m`` per row, where ``x = f_D * T`` is the normalized Doppler. The
    ensemble autocorrelation is exactly ``J0(2 pi x tau)`` and rows are
    mutually independent, unlike blocks cut from one long realization.
    """
    if count < 1 or length < 1 or n_paths < 1:
        raise ValueError("count, length and n_paths must be >= 1")
    rng = make_rng(seed)
    t = np.arange(length)
    out = np.empty((count, length), dtype=complex)
    for start in range(0, count, chunk):
        b = min(chunk, count - start)
        angle = rng.uniform(0.0, 2 * math.pi, (b, n_paths))
        phase = rng.uniform(0.0, 2 * math.pi, (b, n_paths))
        omega = 2 * math.pi * x * np.cos(angle)
        arg = omega[:, None, :] * t[None, :, None] + phase[:, None, :]
        out[start:start + b] = np.exp(1j * arg).sum(axis=2) / math.sqrt(n_paths)
    return out


def block_records(f_d: float, count: int, length: int, timing: ChannelTiming, seed=0) -> np.ndarray:
    """``count`` independent records of one-per-coherence-block gains."""
    t_block = timing.block_period(f_d)
    if f_d * t_block >= 0.5:
        raise ValueError(
            f"one sample per coherence block aliases at f_D={f_d} Hz "
            f"(f_D*T = {f_d * t_block:g}); reduce the symbol period"
        )
    return sum_of_sinusoids(f_d * t_block, count, length, seed)


def write_trace_csv(path, process: FadingProcess, header_lines: Sequence[str] = ()) -> None:
    """Write ``idx,re,im`` rows with optional ``#`` comment header."""
    with open(path, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("idx,re,im\n")
        for i, g in enumerate(process.gains):
            fh.write(f"{i},{g.real:.17g},{g.imag:.17g}\n")


def read_trace_csv(path) -> np.ndarray:
    rows = [
        line for line in Path(path).read_text().splitlines()
        if line and not line.startswith("#")
    ]
    if rows[0].replace(" ", "") != "idx,re,im":
        raise ValueError(f"unexpected trace header {rows[0]!r}")
    data = np.array([[float(v) for v in r.split(",")[1:]] for r in rows[1:]])
    return data[:, 0] + 1j * data[:, 1]
