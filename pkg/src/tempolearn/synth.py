"""Synthetic click-track generation and WAV ingestion.

Tempo values are drawn from log-normal or log-uniform distributions
(both defined in the log2 BPM domain), rendered as constant-tempo
metronome tracks, and written/read as 16-bit PCM WAV at 22050 Hz.
"""

import csv
import os
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import ConfigurationError, DataError, FormatError

TARGET_SAMPLE_RATE = 22050

# Click waveform: a 10 ms exponentially decaying 1 kHz burst. Broadband
# attack, strong spectral flux; amplitude stays below 1 even at the
# shortest legal inter-click interval because clicks never overlap.
CLICK_SECONDS = 0.010
CLICK_FREQ_HZ = 1000.0
CLICK_AMPLITUDE = 0.9
CLICK_DECAY_SECONDS = 0.002


class DistributionKind(Enum):
    LOG_NORMAL = "lognormal"
    LOG_UNIFORM = "loguniform"


@dataclass(frozen=True)
class TempoDistribution:
    """Tempo prior: log-normal around ``mu`` or log-uniform on [t_min, t_max].

    ``sigma_dist`` is the log2-domain standard deviation of the log-normal
    case; it is unrelated to the loss-scaling constant used in training.
    """

    kind: DistributionKind
    mu: float = 120.0
    sigma_dist: float = 0.25
    t_min: float = 30.0
    t_max: float = 240.0

    def __post_init__(self):
        if self.t_min <= 0:
            raise ConfigurationError(f"t_min must be positive, got {self.t_min}")
        if self.t_max <= self.t_min:
            raise ConfigurationError(
                f"t_max must exceed t_min, got [{self.t_min}, {self.t_max}]"
            )
        if self.kind is DistributionKind.LOG_NORMAL:
            if self.mu <= 0:
                raise ConfigurationError(f"mu must be positive, got {self.mu}")
            if self.sigma_dist <= 0:
                raise ConfigurationError(
                    f"sigma_dist must be positive, got {self.sigma_dist}"
                )

    @property
    def label(self):
        if self.kind is DistributionKind.LOG_NORMAL:
            return f"lognormal-mu{self.mu:g}"
        return "loguniform"

    def declared_range(self):
        """Support of the distribution, or None when unbounded (log-normal)."""
        if self.kind is DistributionKind.LOG_UNIFORM:
            return (self.t_min, self.t_max)
        return None


@dataclass
class AudioBuffer:
    """Mono samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def sample_tempi(dist, n, seed):
    """Draw ``n`` BPM values from ``dist``; deterministic per seed.

    Log-normal: log2(X) ~ Normal(log2(mu), sigma_dist^2).
    Log-uniform: X = t_min * (t_max / t_min)^i with i ~ Uniform[0, 1).
    """
    if n < 1:
        raise ConfigurationError(f"need at least one sample, got n={n}")
    rng = np.random.default_rng(seed)
    if dist.kind is DistributionKind.LOG_NORMAL:
        return np.exp2(rng.normal(np.log2(dist.mu), dist.sigma_dist, size=n))
    i = rng.random(size=n)
    return dist.t_min * (dist.t_max / dist.t_min) ** i


def click_waveform(sample_rate=TARGET_SAMPLE_RATE):
    n = int(round(CLICK_SECONDS * sample_rate))
    t = np.arange(n) / sample_rate
    envelope = np.exp(-t / CLICK_DECAY_SECONDS)
    return CLICK_AMPLITUDE * envelope * np.sin(2 * np.pi * CLICK_FREQ_HZ * t)


def synth_click_track(bpm, duration_s, sample_rate=TARGET_SAMPLE_RATE):
    """Render a constant-tempo metronome track.

    Clicks start at t = 0 and repeat every 60/bpm seconds; onsets landing
    at or beyond ``duration_s`` are not rendered.
    """
    if bpm <= 0:
        raise ConfigurationError(f"bpm must be positive, got {bpm}")
    if duration_s <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration_s}")
    period = 60.0 / bpm
    if period < CLICK_SECONDS:
        raise ConfigurationError(
            f"inter-click interval {period * 1e3:.2f} ms shorter than the "
            f"{CLICK_SECONDS * 1e3:.0f} ms click at {bpm} BPM"
        )
    n = int(round(duration_s * sample_rate))
    click = click_waveform(sample_rate)
    samples = np.zeros(n)
    k = 0
    while True:
        start = int(round(k * period * sample_rate))
        if start >= n:
            break
        stop = min(start + len(click), n)
        samples[start:stop] += click[: stop - start]
        k += 1
    return AudioBuffer(samples, sample_rate)


def _decode_pcm(data):
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise FormatError(f"unsupported WAV sample format {data.dtype}")


def resample(samples, sr_from, sr_to):
    """Windowed-sinc (Kaiser beta=8) polyphase resampling."""
    if sr_from == sr_to:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(sr_to, sr_from).limit_denominator(1 << 16)
    return scipy.signal.resample_poly(
        samples, ratio.numerator, ratio.denominator, window=("kaiser", 8.0)
    )


def load_wav(path):
    """Read a PCM WAV file into a mono, peak-normalized 22050 Hz buffer."""
    try:
        sr, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: cannot decode WAV ({exc})") from exc
    if data.size == 0:
        raise DataError(f"{path}: empty audio")
    if data.ndim == 2:
        if data.shape[1] > 2:
            raise FormatError(f"{path}: {data.shape[1]} channels, expected 1-2")
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise FormatError(f"{path}: unexpected WAV layout {data.shape}")
    samples = _decode_pcm(np.asarray(data))
    samples = resample(samples, sr, TARGET_SAMPLE_RATE)
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0.0:
        raise DataError(f"{path}: silent audio")
    samples = samples / peak
    if not np.all(np.isfinite(samples)):
        raise DataError(f"{path}: non-finite samples after ingestion")
    return AudioBuffer(samples, TARGET_SAMPLE_RATE)


def write_wav(path, buf):
    """Write a buffer as 16-bit PCM WAV."""
    clipped = np.clip(buf.samples, -1.0, 1.0)
    scipy.io.wavfile.write(path, buf.sample_rate, (clipped * 32767.0).astype(np.int16))


MANIFEST_FIELDS = ("path", "bpm", "distribution", "seed")


def write_manifest(path, rows):
    """Write the dataset manifest: one (path, bpm, distribution, seed) per track."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow(row)


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise FormatError(f"{path}: bad manifest header {reader.fieldnames}")
        return [
            (row["path"], float(row["bpm"]), row["distribution"], int(row["seed"]))
            for row in reader
        ]


def generate_dataset(dist, n_tracks, track_seconds, out_dir, seed):
    """Render a click-track dataset to ``out_dir`` and write its manifest.

    Returns the manifest rows.
    """
    tempi = sample_tempi(dist, n_tracks, seed)
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, bpm in enumerate(tempi):
        name = f"track_{i:04d}.wav"
        buf = synth_click_track(float(bpm), track_seconds)
        write_wav(os.path.join(out_dir, name), buf)
        rows.append((name, float(bpm), dist.label, int(seed)))
    write_manifest(os.path.join(out_dir, "manifest.csv"), rows)
    return rows
