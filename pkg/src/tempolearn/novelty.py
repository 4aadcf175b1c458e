"""Spectral-flux novelty: the onset-strength signal feeding all tempograms.

The pipeline is a centered Hann STFT, logarithmic magnitude compression
Y = log(1 + gamma*|X|), half-wave rectified frame differences summed over
all frequency bins (single band), and global-max normalization.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class NoveltyConfig:
    window: int = 2048
    hop: int = 512
    gamma: float = 100.0

    def __post_init__(self):
        if not self.window > self.hop > 0:
            raise ConfigurationError(
                f"need window > hop > 0, got window={self.window} hop={self.hop}"
            )
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")


@dataclass
class NoveltyCurve:
    """Nonnegative onset-strength values at a fixed frame rate (Hz)."""

    values: np.ndarray
    frame_rate: float

    def __len__(self):
        return len(self.values)


def _hann(n):
    # periodic Hann, matching the n-point DFT analysis convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples, hop):
    return -(-n_samples // hop)


def stft_magnitude(audio, cfg=NoveltyConfig()):
    """Magnitude spectrogram, shape (frames, window//2 + 1).

    Frames are centered via reflect padding, so frame f is aligned with
    time f*hop/sample_rate; there are ceil(len/hop) frames.
    """
    x = np.asarray(audio.samples, dtype=np.float64)
    if len(x) < cfg.window:
        raise DataError(
            f"audio of {len(x)} samples shorter than one window ({cfg.window})"
        )
    n_frames = frame_count(len(x), cfg.hop)
    pad = cfg.window // 2
    xp = np.pad(x, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(xp, cfg.window)
    frames = windows[:: cfg.hop][:n_frames] * _hann(cfg.window)
    return np.abs(np.fft.rfft(frames, axis=1))


def spectral_flux(spec, cfg=NoveltyConfig(), sample_rate=22050):
    """Single-band spectral flux of a magnitude spectrogram.

    Half-wave rectified differences of the log-compressed magnitudes are
    summed over all bins; the curve is divided by its global maximum
    (all-zero input stays all-zero). First frame has no predecessor and
    is 0.
    """
    spec = np.asarray(spec, dtype=np.float64)
    compressed = np.log1p(cfg.gamma * spec)
    flux = np.zeros(len(spec))
    if len(spec) > 1:
        diff = np.diff(compressed, axis=0)
        flux[1:] = np.maximum(diff, 0.0).sum(axis=1)
    peak = flux.max() if len(flux) else 0.0
    if peak > 0:
        flux /= peak
    return NoveltyCurve(flux, sample_rate / cfg.hop)


def novelty_curve(audio, cfg=NoveltyConfig()):
    """Full pipeline: audio buffer -> normalized spectral-flux curve."""
    spec = stft_magnitude(audio, cfg)
    return spectral_flux(spec, cfg, sample_rate=audio.sample_rate)


def write_novelty_csv(path, curve):
    with open(path, "w") as fh:
        fh.write("frame_index,value\n")
        for i, v in enumerate(curve.values):
            fh.write(f"{i},{v:.8f}\n")
