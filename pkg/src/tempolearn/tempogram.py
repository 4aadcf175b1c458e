"""Tempograms: time vs tempo salience maps from a novelty curve.

Three variants share one linear tempo axis: a Fourier tempogram (windowed
complex correlation with sinusoids at tempo frequencies), an
autocorrelation tempogram (short-time ACF mapped from lag to tempo and
interpolated onto the Fourier tempo set), and their elementwise product,
the hybrid tempogram. A resampling step aggregates the linear axis into
logarithmic bins centered at t0 * 2^(k/Q).
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, ContractError, DataError

LOG_T0 = 25.0
LOG_Q = 40
LOG_BINS = 146
TEMPOGRAM_WINDOW_S = 10.0


class TempogramKind(Enum):
    AUTOCORRELATION = "acf"
    FOURIER = "fourier"
    HYBRID = "hybrid"


@dataclass
class LinearTempogram:
    values: np.ndarray            # (frames, tempo bins), nonnegative
    tempo_axis: np.ndarray        # BPM, strictly increasing
    frame_hop: int = 1            # novelty frames per tempogram frame
    window_s: float = TEMPOGRAM_WINDOW_S


@dataclass
class LogTempogram:
    values: np.ndarray            # (frames, K)
    t0: float = LOG_T0
    Q: int = LOG_Q

    @property
    def K(self):
        return self.values.shape[1]

    @property
    def bin_centers(self):
        return log_bin_centers(self.t0, self.Q, self.K)


def default_tempo_axis():
    """Linear analysis grid: 25..320 BPM in 1-BPM steps."""
    return np.arange(25.0, 321.0)


def log_bin_centers(t0, Q, K):
    """Centers t0 * 2^(k/Q) for k = 0..K-1."""
    if K < 1:
        raise ConfigurationError(f"need at least one bin, got K={K}")
    if t0 <= 0 or Q <= 0:
        raise ConfigurationError(f"t0 and Q must be positive, got t0={t0} Q={Q}")
    return t0 * np.exp2(np.arange(K) / Q)


def _frame_novelty(values, length):
    """Centered sliding windows of ``length``, zero-padded at the edges.

    Returns one window per novelty frame, shape (frames, length).
    """
    padded = np.pad(np.asarray(values, dtype=np.float64), length // 2)
    windows = np.lib.stride_tricks.sliding_window_view(padded, length)
    return windows[: len(values)]


def _check_axis(tempo_axis):
    axis = np.asarray(tempo_axis, dtype=np.float64)
    if axis.ndim != 1 or len(axis) < 2 or np.any(np.diff(axis) <= 0):
        raise ConfigurationError("tempo axis must be strictly increasing")
    if axis[0] > 25.0 or axis[-1] < 310.0:
        raise ConfigurationError(
            f"tempo axis [{axis[0]:g}, {axis[-1]:g}] must cover [25, 310] BPM"
        )
    return axis


def fourier_tempogram(nov, window_s=TEMPOGRAM_WINDOW_S, tempo_axis=None):
    """Windowed complex correlation of the novelty curve with tempo sinusoids.

    Each frame n holds |sum_m nov[m] w[m-n] exp(-2i pi (bpm/60) m/fr)| for
    every axis tempo, with a centered Hann window of round(window_s * fr)
    frames and zero padding at the edges. Magnitudes are divided by the
    window mass so values are comparable with the (zero-lag normalized)
    autocorrelation variant.
    """
    axis = _check_axis(default_tempo_axis() if tempo_axis is None else tempo_axis)
    if len(nov) < 1:
        raise DataError("empty novelty curve")
    length = int(round(window_s * nov.frame_rate))
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
    frames = _frame_novelty(nov.values, length) * window
    phases = 2.0 * np.pi * np.outer(axis / 60.0, np.arange(length) / nov.frame_rate)
    re = frames @ np.cos(phases).T
    im = frames @ np.sin(phases).T
    values = np.hypot(re, im) / window.sum()
    return LinearTempogram(values, axis, frame_hop=1, window_s=window_s)


def autocorr_tempogram(nov, window_s=TEMPOGRAM_WINDOW_S, tempo_axis=None):
    """Short-time autocorrelation tempogram on the Fourier tempo axis.

    Per frame, the ACF of the centered window (lags 1..length-1) is
    normalized by its zero-lag value; lag l maps to tempo 60*fr/l and the
    lag-domain values are linearly interpolated onto ``tempo_axis``. Lags
    whose tempi fall outside the axis only act as interpolation
    neighbors.
    """
    axis = _check_axis(default_tempo_axis() if tempo_axis is None else tempo_axis)
    if len(nov) < 1:
        raise DataError("empty novelty curve")
    length = int(round(window_s * nov.frame_rate))
    frames = _frame_novelty(nov.values, length)
    nfft = 1 << int(np.ceil(np.log2(2 * length)))
    spectra = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spectra * np.conj(spectra), nfft, axis=1)[:, :length]
    zero_lag = acf[:, :1].copy()
    np.divide(acf, zero_lag, out=acf, where=zero_lag > 1e-12)
    acf[zero_lag[:, 0] <= 1e-12] = 0.0

    lags = np.arange(1, length)
    lag_tempi = 60.0 * nov.frame_rate / lags
    # ascending tempo order for interpolation
    order = np.argsort(lag_tempi)
    tempi_sorted = lag_tempi[order]
    values = _interp_rows(axis, tempi_sorted, acf[:, 1:][:, order])
    np.maximum(values, 0.0, out=values)
    return LinearTempogram(values, axis, frame_hop=1, window_s=window_s)


def _interp_rows(targets, x, rows):
    """Row-wise linear interpolation with shared nodes; clamps at the ends."""
    idx = np.searchsorted(x, targets, side="right") - 1
    idx = np.clip(idx, 0, len(x) - 2)
    x0, x1 = x[idx], x[idx + 1]
    w = (targets - x0) / (x1 - x0)
    w = np.clip(w, 0.0, 1.0)
    return rows[:, idx] * (1.0 - w) + rows[:, idx + 1] * w


def hybrid_tempogram(ta, tf):
    """Elementwise product of autocorrelation and Fourier tempograms."""
    if ta.values.shape != tf.values.shape:
        raise ContractError(
            f"shape mismatch: {ta.values.shape} vs {tf.values.shape}"
        )
    if not np.array_equal(ta.tempo_axis, tf.tempo_axis):
        raise ContractError("tempo axes differ between the two tempograms")
    return LinearTempogram(
        ta.values * tf.values, ta.tempo_axis, ta.frame_hop, ta.window_s
    )


def to_log_axis(lin, t0=LOG_T0, Q=LOG_Q, K=LOG_BINS):
    """Resample a linear-axis tempogram onto logarithmic bins.

    Log bin k averages the linear bins whose tempo lies in the geometric
    interval [t0*2^((k-0.5)/Q), t0*2^((k+0.5)/Q)); bins too narrow to
    contain a linear sample are filled by linear interpolation at the bin
    center.
    """
    centers = log_bin_centers(t0, Q, K)
    axis = np.asarray(lin.tempo_axis, dtype=np.float64)
    if axis[0] > t0 or axis[-1] < t0 * 2.0 ** (K / Q):
        raise ConfigurationError(
            f"linear axis [{axis[0]:g}, {axis[-1]:g}] does not cover the "
            f"log range [{t0:g}, {t0 * 2.0 ** (K / Q):g}]"
        )
    edges = t0 * np.exp2((np.arange(K + 1) - 0.5) / Q)
    agg = np.zeros((len(axis), K))
    for k in range(K):
        cols = np.nonzero((axis >= edges[k]) & (axis < edges[k + 1]))[0]
        if len(cols):
            agg[cols, k] = 1.0 / len(cols)
        else:
            j = np.searchsorted(axis, centers[k], side="right") - 1
            j = min(max(j, 0), len(axis) - 2)
            w = (centers[k] - axis[j]) / (axis[j + 1] - axis[j])
            agg[j, k] = 1.0 - w
            agg[j + 1, k] = w
    return LogTempogram(lin.values @ agg, t0=t0, Q=Q)


def compute_linear(nov, kind, window_s=TEMPOGRAM_WINDOW_S, tempo_axis=None):
    """Compute one tempogram variant; the hybrid is derived from the two."""
    if kind is TempogramKind.FOURIER:
        return fourier_tempogram(nov, window_s, tempo_axis)
    if kind is TempogramKind.AUTOCORRELATION:
        return autocorr_tempogram(nov, window_s, tempo_axis)
    if kind is TempogramKind.HYBRID:
        ta = autocorr_tempogram(nov, window_s, tempo_axis)
        tf = fourier_tempogram(nov, window_s, tempo_axis)
        return hybrid_tempogram(ta, tf)
    raise ConfigurationError(f"unknown tempogram kind {kind!r}")


def compute_log_tempogram(
    audio,
    kind,
    novelty_cfg=None,
    window_s=TEMPOGRAM_WINDOW_S,
    t0=LOG_T0,
    Q=LOG_Q,
    K=LOG_BINS,
):
    """audio -> novelty -> linear tempogram of ``kind`` -> log axis."""
    from .novelty import NoveltyConfig, novelty_curve

    nov = novelty_curve(audio, novelty_cfg or NoveltyConfig())
    return to_log_axis(compute_linear(nov, kind, window_s), t0=t0, Q=Q, K=K)


def write_tempogram_csv(path, values, axis, axis_name="bpm"):
    """Plain CSV export of a tempogram matrix for external plotting."""
    axis = np.asarray(axis)
    with open(path, "w") as fh:
        fh.write("frame," + ",".join(f"{v:.4f}" for v in axis) + "\n")
        for i, row in enumerate(np.asarray(values)):
            fh.write(f"{i}," + ",".join(f"{v:.6e}" for v in row) + "\n")
