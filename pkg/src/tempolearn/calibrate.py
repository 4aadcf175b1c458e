"""Calibration: mapping the encoder's unitless output to BPM.

Synthetic clicks at known tempi are pushed through the full pipeline,
the median encoder output per track forms a calibration curve, and a
least-squares line log2(bpm) = a*t + b turns outputs into tempo
estimates. Inference slices the log tempogram at one fixed shift
(k_inf, default 14, the midpoint of the training shift range).
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn, pretext, synth, tempogram
from .errors import CalibrationError, ConfigurationError
from .novelty import NoveltyConfig
from .tempogram import TempogramKind

DEFAULT_K_INF = 14
DEFAULT_CURVE_POINTS = 50
DEFAULT_CURVE_RANGE = (35.0, 300.0)
DEFAULT_TRACK_SECONDS = 30.0

_EVAL_CHUNK = 1024


@dataclass
class CalibrationMap:
    """Affine map t -> log2(BPM) plus the inference shift it was fit for."""

    a: float
    b: float
    k_inf: int = DEFAULT_K_INF
    fit_residual: float = 0.0
    kind: TempogramKind | None = None

    def __post_init__(self):
        if not (pretext.SHIFT_MIN <= self.k_inf <= pretext.SHIFT_MAX):
            raise ConfigurationError(
                f"k_inf must lie in [{pretext.SHIFT_MIN}, {pretext.SHIFT_MAX}], "
                f"got {self.k_inf}"
            )
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ConfigurationError(f"non-finite calibration ({self.a}, {self.b})")

    def bpm_of(self, t):
        return 2.0 ** (self.a * np.asarray(t) + self.b)


@dataclass
class CalibrationCurve:
    """Per-track (true BPM, median model output) points."""

    true_bpm: np.ndarray
    model_output: np.ndarray
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.true_bpm)


def default_calibration_tempi(
    n=DEFAULT_CURVE_POINTS, lo=DEFAULT_CURVE_RANGE[0], hi=DEFAULT_CURVE_RANGE[1]
):
    """Logarithmically spaced probe tempi."""
    return np.geomspace(lo, hi, n)


def frame_outputs(p, logtg, k_inf):
    """Encoder output per frame, slicing the log tempogram at ``k_inf``."""
    if k_inf + pretext.SLICE_LEN > logtg.K:
        raise ConfigurationError(
            f"log tempogram has {logtg.K} bins; slicing at {k_inf} needs "
            f"{k_inf + pretext.SLICE_LEN}"
        )
    dtype = p["dec.expand.w"].dtype
    slices = logtg.values[:, k_inf : k_inf + pretext.SLICE_LEN].astype(dtype)
    outputs = np.empty(len(slices))
    for start in range(0, len(slices), _EVAL_CHUNK):
        chunk = slices[start : start + _EVAL_CHUNK]
        t, _ = nn.encoder_forward(chunk, p)
        outputs[start : start + len(chunk)] = t
    return outputs


def calibration_curve(
    p,
    kind,
    tempi=None,
    k_inf=DEFAULT_K_INF,
    track_seconds=DEFAULT_TRACK_SECONDS,
    novelty_cfg=None,
    t0=tempogram.LOG_T0,
    Q=tempogram.LOG_Q,
    K=tempogram.LOG_BINS,
):
    """Median model output on synthetic clicks at each probe tempo.

    Tempi must lie inside the log-axis coverage; per-track pipeline
    failures are skipped and reported on the returned curve.
    """
    tempi = default_calibration_tempi() if tempi is None else np.asarray(tempi)
    top = t0 * 2.0 ** (K / Q)
    if np.any(tempi < t0) or np.any(tempi > top):
        raise ConfigurationError(
            f"probe tempi must lie within the log axis [{t0:g}, {top:g}] BPM"
        )
    cfg = novelty_cfg or NoveltyConfig()
    bpms, outputs, skipped = [], [], []
    for bpm in tempi:
        try:
            audio = synth.synth_click_track(float(bpm), track_seconds)
            logtg = tempogram.compute_log_tempogram(
                audio, kind, novelty_cfg=cfg, t0=t0, Q=Q, K=K
            )
            t = float(np.median(frame_outputs(p, logtg, k_inf)))
        except Exception as exc:  # skip-and-report per track
            skipped.append((float(bpm), f"{type(exc).__name__}: {exc}"))
            continue
        bpms.append(float(bpm))
        outputs.append(t)
    return CalibrationCurve(np.asarray(bpms), np.asarray(outputs), skipped)


def fit_calibration(curve, k_inf=DEFAULT_K_INF, kind=None):
    """Least-squares fit of log2(true_bpm) against the model output."""
    t = np.asarray(curve.model_output, dtype=np.float64)
    y = np.log2(np.asarray(curve.true_bpm, dtype=np.float64))
    if len(t) < 2 or np.ptp(t) <= 1e-12:
        raise CalibrationError(
            "degenerate calibration curve: need >= 2 distinct model outputs"
        )
    design = np.column_stack([t, np.ones_like(t)])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.sqrt(np.mean((design @ [a, b] - y) ** 2)))
    return CalibrationMap(float(a), float(b), k_inf, residual, kind)


def predict_bpm(p, cal, logtg):
    """Per-frame BPM estimates and their median as the track-level tempo."""
    t = frame_outputs(p, logtg, cal.k_inf)
    per_frame = cal.bpm_of(t)
    return per_frame, float(np.median(per_frame))


def save_calibration(path, cal):
    with open(path, "w") as fh:
        fh.write(f"a={cal.a!r}\n")
        fh.write(f"b={cal.b!r}\n")
        fh.write(f"k_inf={cal.k_inf}\n")
        fh.write(f"fit_residual={cal.fit_residual!r}\n")
        if cal.kind is not None:
            fh.write(f"kind={cal.kind.value}\n")


def load_calibration(path):
    fields = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                fields[key] = value
    try:
        return CalibrationMap(
            a=float(fields["a"]),
            b=float(fields["b"]),
            k_inf=int(fields["k_inf"]),
            fit_residual=float(fields.get("fit_residual", 0.0)),
            kind=TempogramKind(fields["kind"]) if "kind" in fields else None,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"{path}: bad calibration file ({exc})") from exc


def write_curve_csv(path, curve, cal=None):
    """Curve CSV: true_bpm, model_output, predicted_bpm (blank without a fit)."""
    with open(path, "w") as fh:
        fh.write("true_bpm,model_output,predicted_bpm\n")
        for bpm, t in zip(curve.true_bpm, curve.model_output):
            predicted = f"{float(cal.bpm_of(t)):.6f}" if cal is not None else ""
            fh.write(f"{bpm:.6f},{t:.10f},{predicted}\n")


def read_curve_csv(path):
    bpms, outputs = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("true_bpm,model_output"):
            raise ConfigurationError(f"{path}: unexpected curve header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            bpms.append(float(parts[0]))
            outputs.append(float(parts[1]))
    return CalibrationCurve(np.asarray(bpms), np.asarray(outputs))
