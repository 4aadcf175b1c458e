"""Vertical-shift pretext task: paired slice sampling, the tempo-error and
reconstruction losses, and the training loop.

Two 128-bin slices of the same log-tempogram frame, offset vertically by
k1 and k2 bins, go through the shared encoder; the difference of the two
tempo estimates is trained (Huber norm) to match sigma*(k2 - k1), while
a decoder reconstructs each slice from its scalar estimate.
"""

import os
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import nn
from .errors import ConfigurationError, ContractError, NumericalError

SHIFT_MIN = 11
SHIFT_MAX = 18
SLICE_LEN = 128
MIN_LOG_BINS = SHIFT_MAX + SLICE_LEN  # 146


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and the scaling constant tying shifts to output units.

    ``t_min``/``t_max`` are the training-set tempo extremes; sigma is
    1 / (Q * log2(t_max / t_min)) so that one bin of vertical shift
    corresponds to sigma units of encoder output.
    """

    t_min: float = 30.0
    t_max: float = 240.0
    Q: int = 40
    delta: float = 0.25
    w_t: float = 1e4
    w_r: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError(f"delta must be positive, got {self.delta}")
        sigma_of(self.t_min, self.t_max, self.Q)  # validates the range

    @property
    def sigma(self):
        return sigma_of(self.t_min, self.t_max, self.Q)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 15
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class SlicePair:
    x1: np.ndarray
    x2: np.ndarray
    k1: int
    k2: int
    frame_index: int


def sigma_of(t_min, t_max, Q):
    """Output-units-per-bin constant: 1 / (Q * log2(t_max / t_min))."""
    if t_min <= 0 or t_max <= t_min:
        raise ConfigurationError(
            f"need t_max > t_min > 0, got [{t_min}, {t_max}]"
        )
    if Q <= 0:
        raise ConfigurationError(f"Q must be positive, got {Q}")
    return 1.0 / (Q * np.log2(t_max / t_min))


def sample_pair(logtg, frame, rng):
    """Draw two slices of one frame at independent shifts from {11..18}."""
    if logtg.K < MIN_LOG_BINS:
        raise ConfigurationError(
            f"log tempogram has {logtg.K} bins; slicing at shift {SHIFT_MAX} "
            f"requires at least {MIN_LOG_BINS}"
        )
    k1 = int(rng.integers(SHIFT_MIN, SHIFT_MAX + 1))
    k2 = int(rng.integers(SHIFT_MIN, SHIFT_MAX + 1))
    row = logtg.values[frame]
    return SlicePair(
        x1=row[k1 : k1 + SLICE_LEN].copy(),
        x2=row[k2 : k2 + SLICE_LEN].copy(),
        k1=k1,
        k2=k2,
        frame_index=frame,
    )


def tempo_error(t1, t2, k1, k2, sigma):
    """Absolute mismatch between the output difference and sigma*(k2 - k1)."""
    return np.abs(
        (np.asarray(t1) - np.asarray(t2))
        - sigma * (np.asarray(k2) - np.asarray(k1))
    )


def huber(x, delta=0.25):
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(x <= delta, 0.5 * x * x, 0.5 * delta * delta + delta * (x - delta))


def loss_T(t1, t2, k1, k2, cfg):
    """Mean Huber norm of the per-item tempo errors."""
    e = tempo_error(t1, t2, k1, k2, cfg.sigma)
    if e.size == 0:
        raise ContractError("empty batch")
    return float(np.mean(huber(e, cfg.delta)))


def loss_R(x1, xhat1, x2, xhat2):
    """Mean over the batch of the summed squared error of both branches."""
    x1, xhat1 = np.atleast_2d(x1), np.atleast_2d(xhat1)
    x2, xhat2 = np.atleast_2d(x2), np.atleast_2d(xhat2)
    if x1.shape != xhat1.shape or x2.shape != xhat2.shape or x1.shape != x2.shape:
        raise ContractError(
            f"shape mismatch: {x1.shape}/{xhat1.shape} vs {x2.shape}/{xhat2.shape}"
        )
    sq = np.sum((x1 - xhat1) ** 2, axis=1) + np.sum((x2 - xhat2) ** 2, axis=1)
    return float(np.mean(sq))


def total_loss(l_t, l_r, cfg):
    return cfg.w_t * l_t + cfg.w_r * l_r


def _huber_grad(e, delta):
    # dh/de for e >= 0; at the threshold both branches agree (= delta)
    return np.minimum(e, delta)


def train_step(p, adam, x1, x2, k1, k2, loss_cfg):
    """One optimization step over a batch of slice pairs.

    Both branches run through the shared parameters as one stacked batch,
    so their gradients accumulate exactly as the Siamese layout requires.
    Returns (loss_T, loss_R, loss_total) for the batch.
    """
    batch = len(x1)
    dtype = p["dec.expand.w"].dtype
    stacked = np.concatenate([x1, x2]).astype(dtype, copy=False)
    t, enc_cache = nn.encoder_forward(stacked, p)
    xhat, dec_cache = nn.decoder_forward(t, p, want_cache=True)
    t1, t2 = t[:batch], t[batch:]

    sigma = loss_cfg.sigma
    signed = (t1 - t2) - sigma * (np.asarray(k2) - np.asarray(k1))
    e = np.abs(signed)
    l_t = float(np.mean(huber(e, loss_cfg.delta)))
    l_r = loss_R(x1, xhat[:batch], x2, xhat[batch:])
    l_total = total_loss(l_t, l_r, loss_cfg)
    if not np.isfinite(l_total):
        raise NumericalError(
            f"non-finite loss (loss_T={l_t}, loss_R={l_r})"
        )

    # dL/dt1 = w_t * h'(e) * sign(signed) / batch; dL/dt2 is its negative
    dpair = loss_cfg.w_t * _huber_grad(e, loss_cfg.delta) * np.sign(signed) / batch
    d_t = np.concatenate([dpair, -dpair]).astype(dtype)
    d_xhat = (loss_cfg.w_r * 2.0 / batch) * (xhat - stacked)
    grads = nn.backward(
        {"d_t": d_t, "d_xhat": d_xhat.astype(dtype)},
        {"encoder": enc_cache, "decoder": dec_cache},
        p,
    )
    nn.adam_step(p, grads, adam)
    return l_t, l_r, l_total


def _gather_slices(pool, rows, shifts):
    idx = shifts[:, None] + np.arange(SLICE_LEN)[None, :]
    return np.take_along_axis(pool[rows], idx, axis=1)


def train(
    dataset,
    p,
    loss_cfg,
    train_cfg,
    checkpoint_dir=None,
    progress=None,
):
    """Train on pooled frames of all log-tempograms; returns (params, history).

    Frames from every track are pooled and reshuffled each epoch
    (seeded), one slice pair sampled per frame per epoch. History holds
    one dict per epoch with the mean loss_T / loss_R / loss_total. A
    non-finite loss aborts training with a diagnostic checkpoint when
    ``checkpoint_dir`` is set.
    """
    if not dataset:
        raise ConfigurationError("empty training dataset")
    first = dataset[0]
    for tg in dataset:
        if tg.K < MIN_LOG_BINS:
            raise ConfigurationError(f"log tempogram with {tg.K} bins in dataset")
        if (tg.t0, tg.Q, tg.K) != (first.t0, first.Q, first.K):
            raise ContractError("tempograms in the dataset disagree on (t0, Q, K)")
    dtype = p["dec.expand.w"].dtype
    pool = np.concatenate([tg.values for tg in dataset]).astype(dtype)
    n_frames = len(pool)
    rng = np.random.default_rng(train_cfg.seed)
    adam = nn.AdamState(p, lr=train_cfg.lr)
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    history = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n_frames)
        sums = np.zeros(3)
        for start in range(0, n_frames, train_cfg.batch_size):
            rows = order[start : start + train_cfg.batch_size]
            shifts = rng.integers(SHIFT_MIN, SHIFT_MAX + 1, size=(2, len(rows)))
            x1 = _gather_slices(pool, rows, shifts[0])
            x2 = _gather_slices(pool, rows, shifts[1])
            try:
                l_t, l_r, l_total = train_step(
                    p, adam, x1, x2, shifts[0], shifts[1], loss_cfg
                )
            except NumericalError:
                if checkpoint_dir:
                    nn.save_checkpoint(
                        os.path.join(checkpoint_dir, "diagnostic_dump.stem1"),
                        p,
                        adam,
                        extra_meta={"aborted_epoch": epoch, "aborted_batch": start},
                    )
                raise
            sums += np.array([l_t, l_r, l_total]) * len(rows)
        means = sums / n_frames
        record = {
            "epoch": epoch,
            "loss_T": float(means[0]),
            "loss_R": float(means[1]),
            "loss_total": float(means[2]),
        }
        history.append(record)
        if checkpoint_dir:
            nn.save_checkpoint(
                os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.stem1"),
                p,
                adam,
                extra_meta={"epoch": epoch},
            )
        if progress is not None:
            progress(record)
    return p, history


def write_history_csv(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,loss_T,loss_R,loss_total\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['loss_T']:.10e},"
                f"{row['loss_R']:.10e},{row['loss_total']:.10e}\n"
            )


def read_history_csv(path):
    history = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "epoch,loss_T,loss_R,loss_total":
            raise ContractError(f"{path}: unexpected history header {header!r}")
        for line in fh:
            epoch, l_t, l_r, l_total = line.strip().split(",")
            history.append(
                {
                    "epoch": int(epoch),
                    "loss_T": float(l_t),
                    "loss_R": float(l_r),
                    "loss_total": float(l_total),
                }
            )
    return history
