"""Minimal NN core: 1-D conv / transposed conv / dense layers with manual
backpropagation, plus Adam and He-uniform initialization.

The encoder maps a tempogram slice to one scalar in (0, 1) through a
stride-2 conv stack, a flatten, and a small dense head ending in a
sigmoid. The decoder expands the scalar back to a slice through a dense
layer, mirrored transposed convolutions, and a kernel-1 linear
projection. All convolutions use zero padding of kernel//2 so stride-2
halving (and doubling) is exact. Parameters are plain numpy arrays in an
ordered mapping; both pretext branches share the same instance.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import container
from .errors import ConfigurationError, ContractError, DataError


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    channel_mults: tuple = (1, 2, 4, 8, 8, 8)
    kernel: int = 3
    stride: int = 2
    head_units: tuple = (48, 1)
    input_len: int = 128

    def __post_init__(self):
        if self.input_len % (self.stride ** len(self.channel_mults)) != 0:
            raise ConfigurationError(
                f"input_len {self.input_len} not divisible by "
                f"stride^{len(self.channel_mults)}"
            )
        if self.head_units[-1] != 1:
            raise ConfigurationError("tempo head must end in a single unit")

    @property
    def channels(self):
        return [self.d * m for m in self.channel_mults]

    @property
    def bottleneck_len(self):
        return self.input_len // (self.stride ** len(self.channel_mults))

    @property
    def flat_units(self):
        return self.bottleneck_len * self.channels[-1]


@dataclass(frozen=True)
class DecoderConfig:
    d: int = 64
    channel_mults: tuple = (8, 8, 8, 4, 2, 1)
    kernel: int = 3
    stride: int = 2
    output_len: int = 128

    def __post_init__(self):
        if self.output_len % (self.stride ** len(self.channel_mults)) != 0:
            raise ConfigurationError(
                f"output_len {self.output_len} not divisible by "
                f"stride^{len(self.channel_mults)}"
            )

    @property
    def channels(self):
        return [self.d * m for m in self.channel_mults]

    @property
    def entry_len(self):
        return self.output_len // (self.stride ** len(self.channel_mults))

    @property
    def expand_units(self):
        return self.entry_len * self.channels[0]


def default_configs(d=64, input_len=128):
    return EncoderConfig(d=d, input_len=input_len), DecoderConfig(
        d=d, output_len=input_len
    )


def encoder_lengths(cfg):
    """Spatial length after the input and after each conv layer."""
    lengths = [cfg.input_len]
    for _ in cfg.channel_mults:
        lengths.append(lengths[-1] // cfg.stride)
    return lengths


def decoder_lengths(cfg):
    """Spatial length at the decoder entry and after each transposed conv."""
    lengths = [cfg.entry_len]
    for _ in cfg.channel_mults:
        lengths.append(lengths[-1] * cfg.stride)
    return lengths


class ModelParams:
    """Ordered name -> array mapping for all weights and biases."""

    def __init__(self, enc_cfg, dec_cfg, tensors):
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.tensors = tensors

    @property
    def names(self):
        return list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return ModelParams(
            self.enc_cfg, self.dec_cfg, {k: v.copy() for k, v in self.tensors.items()}
        )

    def check_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def _shapes(enc_cfg, dec_cfg):
    """Parameter names and shapes in a fixed, documented order."""
    shapes = {}
    c_in = 1
    for i, c_out in enumerate(enc_cfg.channels):
        shapes[f"enc.conv{i}.w"] = (c_out, c_in, enc_cfg.kernel)
        shapes[f"enc.conv{i}.b"] = (c_out,)
        c_in = c_out
    units_in = enc_cfg.flat_units
    for i, units_out in enumerate(enc_cfg.head_units):
        shapes[f"enc.fc{i}.w"] = (units_out, units_in)
        shapes[f"enc.fc{i}.b"] = (units_out,)
        units_in = units_out
    shapes["dec.expand.w"] = (dec_cfg.expand_units, 1)
    shapes["dec.expand.b"] = (dec_cfg.expand_units,)
    c_in = dec_cfg.channels[0]
    for i, c_out in enumerate(dec_cfg.channels):
        shapes[f"dec.tconv{i}.w"] = (c_in, c_out, dec_cfg.kernel)
        shapes[f"dec.tconv{i}.b"] = (c_out,)
        c_in = c_out
    shapes["dec.proj.w"] = (1, c_in, 1)
    shapes["dec.proj.b"] = (1,)
    return shapes


def _fan_in(name, shape):
    if name.endswith(".b"):
        return None
    if "tconv" in name:
        return shape[0] * shape[2]       # (c_in, c_out, k)
    if len(shape) == 3:
        return shape[1] * shape[2]       # conv (c_out, c_in, k)
    return shape[1]                      # dense (out, in)


def init_params(enc_cfg, dec_cfg, seed, dtype=np.float32):
    """He-uniform weights (fan-in scaled), zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(enc_cfg, dec_cfg).items():
        fan_in = _fan_in(name, shape)
        if fan_in is None:
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(enc_cfg, dec_cfg, tensors)


# ---------------------------------------------------------------------------
# layer primitives
#
# Activations are channels-last, (batch, length, channels): the big
# im2col/scatter reshapes are then views instead of copies, which is what
# keeps training on CPU fast. Weights keep their logical shapes,
# (c_out, c_in, k) for conv and (c_in, c_out, k) for transposed conv.

def conv1d_forward(x, w, b, stride, pad):
    batch, length, c_in = x.shape
    c_out, _, kernel = w.shape
    if kernel == 1 and pad == 0:
        l_out = (length - 1) // stride + 1
        pm = np.ascontiguousarray(x[:, ::stride]).reshape(batch * l_out, c_in)
    else:
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        l_out = (length + 2 * pad - kernel) // stride + 1
        win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
        patches = win[:, ::stride][:, :l_out]                # (B, Lout, Cin, k)
        pm = patches.reshape(batch * l_out, c_in * kernel)
    wm = w.transpose(1, 2, 0).reshape(c_in * kernel, c_out)
    y = (pm @ wm).reshape(batch, l_out, c_out)
    y += b
    return y, (pm, wm, x.shape, stride, pad, l_out)


def conv1d_backward(dy, w, cache):
    pm, wm, x_shape, stride, pad, l_out = cache
    batch, length, c_in = x_shape
    c_out, _, kernel = w.shape
    dym = dy.reshape(batch * l_out, c_out)
    dw = (pm.T @ dym).reshape(c_in, kernel, c_out).transpose(2, 0, 1)
    db = dym.sum(axis=0)
    dpatches = (dym @ wm.T).reshape(batch, l_out, c_in, kernel)
    dxp = np.zeros((batch, length + 2 * pad, c_in), dtype=dy.dtype)
    for t in range(kernel):
        dxp[:, t : t + stride * (l_out - 1) + 1 : stride] += dpatches[:, :, :, t]
    dx = dxp[:, pad : pad + length]
    return dx, dw, db


def _is_doubling(stride, pad, kernel, output_padding):
    return stride == 2 and kernel == 3 and pad == 1 and output_padding == 1


def conv_transpose1d_forward(x, w, b, stride, pad, output_padding):
    batch, l_in, c_in = x.shape
    _, c_out, kernel = w.shape
    l_full = (l_in - 1) * stride + kernel
    l_out = (l_in - 1) * stride - 2 * pad + kernel + output_padding
    xm = x.reshape(batch * l_in, c_in)
    wm = w.transpose(0, 2, 1).reshape(c_in, kernel * c_out)
    contrib = (xm @ wm).reshape(batch, l_in, kernel, c_out)
    if _is_doubling(stride, pad, kernel, output_padding):
        # after cropping pad=1: y[2i] = x[i] w1, y[2i+1] = x[i] w2 + x[i+1] w0
        y = np.empty((batch, l_out, c_out), dtype=x.dtype)
        y[:, 0::2] = contrib[:, :, 1]
        y[:, 1::2] = contrib[:, :, 2]
        y[:, 1:-1:2] += contrib[:, 1:, 0]
    else:
        y_full = np.zeros((batch, l_full, c_out), dtype=x.dtype)
        for t in range(kernel):
            y_full[:, t : t + stride * (l_in - 1) + 1 : stride] += contrib[:, :, t]
        y = y_full[:, pad : pad + l_out].copy()
    y += b
    return y, (xm, wm, x.shape, stride, pad, output_padding, l_out, l_full)


def conv_transpose1d_backward(dy, w, cache):
    xm, wm, x_shape, stride, pad, output_padding, l_out, l_full = cache
    batch, l_in, c_in = x_shape
    _, c_out, kernel = w.shape
    gathered = np.empty((batch, l_in, kernel, c_out), dtype=dy.dtype)
    if _is_doubling(stride, pad, kernel, output_padding):
        gathered[:, :, 1] = dy[:, 0::2]
        gathered[:, :, 2] = dy[:, 1::2]
        gathered[:, 1:, 0] = dy[:, 1:-1:2]
        gathered[:, 0, 0] = 0.0
    else:
        dy_full = np.zeros((batch, l_full, c_out), dtype=dy.dtype)
        dy_full[:, pad : pad + l_out] = dy
        for t in range(kernel):
            gathered[:, :, t] = dy_full[:, t : t + stride * (l_in - 1) + 1 : stride]
    gm = gathered.reshape(batch * l_in, kernel * c_out)
    dw = (xm.T @ gm).reshape(c_in, kernel, c_out).transpose(0, 2, 1)
    db = dy.sum(axis=(0, 1))
    dx = (gm @ wm.T).reshape(batch, l_in, c_in)
    return dx, dw, db


def dense_forward(x, w, b):
    return x @ w.T + b, x


def dense_backward(dy, w, cache):
    x = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu_forward(x):
    """In-place rectification; the mask is recoverable from the output."""
    np.maximum(x, 0.0, out=x)
    return x, x > 0


def relu_backward(dy, mask):
    dy *= mask
    return dy


def sigmoid(x):
    return expit(x)


# ---------------------------------------------------------------------------
# encoder / decoder

def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ContractError(f"expected a slice or batch of slices, got shape {x.shape}")


def encoder_forward(x, p):
    """Tempogram slice(s) -> tempo scalar(s) in (0, 1), plus backprop cache.

    Accepts one slice of length input_len or a (batch, input_len) array;
    the returned estimate matches (scalar or vector).
    """
    cfg = p.enc_cfg
    xb, single = _as_batch(x)
    if xb.shape[1] != cfg.input_len:
        raise ContractError(f"expected slices of {cfg.input_len}, got {xb.shape[1]}")
    if not np.all(np.isfinite(xb)):
        raise DataError("non-finite values in encoder input")
    h = xb[:, :, None]
    convs = []
    for i in range(len(cfg.channels)):
        w, b = p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"]
        h, conv_cache = conv1d_forward(h, w, b, cfg.stride, cfg.kernel // 2)
        h, mask = relu_forward(h)
        convs.append((conv_cache, mask))
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    fcs = []
    for i in range(len(cfg.head_units)):
        w, b = p[f"enc.fc{i}.w"], p[f"enc.fc{i}.b"]
        h, fc_cache = dense_forward(h, w, b)
        if i < len(cfg.head_units) - 1:
            h, mask = relu_forward(h)
        else:
            mask = None
        fcs.append((fc_cache, mask))
    t = sigmoid(h[:, 0])
    cache = {"convs": convs, "flat_shape": flat_shape, "fcs": fcs, "t": t}
    return (float(t[0]) if single else t), cache


def encoder_backward(dt, cache, p, grads):
    """Backprop dL/dt through the encoder, accumulating into ``grads``."""
    cfg = p.enc_cfg
    t = cache["t"]
    dh = (dt * t * (1.0 - t))[:, None]
    for i in reversed(range(len(cfg.head_units))):
        fc_cache, mask = cache["fcs"][i]
        if mask is not None:
            dh = relu_backward(dh, mask)
        dh, dw, db = dense_backward(dh, p[f"enc.fc{i}.w"], fc_cache)
        grads[f"enc.fc{i}.w"] += dw
        grads[f"enc.fc{i}.b"] += db
    dh = dh.reshape(cache["flat_shape"])
    for i in reversed(range(len(cfg.channels))):
        conv_cache, mask = cache["convs"][i]
        dh = relu_backward(dh, mask)
        dh, dw, db = conv1d_backward(dh, p[f"enc.conv{i}.w"], conv_cache)
        grads[f"enc.conv{i}.w"] += dw
        grads[f"enc.conv{i}.b"] += db
    return dh[:, :, 0]


def decoder_forward(t, p, want_cache=False):
    """Tempo scalar(s) -> reconstructed slice(s) of length output_len."""
    cfg = p.dec_cfg
    tb = np.asarray(t, dtype=p["dec.expand.w"].dtype)
    single = tb.ndim == 0
    tb = np.atleast_1d(tb)[:, None]
    if not np.all(np.isfinite(tb)):
        raise DataError("non-finite tempo estimate fed to decoder")
    h, expand_cache = dense_forward(tb, p["dec.expand.w"], p["dec.expand.b"])
    h, expand_mask = relu_forward(h)
    h = h.reshape(len(tb), cfg.entry_len, cfg.channels[0])
    tconvs = []
    for i in range(len(cfg.channels)):
        w, b = p[f"dec.tconv{i}.w"], p[f"dec.tconv{i}.b"]
        h, tc_cache = conv_transpose1d_forward(
            h, w, b, cfg.stride, cfg.kernel // 2, output_padding=cfg.stride - 1
        )
        h, mask = relu_forward(h)
        tconvs.append((tc_cache, mask))
    h, proj_cache = conv1d_forward(h, p["dec.proj.w"], p["dec.proj.b"], 1, 0)
    xhat = h[:, :, 0]
    if not want_cache:
        return xhat[0] if single else xhat
    cache = {
        "expand": expand_cache,
        "expand_mask": expand_mask,
        "tconvs": tconvs,
        "proj": proj_cache,
    }
    return (xhat[0] if single else xhat), cache


def decoder_backward(dxhat, cache, p, grads):
    """Backprop dL/dxhat; returns dL/dt and accumulates parameter grads."""
    cfg = p.dec_cfg
    dh = dxhat[:, :, None]
    dh, dw, db = conv1d_backward(dh, p["dec.proj.w"], cache["proj"])
    grads["dec.proj.w"] += dw
    grads["dec.proj.b"] += db
    for i in reversed(range(len(cfg.channels))):
        tc_cache, mask = cache["tconvs"][i]
        dh = relu_backward(dh, mask)
        dh, dw, db = conv_transpose1d_backward(dh, p[f"dec.tconv{i}.w"], tc_cache)
        grads[f"dec.tconv{i}.w"] += dw
        grads[f"dec.tconv{i}.b"] += db
    dh = dh.reshape(dh.shape[0], -1)
    dh = relu_backward(dh, cache["expand_mask"])
    dt, dw, db = dense_backward(dh, p["dec.expand.w"], cache["expand"])
    grads["dec.expand.w"] += dw
    grads["dec.expand.b"] += db
    return dt[:, 0]


def zero_grads(p):
    return {name: np.zeros_like(arr) for name, arr in p.tensors.items()}


def backward(loss_grads, caches, p):
    """Exact gradients of the combined loss for every parameter.

    ``loss_grads`` holds the upstream derivatives ``d_t`` (direct dL/dt
    per row, before the decoder path) and ``d_xhat`` (dL/dxhat per row);
    ``caches`` holds the matching encoder/decoder caches. Rows may stack
    both pretext branches; shared parameters accumulate across all rows.
    """
    d_t = np.asarray(loss_grads["d_t"])
    d_xhat = loss_grads.get("d_xhat")
    enc_cache = caches["encoder"]
    if len(d_t) != len(enc_cache["t"]):
        raise ContractError(
            f"{len(d_t)} upstream grads for {len(enc_cache['t'])} cached rows"
        )
    grads = zero_grads(p)
    d_t_total = d_t.astype(p["dec.expand.w"].dtype, copy=True)
    if d_xhat is not None:
        d_t_total += decoder_backward(
            np.asarray(d_xhat), caches["decoder"], p, grads
        )
    encoder_backward(d_t_total, enc_cache, p, grads)
    return grads


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """First/second moments plus step counter for every parameter."""

    def __init__(self, p, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(arr) for name, arr in p.tensors.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in p.tensors.items()}


def adam_step(p, grads, state):
    """One Adam update with bias correction; mutates and returns (p, state)."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, theta in p.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match {name} {theta.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        theta -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return p, state


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, p, adam=None, extra_meta=None):
    tensors = dict(p.tensors)
    meta = {
        "encoder": {
            "d": p.enc_cfg.d,
            "channel_mults": list(p.enc_cfg.channel_mults),
            "kernel": p.enc_cfg.kernel,
            "stride": p.enc_cfg.stride,
            "head_units": list(p.enc_cfg.head_units),
            "input_len": p.enc_cfg.input_len,
        },
        "decoder": {
            "d": p.dec_cfg.d,
            "channel_mults": list(p.dec_cfg.channel_mults),
            "kernel": p.dec_cfg.kernel,
            "stride": p.dec_cfg.stride,
            "output_len": p.dec_cfg.output_len,
        },
    }
    if adam is not None:
        for name in p.tensors:
            tensors[f"adam.m.{name}"] = adam.m[name]
            tensors[f"adam.v.{name}"] = adam.v[name]
        meta["adam"] = {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "step": adam.step,
        }
    if extra_meta:
        meta.update(extra_meta)
    container.write_tensors(path, tensors, meta)


def load_checkpoint(path, dtype=np.float32):
    tensors, meta = container.read_tensors(path)
    enc_meta = meta["encoder"]
    dec_meta = meta["decoder"]
    enc_cfg = EncoderConfig(
        d=enc_meta["d"],
        channel_mults=tuple(enc_meta["channel_mults"]),
        kernel=enc_meta["kernel"],
        stride=enc_meta["stride"],
        head_units=tuple(enc_meta["head_units"]),
        input_len=enc_meta["input_len"],
    )
    dec_cfg = DecoderConfig(
        d=dec_meta["d"],
        channel_mults=tuple(dec_meta["channel_mults"]),
        kernel=dec_meta["kernel"],
        stride=dec_meta["stride"],
        output_len=dec_meta["output_len"],
    )
    params = {
        name: arr.astype(dtype)
        for name, arr in tensors.items()
        if not name.startswith("adam.")
    }
    p = ModelParams(enc_cfg, dec_cfg, params)
    adam = None
    if "adam" in meta:
        adam = AdamState(
            p,
            lr=meta["adam"]["lr"],
            beta1=meta["adam"]["beta1"],
            beta2=meta["adam"]["beta2"],
            eps=meta["adam"]["eps"],
        )
        adam.step = int(meta["adam"]["step"])
        for name in p.tensors:
            adam.m[name] = tensors[f"adam.m.{name}"].astype(dtype)
            adam.v[name] = tensors[f"adam.v.{name}"].astype(dtype)
    return p, adam, meta
