"""Deterministic NCHW tensor kernels.

Every other module builds on these. All arrays are single-precision,
laid out (batch, channel, height, width), and every kernel applies one
fixed sequence of vectorized operations, so two invocations on identical
inputs produce bitwise-identical outputs in-process. That determinism is
load-bearing: the encoder and decoder must reproduce the exact same
floats or the entropy-coded stream desynchronizes.

No autodiff, no GPU, no mixed precision.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument

Array = np.ndarray

_F32 = np.float32


def require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidArgument(msg)


def as_tensor(x, name: str = "tensor") -> Array:
    """Validate an NCHW float32 tensor, converting dtype if needed."""
    a = np.asarray(x)
    require(a.ndim == 4, f"{name}: expected rank-4 (n, c, h, w), got shape {a.shape}")
    if a.dtype != _F32:
        a = a.astype(_F32)
    return a


def depthwise_conv(t: Array, kernel: Array, stride: int = 1, padding: int = 0) -> Array:
    """Per-channel spatial convolution; kernel holds one (kh, kw) filter per channel.

    Accumulation walks kernel taps left-to-right, top-to-bottom, so the
    float summation order is fixed.
    """
    t = as_tensor(t)
    kernel = np.asarray(kernel, dtype=_F32)
    require(kernel.ndim == 3, f"depthwise kernel must be (c, kh, kw), got {kernel.shape}")
    n, c, h, w = t.shape
    kc, kh, kw = kernel.shape
    require(kc == c, f"kernel channels {kc} != input channels {c}")
    require(stride >= 1 and padding >= 0, "stride must be >= 1 and padding >= 0")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    require(oh >= 1 and ow >= 1, "kernel larger than padded input")
    if padding:
        tp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=_F32)
        tp[:, :, padding:padding + h, padding:padding + w] = t
    else:
        tp = t
    win = np.empty((n, c, kh * kw, oh * ow), dtype=_F32)
    for dy in range(kh):
        for dx in range(kw):
            win[:, :, dy * kw + dx] = \
                tp[:, :, dy:dy + oh * stride:stride, dx:dx + ow * stride:stride].reshape(n, c, -1)
    out = np.matmul(kernel.reshape(1, kc, 1, kh * kw), win)
    return out.reshape(n, c, oh, ow)


def linear_mix(t: Array, weights: Array, bias: Array | None = None) -> Array:
    """Channel mixing applied independently at each spatial position.

    out[n, :, i, j] = weights @ in[n, :, i, j] + bias, weights shaped (c_out, c_in).
    """
    t = as_tensor(t)
    weights = np.asarray(weights, dtype=_F32)
    require(weights.ndim == 2, f"weights must be (c_out, c_in), got {weights.shape}")
    n, c, h, w = t.shape
    c_out, c_in = weights.shape
    require(c_in == c, f"weights expect {c_in} channels, input has {c}")
    out = np.matmul(weights[None], t.reshape(n, c, h * w))
    if bias is not None:
        bias = np.asarray(bias, dtype=_F32)
        require(bias.shape == (c_out,), f"bias must be ({c_out},), got {bias.shape}")
        out += bias[None, :, None]
    return out.reshape(n, c_out, h, w)


def conv2d(t: Array, weights: Array, bias: Array | None = None,
           stride: int = 1, padding: int = 0) -> Array:
    """Dense 2-D convolution, weights shaped (c_out, c_in, kh, kw).

    Not one of the mandated kernels, but the transform trunks and the
    hyper/context stacks need strided dense convs; implemented here so the
    determinism policy lives in one place. im2col + one matmul, with a
    pointwise fast path for 1x1 kernels.
    """
    t = as_tensor(t)
    weights = np.asarray(weights, dtype=_F32)
    require(weights.ndim == 4, f"conv weights must be rank-4, got {weights.shape}")
    n, c, h, w = t.shape
    c_out, c_in, kh, kw = weights.shape
    require(c_in == c, f"conv expects {c_in} channels, input has {c}")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return linear_mix(t, weights.reshape(c_out, c_in), bias)
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    require(oh >= 1 and ow >= 1, "kernel larger than padded input")
    if padding:
        tp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=_F32)
        tp[:, :, padding:padding + h, padding:padding + w] = t
    else:
        tp = t
    col = np.empty((n, c, kh * kw, oh * ow), dtype=_F32)
    for dy in range(kh):
        for dx in range(kw):
            col[:, :, dy * kw + dx] = \
                tp[:, :, dy:dy + oh * stride:stride, dx:dx + ow * stride:stride].reshape(n, c, -1)
    wmat = weights.reshape(c_out, c * kh * kw)
    out = np.matmul(wmat[None], col.reshape(n, c * kh * kw, oh * ow))
    if bias is not None:
        bias = np.asarray(bias, dtype=_F32)
        require(bias.shape == (c_out,), f"bias must be ({c_out},), got {bias.shape}")
        out += bias[None, :, None]
    return out.reshape(n, c_out, oh, ow)


def wsilu(t: Array) -> Array:
    """Weighted SiLU activation: x * sigmoid(4x), elementwise."""
    t = np.asarray(t, dtype=_F32)
    out = t * _F32(4.0)
    expit(out, out=out)
    out *= t
    return out


def sigmoid(t: Array) -> Array:
    """Numerically stable elementwise logistic function."""
    return expit(np.asarray(t, dtype=_F32))


def pixel_unshuffle(t: Array, r: int) -> Array:
    """Space-to-depth: (n, c, h, w) -> (n, c*r*r, h/r, w/r). Pure index permutation."""
    t = as_tensor(t)
    n, c, h, w = t.shape
    require(r >= 1, "r must be >= 1")
    require(h % r == 0 and w % r == 0, f"spatial dims ({h}, {w}) not divisible by r={r}")
    x = t.reshape(n, c, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(x.reshape(n, c * r * r, h // r, w // r))


def pixel_shuffle(t: Array, r: int) -> Array:
    """Depth-to-space, the exact inverse of :func:`pixel_unshuffle`."""
    t = as_tensor(t)
    n, c, h, w = t.shape
    require(r >= 1, "r must be >= 1")
    require(c % (r * r) == 0, f"channels {c} not divisible by r^2={r * r}")
    x = t.reshape(n, c // (r * r), r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(x.reshape(n, c // (r * r), h * r, w * r))


def spatial_shift(t: Array) -> Array:
    """Parameter-free one-pixel shifts of the first half of the channels.

    Channel groups of width c/8 shift right, left, down, up respectively;
    vacated borders are zero-filled; the second half passes through untouched.
    """
    t = as_tensor(t)
    n, c, h, w = t.shape
    require(c % 8 == 0, f"spatial_shift needs channels divisible by 8, got {c}")
    g = c // 8
    out = t.copy()
    # right (+x)
    out[:, 0:g, :, 1:] = t[:, 0:g, :, :-1]
    out[:, 0:g, :, 0] = 0.0
    # left (-x)
    out[:, g:2 * g, :, :-1] = t[:, g:2 * g, :, 1:]
    out[:, g:2 * g, :, -1] = 0.0
    # down (+y)
    out[:, 2 * g:3 * g, 1:, :] = t[:, 2 * g:3 * g, :-1, :]
    out[:, 2 * g:3 * g, 0, :] = 0.0
    # up (-y)
    out[:, 3 * g:4 * g, :-1, :] = t[:, 3 * g:4 * g, 1:, :]
    out[:, 3 * g:4 * g, -1, :] = 0.0
    return out


def channel_shuffle(t: Array, groups: int) -> Array:
    """Group-transpose channel permutation: reshape (g, c/g), transpose, flatten."""
    t = as_tensor(t)
    n, c, h, w = t.shape
    require(groups >= 1, "groups must be >= 1")
    require(c % groups == 0, f"channels {c} not divisible by groups={groups}")
    x = t.reshape(n, groups, c // groups, h, w)
    x = x.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(n, c, h, w))


def bilinear_sample(t: Array, coords: Array) -> Array:
    """Sample t at fractional (row, col) positions with border clamping.

    coords is (n, 2, ho, wo): plane 0 holds rows, plane 1 holds cols.
    Returns (n, c, ho, wo). Exact at integer coordinates; out-of-range
    positions clamp to the border (replicate).
    """
    t = as_tensor(t)
    coords = np.asarray(coords, dtype=_F32)
    require(coords.ndim == 4 and coords.shape[1] == 2,
            f"coords must be (n, 2, ho, wo), got {coords.shape}")
    require(coords.shape[0] == t.shape[0], "batch mismatch between tensor and coords")
    n, c, h, w = t.shape
    ho, wo = coords.shape[2], coords.shape[3]
    rows = np.clip(coords[:, 0].reshape(n, ho * wo), 0.0, _F32(h - 1))
    cols = np.clip(coords[:, 1].reshape(n, ho * wo), 0.0, _F32(w - 1))
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0i = r0.astype(np.intp)
    c0i = c0.astype(np.intp)
    r1i = np.minimum(r0i + 1, h - 1)
    c1i = np.minimum(c0i + 1, w - 1)
    flat = t.reshape(n, c, h * w)
    out = np.empty((n, c, ho * wo), dtype=_F32)
    for b in range(n):
        v00 = flat[b][:, r0i[b] * w + c0i[b]]
        v01 = flat[b][:, r0i[b] * w + c1i[b]]
        v10 = flat[b][:, r1i[b] * w + c0i[b]]
        v11 = flat[b][:, r1i[b] * w + c1i[b]]
        wr, wc = fr[b][None, :], fc[b][None, :]
        out[b] = ((1 - wr) * (1 - wc) * v00 + (1 - wr) * wc * v01
                  + wr * (1 - wc) * v10 + wr * wc * v11)
    return out.reshape(n, c, ho, wo)


def reduce_mean_spatial(t: Array) -> Array:
    """Global average pooling: per-(n, c) mean over all spatial positions."""
    t = as_tensor(t)
    n, c, h, w = t.shape
    require(h * w >= 1, "empty spatial extent")
    return t.reshape(n, c, h * w).mean(axis=2, dtype=_F32).reshape(n, c, 1, 1)


def round_half_away(x: Array) -> Array:
    """Round to nearest with .5 ties away from zero (shared encoder/decoder rule)."""
    x = np.asarray(x)
    return np.trunc(x + np.copysign(np.asarray(0.5, dtype=x.dtype), x))
