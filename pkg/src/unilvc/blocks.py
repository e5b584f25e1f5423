"""Composite network blocks.

Two building blocks sit on top of the tensor kernels: the enhanced
depthwise-convolution (DC) block used throughout the trunks and the
temporal machinery, and the hybrid cross-attention module whose local
branch (deformable neighborhood cross-attention) and global branch
(polarity-aware linear cross-attention) inject reference features into
the current frame's features.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .tensor_core import (
    as_tensor,
    channel_shuffle,
    depthwise_conv,
    linear_mix,
    spatial_shift,
    wsilu,
)

_F32 = np.float32

GAMMA_MIN = 0.25
GAMMA_MAX = 4.0
ATTN_DENOM_FLOOR = _F32(1e-6)


@dataclass(frozen=True)
class DcBlockWeights:
    """Weights of one enhanced DC block (channel count is preserved)."""

    dw_kernel: np.ndarray      # (c, 3, 3)
    mlp_w1: np.ndarray         # (c * ratio, c)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray         # (c, c * ratio)
    mlp_b2: np.ndarray
    shuffle_groups: int = 4

    @property
    def channels(self) -> int:
        return self.dw_kernel.shape[0]


def dc_block(t: np.ndarray, w: DcBlockWeights) -> np.ndarray:
    """Spatial shift -> depthwise conv -> channel shuffle -> MLP.

    Two residual connections: one around the spatial path, one around the
    (shuffle + MLP) path, so zeroed conv and MLP weights give exact identity.
    """
    t = as_tensor(t)
    pad = (w.dw_kernel.shape[1] - 1) // 2
    u = t + depthwise_conv(spatial_shift(t), w.dw_kernel, 1, pad)
    v = channel_shuffle(u, w.shuffle_groups)
    m = linear_mix(wsilu(linear_mix(v, w.mlp_w1, w.mlp_b1)), w.mlp_w2, w.mlp_b2)
    return u + m


@dataclass(frozen=True)
class AttentionWeights:
    """Weights for one hybrid cross-attention instance.

    Local branch: per-head q/k/v projections plus a per-head offset net
    (depthwise 3x3 over the concatenated colocated q,k followed by a linear
    layer emitting 2*k^2 values per position). Global branch: query/key/
    value/gate projections and the channel-wise power exponent gamma over
    the polarity-decomposed width (2 * channels).
    """

    wq: np.ndarray             # (c, c)
    wk: np.ndarray
    wv: np.ndarray
    offset_dw: np.ndarray      # (heads, 2d, 3, 3)
    offset_w: np.ndarray       # (heads, 2*k*k, 2d)
    offset_b: np.ndarray       # (heads, 2*k*k)
    wqg: np.ndarray            # (c, c)
    wkg: np.ndarray
    wvg: np.ndarray
    wg: np.ndarray
    gamma: np.ndarray          # (2c,), strictly positive
    heads: int = 2
    k: int = 5

    def __post_init__(self):
        c = self.wq.shape[0]
        if c % self.heads != 0:
            raise InvalidArgument(f"channels {c} not divisible by heads {self.heads}")
        if (c // self.heads) % 2 != 0:
            raise InvalidArgument("per-head value channels must be even for the polarity split")
        if self.k % 2 != 1:
            raise InvalidArgument("neighborhood size k must be odd")
        if self.gamma.shape != (2 * c,):
            raise InvalidArgument(f"gamma must be (2c,) = ({2 * c},), got {self.gamma.shape}")
        if not np.all(self.gamma > 0):
            raise InvalidArgument("gamma must be strictly positive")

    @property
    def channels(self) -> int:
        return self.wq.shape[0]


def clamp_gamma(gamma: np.ndarray) -> np.ndarray:
    """Load-time clamp of the power exponents into [0.25, 4]."""
    return np.clip(np.asarray(gamma, dtype=_F32), _F32(GAMMA_MIN), _F32(GAMMA_MAX))


@lru_cache(maxsize=64)
def _base_grid(h: int, w: int, k: int):
    """Regular k x k neighborhood centers around every position, cached.

    Returns (rows, cols) each shaped (h*w, k*k), float32; neighborhood taps
    ordered row-major.
    """
    half = k // 2
    taps = np.arange(-half, half + 1, dtype=_F32)
    di = np.repeat(taps, k)
    dj = np.tile(taps, k)
    ii = np.repeat(np.arange(h, dtype=_F32), w)
    jj = np.tile(np.arange(w, dtype=_F32), h)
    rows = ii[:, None] + di[None, :]
    cols = jj[:, None] + dj[None, :]
    return rows, cols


# Above this many grid positions the dot-map formulation's (hw x hw) products
# outgrow the direct gather; switch to sampling keys/values directly.
DOT_PATH_MAX_POSITIONS = 4096


def _corner_weights(rows, cols, h: int, wd: int):
    """Clamped bilinear corner indices and weights for (q, kk) sample grids."""
    rows = np.clip(rows, 0.0, _F32(h - 1))
    cols = np.clip(cols, 0.0, _F32(wd - 1))
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0i = r0.astype(np.intp)
    c0i = c0.astype(np.intp)
    r1i = np.minimum(r0i + 1, h - 1)
    c1i = np.minimum(c0i + 1, wd - 1)
    idx = (r0i * wd + c0i, r0i * wd + c1i, r1i * wd + c0i, r1i * wd + c1i)
    wts = ((1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc)
    return idx, wts


def _dn_head_dotmap(qf, kf, vf, rows, cols, h, wd, scale):
    """Small-grid path: form the (hw x hw) query/key dot map once, then
    bilinear-interpolate logits and scatter the attention back onto the grid.

    Mathematically identical to sampling keys/values (bilinear interpolation
    commutes with the dot product and the value sum).
    """
    hw = h * wd
    idx, wts = _corner_weights(rows, cols, h, wd)
    dot = qf.T @ kf                                         # (hw_q, hw_k)
    logits = np.zeros(rows.shape, dtype=_F32)
    for ix, wt in zip(idx, wts):
        logits += np.take_along_axis(dot, ix, axis=1) * wt
    logits *= scale
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    aw = e / e.sum(axis=1, keepdims=True)                   # (hw_q, kk)
    qidx = np.repeat(np.arange(hw, dtype=np.intp), rows.shape[1])
    flat = np.concatenate([(ix.ravel() * hw + qidx) for ix in idx])
    wsum = np.concatenate([(aw * wt).ravel().astype(np.float64) for wt in wts])
    scatter = np.bincount(flat, weights=wsum, minlength=hw * hw)
    out = vf @ scatter.reshape(hw, hw).astype(_F32)         # (d, hw_q)
    return out, aw


def _dn_head_direct(qf, kf, vf, rows, cols, h, wd, scale):
    """Large-grid path: gather keys/values at the four corners directly."""
    d = qf.shape[0]
    idx, wts = _corner_weights(rows, cols, h, wd)
    kv = np.concatenate([kf, vf], axis=0)                   # (2d, hw)
    sampled = np.zeros((2 * d,) + rows.shape, dtype=_F32)
    for ix, wt in zip(idx, wts):
        sampled += np.take(kv, ix.ravel(), axis=1).reshape(sampled.shape) * wt
    ks, vs = sampled[:d], sampled[d:]
    logits = np.einsum("dq,dqm->qm", qf, ks) * scale
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    aw = e / e.sum(axis=1, keepdims=True)
    out = np.einsum("dqm,qm->dq", vs, aw)
    return out, aw


def dn_ca(f_cur: np.ndarray, f_ref: np.ndarray, w: AttentionWeights,
          return_attention: bool = False):
    """Deformable neighborhood cross-attention (local branch).

    Per head and position: predict k^2 offsets from the concatenated
    colocated (q, k), bilinear-sample keys/values at the deformed
    neighborhood (replicate-clamped at borders), then scaled dot-product
    attention over the samples. The evaluation path is chosen purely by
    grid size, so identical inputs always take identical code.
    """
    f_cur = as_tensor(f_cur)
    f_ref = as_tensor(f_ref)
    if f_cur.shape != f_ref.shape:
        raise InvalidArgument(f"feature shapes differ: {f_cur.shape} vs {f_ref.shape}")
    n, c, h, wd = f_cur.shape
    if c != w.channels:
        raise InvalidArgument(f"attention weights expect {w.channels} channels, got {c}")
    heads, k = w.heads, w.k
    d = c // heads
    kk = k * k
    hw = h * wd
    q = linear_mix(f_cur, w.wq)
    key = linear_mix(f_ref, w.wk)
    val = linear_mix(f_ref, w.wv)
    # all heads' offset nets in one depthwise pass over [q_h, k_h] pairs
    off_in = np.concatenate([np.concatenate([q[:, hi * d:(hi + 1) * d],
                                             key[:, hi * d:(hi + 1) * d]], axis=1)
                             for hi in range(heads)], axis=1)
    off = depthwise_conv(off_in, w.offset_dw.reshape(-1, 3, 3), 1, 1)
    base_r, base_c = _base_grid(h, wd, k)
    scale = _F32(1.0 / np.sqrt(d))
    small = hw <= DOT_PATH_MAX_POSITIONS
    out = np.empty((n, c, h, wd), dtype=_F32)
    attns = []
    for b in range(n):
        for hi in range(heads):
            sl = slice(hi * d, (hi + 1) * d)
            oh = linear_mix(off[b:b + 1, 2 * d * hi:2 * d * (hi + 1)],
                            w.offset_w[hi], w.offset_b[hi])
            oh = oh.reshape(kk, 2, hw)                      # (kk, 2, hw)
            rows = base_r + oh[:, 0].T
            cols = base_c + oh[:, 1].T
            qf = np.ascontiguousarray(q[b, sl].reshape(d, hw))
            kf = np.ascontiguousarray(key[b, sl].reshape(d, hw))
            vf = np.ascontiguousarray(val[b, sl].reshape(d, hw))
            run = _dn_head_dotmap if small else _dn_head_direct
            o, aw = run(qf, kf, vf, rows, cols, h, wd, scale)
            out[b, sl] = o.reshape(d, h, wd)
            if return_attention:
                attns.append(aw[None])
    if return_attention:
        return out, attns
    return out


def _phi(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Channel-wise power map phi(x) = x**gamma on nonnegative inputs."""
    return np.power(x, gamma[None, None, :], dtype=_F32)


def pal_ca(f_cur: np.ndarray, f_ref: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Polarity-aware linear cross-attention (global branch).

    Queries/keys split into positive and negative parts, values split into
    same-sign / opposite-sign halves; the kernel rearrangement aggregates
    keys once so complexity is linear in positions. Outputs are gated and
    concatenated along channels.
    """
    f_cur = as_tensor(f_cur)
    f_ref = as_tensor(f_ref)
    if f_cur.shape != f_ref.shape:
        raise InvalidArgument(f"feature shapes differ: {f_cur.shape} vs {f_ref.shape}")
    n, c, h, wd = f_cur.shape
    if c != w.channels:
        raise InvalidArgument(f"attention weights expect {w.channels} channels, got {c}")
    heads = w.heads
    d = c // heads
    dv = d // 2
    qg = linear_mix(f_cur, w.wqg).reshape(n, c, h * wd)
    kg = linear_mix(f_ref, w.wkg).reshape(n, c, h * wd)
    vg = linear_mix(f_ref, w.wvg).reshape(n, c, h * wd)
    gate = linear_mix(f_cur, w.wg).reshape(n, c, h * wd)
    outs = []
    for hi in range(heads):
        sl = slice(hi * d, (hi + 1) * d)
        qh = qg[:, sl].transpose(0, 2, 1)                     # (n, hw, d)
        kh = kg[:, sl].transpose(0, 2, 1)
        vh = vg[:, sl].transpose(0, 2, 1)
        gh = gate[:, sl].transpose(0, 2, 1)
        gamma_h = w.gamma[hi * 2 * d:(hi + 1) * 2 * d]
        qp, qm = np.maximum(qh, 0), np.maximum(-qh, 0)
        kp, km = np.maximum(kh, 0), np.maximum(-kh, 0)
        # one power evaluation for all three polarity maps
        stacked = _phi(np.concatenate(
            [np.concatenate([qp, qm], axis=2),
             np.concatenate([kp, km], axis=2),
             np.concatenate([km, kp], axis=2)], axis=1), gamma_h)
        hw = qh.shape[1]
        phi_q, phi_ks, phi_ko = stacked[:, :hw], stacked[:, hw:2 * hw], stacked[:, 2 * hw:]
        vs, vo = vh[:, :, :dv], vh[:, :, dv:]
        gs, go = gh[:, :, :dv], gh[:, :, dv:]
        num_s = np.matmul(phi_q, np.matmul(phi_ks.transpose(0, 2, 1), vs))
        den_s = np.matmul(phi_q, phi_ks.sum(axis=1)[:, :, None]) + ATTN_DENOM_FLOOR
        num_o = np.matmul(phi_q, np.matmul(phi_ko.transpose(0, 2, 1), vo))
        den_o = np.matmul(phi_q, phi_ko.sum(axis=1)[:, :, None]) + ATTN_DENOM_FLOOR
        z = np.concatenate([gs * (num_s / den_s), go * (num_o / den_o)], axis=2)
        outs.append(z.transpose(0, 2, 1).reshape(n, d, h, wd))
    return np.concatenate(outs, axis=1)


def cross_attn(f_cur: np.ndarray, f_ref: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Hybrid cross-attention with the residual folded in: f_cur + local + global."""
    return as_tensor(f_cur) + dn_ca(f_cur, f_ref, w) + pal_ca(f_cur, f_ref, w)
