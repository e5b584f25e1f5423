"""Hierarchical progressive context model and the hyperprior path.

The latent is coded coarse-to-fine over three nested spatial subsets:
S1 (stride-4 anchors), S2 (the remaining stride-2 positions), S3 (the
rest), split into 11 totally ordered steps (2 on S1, 3 on S2, 6 on S3).
Entropy parameters for each step are predicted from already-decoded
symbols plus hyperprior features only; prediction masks its context
internally, so causality is structural rather than assumed.

The hyperprior codes a scalar-quantized latent-of-the-latent with a
static per-channel generalized-Gaussian prior and, on decode, emits the
initial context features plus the element-wise scales w_e / w_d applied
around quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .entropy_model import (
    MU_STEP,
    RangeDecoder,
    RangeEncoder,
    pmf_for_indices,
    snap_mu_code,
    snap_sigma_index,
    SIGMA_GRID,
)
from .errors import InvalidArgument, InvalidState
from .lattice_quant import LatticeBasis
from .tensor_core import conv2d, pixel_shuffle, round_half_away, wsilu

_F32 = np.float32

SYMBOL_CLIP = 255
SCALE_STRIDE = {1: 4, 2: 2, 3: 1}
STEP_SCALES = (1, 1, 2, 2, 2, 3, 3, 3, 3, 3, 3)
LVQ_GROUP = 4
_W_FLOOR = _F32(1e-3)


@dataclass(frozen=True)
class Step:
    """One coding step: a scale id plus its grid positions in row-major order."""

    scale: int
    rows: np.ndarray
    cols: np.ndarray

    @property
    def count(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class CodingSchedule:
    """The 11-step partition of a (padded) latent grid."""

    height: int                 # padded dims (multiples of 4)
    width: int
    orig_height: int
    orig_width: int
    scale_masks: tuple          # three (h, w) bool arrays
    steps: tuple                # eleven Step records
    masks_before: tuple         # per step: union of all earlier steps, (h, w) bool
    masks_before_f32: tuple     # same planes as float32 (context input channel)
    completed_scale_before: tuple  # per step: deepest fully decoded scale (0 = none)
    step_valid: tuple           # per step: bool mask of positions inside the original grid

    @property
    def padded(self) -> bool:
        return (self.height, self.width) != (self.orig_height, self.orig_width)


def _pad4(x: int) -> int:
    return max(4, -(-x // 4) * 4)


@lru_cache(maxsize=256)
def build_schedule(h: int, w: int) -> CodingSchedule:
    """Deterministic coding schedule for an h x w latent grid.

    Grids that are not multiples of four are right/bottom padded; the steps
    then partition the padded grid. Within S1 the two steps split by the
    checkerboard parity of (row//4 + col//4); S2's three steps split by the
    (row%4, col%4) residue; S3's six steps by (row%2, col%2) residue crossed
    with the parity of (row//2 + col//2).
    """
    if h < 4 or w < 4:
        raise InvalidArgument(f"latent grid too small for scheduling: {h}x{w}")
    hp, wp = _pad4(h), _pad4(w)
    rr, cc = np.mgrid[0:hp, 0:wp]
    s1 = (rr % 4 == 0) & (cc % 4 == 0)
    s2 = (rr % 2 == 0) & (cc % 2 == 0) & ~s1
    s3 = ~(s1 | s2)
    par4 = (rr // 4 + cc // 4) % 2
    par2 = (rr // 2 + cc // 2) % 2
    masks = [s1 & (par4 == 0), s1 & (par4 == 1)]
    for a, b in ((0, 2), (2, 0), (2, 2)):
        masks.append(s2 & (rr % 4 == a) & (cc % 4 == b))
    for a, b in ((0, 1), (1, 0), (1, 1)):
        m = s3 & (rr % 2 == a) & (cc % 2 == b)
        masks.append(m & (par2 == 0))
        masks.append(m & (par2 == 1))
    steps = []
    valid = []
    for scale, m in zip(STEP_SCALES, masks):
        rows, cols = np.nonzero(m)
        steps.append(Step(scale=scale, rows=rows, cols=cols))
        valid.append((rows < h) & (cols < w))
    before = []
    acc = np.zeros((hp, wp), dtype=bool)
    for m in masks:
        before.append(acc.copy())
        acc |= m
    completed = (0, 0, 1, 1, 1, 2, 2, 2, 2, 2, 2)
    return CodingSchedule(
        height=hp, width=wp, orig_height=h, orig_width=w,
        scale_masks=(s1, s2, s3), steps=tuple(steps),
        masks_before=tuple(before),
        masks_before_f32=tuple(b[None, None].astype(_F32) for b in before),
        completed_scale_before=completed,
        step_valid=tuple(valid),
    )


def _nn_fill(values: np.ndarray, stride: int) -> np.ndarray:
    """Nearest-anchor fill from a stride-subsampled grid to full resolution."""
    if stride == 1:
        return values.copy()
    h, w = values.shape[2], values.shape[3]
    last_r = ((h - 1) // stride) * stride
    last_c = ((w - 1) // stride) * stride
    rmap = np.minimum((np.arange(h) + stride // 2) // stride * stride, last_r)
    cmap = np.minimum((np.arange(w) + stride // 2) // stride * stride, last_c)
    return np.ascontiguousarray(values[:, :, rmap][:, :, :, cmap])


def upscale_writeback(decoded_scale_values: np.ndarray, schedule: CodingSchedule,
                      scale_id: int, decoded_mask: np.ndarray | None = None) -> np.ndarray:
    """Propagate a completed scale's decoded values to every finer position.

    decoded_scale_values holds decoded values at all positions of scales
    <= scale_id (other positions are ignored). If decoded_mask is supplied
    it is checked to cover the scale, else InvalidState.
    """
    if scale_id not in SCALE_STRIDE:
        raise InvalidArgument(f"scale_id must be 1..3, got {scale_id}")
    if decoded_mask is not None:
        need = np.zeros((schedule.height, schedule.width), dtype=bool)
        for s in range(scale_id):
            need |= schedule.scale_masks[s]
        if not decoded_mask[need].all():
            raise InvalidState(f"scale {scale_id} is not fully decoded")
    return _nn_fill(decoded_scale_values, SCALE_STRIDE[scale_id])


# --------------------------------------------------------------------------
# hyperprior
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperWeights:
    """Hyper analysis/synthesis convs plus the static per-channel z prior
    (mu/sigma stored as snapped grid indices, beta clamped at load)."""

    ha1_w: np.ndarray
    ha1_b: np.ndarray
    ha2_w: np.ndarray
    ha2_b: np.ndarray
    hs1_w: np.ndarray
    hs1_b: np.ndarray
    hs2_w: np.ndarray
    hs2_b: np.ndarray
    prior_mu_code: np.ndarray    # (z_channels,) int32
    prior_sigma_idx: np.ndarray  # (z_channels,) int32
    prior_beta: np.ndarray       # (z_channels,) float64 in [0.5, 4]

    @property
    def z_channels(self) -> int:
        return self.ha2_w.shape[0]

    def prior_table(self, channel: int):
        return pmf_for_indices(int(self.prior_mu_code[channel]),
                               int(self.prior_sigma_idx[channel]),
                               float(self.prior_beta[channel]))


@dataclass(frozen=True)
class HyperLatent:
    """Decoded hyper side information: quantized z plus derived tensors."""

    z_hat: np.ndarray        # (1, z_channels, h/2, w/2) int32
    features: np.ndarray     # (1, ctx_channels, h, w) float32
    w_e: np.ndarray          # (1, latent_channels, h, w) strictly positive
    w_d: np.ndarray

    def with_features(self, features: np.ndarray) -> "HyperLatent":
        return replace(self, features=features)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(_F32(0.0), np.asarray(x, dtype=_F32))


def pad_latent(y: np.ndarray) -> np.ndarray:
    """Zero-pad a latent right/bottom to the scheduling grid (multiples of 4)."""
    n, c, h, w = y.shape
    hp, wp = _pad4(h), _pad4(w)
    if (hp, wp) == (h, w):
        return y
    out = np.zeros((n, c, hp, wp), dtype=_F32)
    out[:, :, :h, :w] = y
    return out


def hyper_analyze(y_pad: np.ndarray, w: HyperWeights) -> np.ndarray:
    h1 = wsilu(conv2d(y_pad, w.ha1_w, w.ha1_b, stride=2, padding=1))
    return conv2d(h1, w.ha2_w, w.ha2_b, stride=1, padding=1)


def hyper_synthesize(z_hat: np.ndarray, w: HyperWeights, latent_channels: int):
    """h_s(z_hat): context features plus the element-wise scales w_e, w_d."""
    zf = z_hat.astype(_F32)
    h1 = wsilu(conv2d(zf, w.hs1_w, w.hs1_b, stride=1, padding=1))
    out = pixel_shuffle(conv2d(h1, w.hs2_w, w.hs2_b, stride=1, padding=0), 2)
    ctx_ch = out.shape[1] - 2 * latent_channels
    ctx = out[:, :ctx_ch]
    w_e = _softplus(out[:, ctx_ch:ctx_ch + latent_channels]) + _W_FLOOR
    w_d = _softplus(out[:, ctx_ch + latent_channels:]) + _W_FLOOR
    return np.ascontiguousarray(ctx), w_e, w_d


def hyper_encode(y: np.ndarray, w: HyperWeights, latent_channels: int | None = None):
    """Code the hyper-latent; returns (payload, HyperLatent, estimated bits).

    The returned HyperLatent is derived from the decoded (quantized) z, so
    the encoder sees exactly what the decoder will reconstruct.
    """
    latent_channels = latent_channels or y.shape[1]
    y_pad = pad_latent(y)
    z = hyper_analyze(y_pad, w)
    sym = np.clip(round_half_away(z), -SYMBOL_CLIP, SYMBOL_CLIP).astype(np.int32)
    enc = RangeEncoder()
    est_bits = 0.0
    flat = sym.reshape(sym.shape[1], -1)
    for c in range(sym.shape[1]):
        table = w.prior_table(c)
        bits = table.bits()
        for s in flat[c]:
            enc.encode(table, int(s))
        est_bits += float(bits[flat[c] - table.lo].sum())
    payload = enc.finish()
    ctx, w_e, w_d = hyper_synthesize(sym, w, latent_channels)
    return payload, HyperLatent(z_hat=sym, features=ctx, w_e=w_e, w_d=w_d), est_bits


def hyper_decode(payload: bytes, w: HyperWeights, latent_hw: tuple[int, int],
                 latent_channels: int):
    """Decode the hyper payload for a latent of the given (unpadded) size."""
    hp, wp = _pad4(latent_hw[0]), _pad4(latent_hw[1])
    hz, wz = hp // 2, wp // 2
    dec = RangeDecoder(payload)
    sym = np.empty((1, w.z_channels, hz, wz), dtype=np.int32)
    for c in range(w.z_channels):
        table = w.prior_table(c)
        plane = [dec.decode(table) for _ in range(hz * wz)]
        sym[0, c] = np.array(plane, dtype=np.int32).reshape(hz, wz)
    ctx, w_e, w_d = hyper_synthesize(sym, w, latent_channels)
    return HyperLatent(z_hat=sym, features=ctx, w_e=w_e, w_d=w_d)


# --------------------------------------------------------------------------
# context parameter prediction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HpcmWeights:
    """Shared prediction stack: two 3x3 convs plus a per-step bias and the
    1x1 head emitting (mu, sigma_raw) per latent channel."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    step_bias: np.ndarray        # (11, hidden)
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    out_w: np.ndarray            # (2 * latent_channels, hidden, 1, 1)
    out_b: np.ndarray

    @property
    def latent_channels(self) -> int:
        return self.out_w.shape[0] // 2

    @property
    def ctx_feature_channels(self) -> int:
        return self.conv1_w.shape[1] - 2 * self.latent_channels - 1


@dataclass(frozen=True)
class StepParams:
    """Snapped entropy parameters for every position of one coding step."""

    rows: np.ndarray
    cols: np.ndarray
    mu: np.ndarray          # (positions, latent_channels) float32, on the 1/64 grid
    sigma: np.ndarray       # (positions, latent_channels) float64 grid values
    sigma_idx: np.ndarray   # (positions, latent_channels) int32


def predict_params(step: int, decoded_context: np.ndarray, hyper: HyperLatent,
                   weights: HpcmWeights) -> StepParams:
    """Entropy parameters for one step from decoded symbols + hyper features.

    The context is re-masked internally to the union of earlier steps, so
    values at not-yet-decoded positions (sentinel zeros or anything else)
    cannot influence the output.
    """
    n, c, h, w = decoded_context.shape
    if h % 4 or w % 4:
        raise InvalidArgument("decoded_context must be padded to multiples of 4")
    schedule = build_schedule(h, w)
    if not 1 <= step <= len(schedule.steps):
        raise InvalidArgument(f"step must be 1..{len(schedule.steps)}, got {step}")
    mask = schedule.masks_before[step - 1]
    ctx = np.where(mask[None, None], decoded_context, _F32(0.0))
    completed = schedule.completed_scale_before[step - 1]
    if completed:
        filled = _nn_fill(ctx, SCALE_STRIDE[completed])
    else:
        filled = np.zeros_like(ctx)
    planes = np.concatenate(
        [ctx, filled, schedule.masks_before_f32[step - 1], hyper.features], axis=1)
    h1 = conv2d(planes, weights.conv1_w, weights.conv1_b, stride=1, padding=1)
    h1 = wsilu(h1 + weights.step_bias[step - 1][None, :, None, None])
    h2 = wsilu(conv2d(h1, weights.conv2_w, weights.conv2_b, stride=1, padding=1))
    out = conv2d(h2, weights.out_w, weights.out_b, stride=1, padding=0)
    lat = weights.latent_channels
    st = schedule.steps[step - 1]
    mu_raw = out[0, :lat][:, st.rows, st.cols].T          # (positions, lat)
    sigma_raw = out[0, lat:][:, st.rows, st.cols].T
    mu_code = snap_mu_code(mu_raw)
    mu = mu_code.astype(_F32) * _F32(MU_STEP)
    sigma_idx = snap_sigma_index(_softplus(sigma_raw))
    sigma = SIGMA_GRID[sigma_idx]
    return StepParams(rows=st.rows, cols=st.cols, mu=mu, sigma=sigma, sigma_idx=sigma_idx)


# --------------------------------------------------------------------------
# latent coding
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CodingInfo:
    """Accounting record for one coded latent/hyper payload."""

    symbol_count: int
    estimated_bits: float
    payload_bits: int


def _step_tables(sigma_idx: np.ndarray, beta: float):
    """Per-symbol pmf tables plus the summed ideal codelength helper.

    Returns (tables list aligned with sigma_idx.ravel(), bits_fn) where
    bits_fn(symbols) computes sum(-log2 P(s_i)) vectorized per unique table.
    """
    flat = sigma_idx.ravel()
    uniq, inverse = np.unique(flat, return_inverse=True)
    uniq_tables = [pmf_for_indices(0, int(g), beta) for g in uniq]
    tables = [uniq_tables[i] for i in inverse]

    def bits_fn(symbols: np.ndarray) -> float:
        total = 0.0
        for ui, table in enumerate(uniq_tables):
            sel = symbols[inverse == ui]
            if sel.size:
                total += float(table.bits()[sel - table.lo].sum())
        return total

    return tables, bits_fn


def encode_latent(y: np.ndarray, hyper: HyperLatent, basis: LatticeBasis,
                  quality, weights: HpcmWeights, mode: str = "AI"):
    """Quantize and code a latent; returns (payload, y_hat, CodingInfo).

    y_hat is the decoder-identical reconstruction: the encoder writes back
    through exactly the code path the decoder runs.
    """
    n, c, h, w = y.shape
    schedule = build_schedule(h, w)
    beta = float(quality.beta_by_mode[mode])
    a = _F32(quality.a)
    inv_a = _F32(1.0) / a
    y_pad = pad_latent(y)
    ys = (y_pad * hyper.w_e) * a
    ctx = np.zeros_like(y_pad)
    enc = RangeEncoder()
    encode_sym = enc.encode
    est_bits = 0.0
    count = 0
    for si in range(1, len(schedule.steps) + 1):
        if schedule.steps[si - 1].rows.size == 0:
            continue
        sp = predict_params(si, ctx, hyper, weights)
        ys_at = ys[0][:, sp.rows, sp.cols].T                     # (P, c)
        groups = ys_at.shape[1] // LVQ_GROUP
        ytr = (ys_at - sp.mu).reshape(-1, groups, LVQ_GROUP) @ basis.b_inv.T
        sym_f = np.clip(round_half_away(ytr), -SYMBOL_CLIP, SYMBOL_CLIP)
        if schedule.padded:
            sym_f[~schedule.step_valid[si - 1]] = 0.0            # forced zeros off-grid
        flat = sym_f.reshape(-1, ys_at.shape[1]).astype(np.int64).ravel()
        tables, bits_fn = _step_tables(sp.sigma_idx, beta)
        for s, table in zip(flat.tolist(), tables):
            encode_sym(table, s)
        est_bits += bits_fn(flat)
        count += flat.size
        ctx = _writeback(ctx, sp, sym_f, basis, inv_a, hyper.w_d)
    payload = enc.finish()
    y_hat = np.ascontiguousarray(ctx[:, :, :h, :w])
    return payload, y_hat, CodingInfo(count, est_bits, len(payload) * 8)


def decode_latent(payload: bytes, hyper: HyperLatent, basis: LatticeBasis,
                  quality, weights: HpcmWeights, latent_hw: tuple[int, int],
                  mode: str = "AI"):
    """Decode a latent payload; bitwise-identical to the encoder's y_hat."""
    h, w = latent_hw
    schedule = build_schedule(h, w)
    beta = float(quality.beta_by_mode[mode])
    a = _F32(quality.a)
    inv_a = _F32(1.0) / a
    lat = weights.latent_channels
    ctx = np.zeros((1, lat, schedule.height, schedule.width), dtype=_F32)
    dec = RangeDecoder(payload)
    decode_sym = dec.decode
    est_bits = 0.0
    count = 0
    for si in range(1, len(schedule.steps) + 1):
        if schedule.steps[si - 1].rows.size == 0:
            continue
        sp = predict_params(si, ctx, hyper, weights)
        p = sp.rows.size
        tables, bits_fn = _step_tables(sp.sigma_idx, beta)
        syms = np.fromiter((decode_sym(t) for t in tables), dtype=np.int64, count=p * lat)
        est_bits += bits_fn(syms)
        count += syms.size
        sym_f = syms.astype(_F32).reshape(p, lat // LVQ_GROUP, LVQ_GROUP)
        ctx = _writeback(ctx, sp, sym_f, basis, inv_a, hyper.w_d)
    y_hat = np.ascontiguousarray(ctx[:, :, :h, :w])
    return y_hat, CodingInfo(count, est_bits, len(payload) * 8)


def _writeback(ctx: np.ndarray, sp: StepParams, sym_f: np.ndarray,
               basis: LatticeBasis, inv_a: np.float32, w_d: np.ndarray) -> np.ndarray:
    """Reconstruct one step's symbols and write them into the context.

    Shared verbatim by encoder and decoder so both produce identical floats.
    """
    p = sp.rows.size
    lat = sp.mu.shape[1]
    sym_f = sym_f.reshape(p, lat // LVQ_GROUP, LVQ_GROUP).astype(_F32)
    ysr = (sym_f @ basis.b_mat.T).reshape(p, lat) + sp.mu
    y_rec = (ysr * inv_a) * w_d[0][:, sp.rows, sp.cols].T
    ctx[0][:, sp.rows, sp.cols] = y_rec.T
    return ctx
