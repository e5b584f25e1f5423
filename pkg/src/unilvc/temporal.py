"""Reference buffer management and the reliability gate.

Low-delay coding keeps one recurrent state updated after every decoded
frame; random access keeps a backward/forward pair that is assigned
directly from decoded-frame features (the recurrent update is skipped in
bi mode). A scalar reliability gate alpha, transmitted with 16-bit
precision in the frame header, scales the temporal feature; at alpha = 0
the gated feature collapses exactly to the intra prior, so inter coding
degrades to intra coding byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import DcBlockWeights, dc_block
from .errors import InvalidArgument, InvalidState
from .tensor_core import (
    as_tensor,
    linear_mix,
    pixel_unshuffle,
    reduce_mean_spatial,
    round_half_away,
    sigmoid,
)

_F32 = np.float32

ALPHA_MAX_CODE = 65535


@dataclass(frozen=True)
class TemporalWeights:
    """All weights of the buffer-feature path and the reliability classifier."""

    extract_proj_w: np.ndarray     # (trunk, 2*trunk)
    extract_proj_b: np.ndarray
    extract_dc: DcBlockWeights
    gate_f_dc: DcBlockWeights      # operates on the concatenated (2*trunk) input
    gate_f_proj_w: np.ndarray      # (trunk, 2*trunk)
    gate_f_proj_b: np.ndarray
    gate_i_dc: DcBlockWeights
    gate_i_proj_w: np.ndarray
    gate_i_proj_b: np.ndarray
    derive_dc0: DcBlockWeights
    derive_dc1: DcBlockWeights
    merge_proj_w: np.ndarray       # (trunk, 2*trunk)
    merge_proj_b: np.ndarray
    merge_dc: DcBlockWeights
    cls_x_proj_w: np.ndarray       # (trunk, 3*16*16)
    cls_x_proj_b: np.ndarray
    cls_f_proj_w: np.ndarray       # (trunk, 4*trunk)
    cls_f_proj_b: np.ndarray
    cls_dc0: DcBlockWeights        # (2*trunk) channels
    cls_dc1: DcBlockWeights
    cls_out_w: np.ndarray          # (1, 2*trunk)
    cls_out_b: np.ndarray


@dataclass(frozen=True)
class TemporalFeature:
    """A rate-adapted temporal feature ready for cross-attention."""

    f: np.ndarray
    source_mode: str = "uni"       # 'uni' | 'bi' | 'intra_prior'


@dataclass
class BufferState:
    """Recurrent temporal memory: one state (uni) or a bwd/fwd pair (bi)."""

    mode: str
    f_i: np.ndarray | None = None
    f_i_bwd: np.ndarray | None = None
    f_i_fwd: np.ndarray | None = None
    version: int = field(default=0)

    def update_uni(self, f_tilde: np.ndarray, w: TemporalWeights) -> None:
        if self.mode != "uni":
            raise InvalidState("recurrent update is only defined for the uni buffer")
        if self.f_i is None:
            raise InvalidState("uni buffer not initialized")
        self.f_i = recurrent_update(self.f_i, f_tilde, w)
        self.version += 1

    def set_bi(self, f_bwd: np.ndarray, f_fwd: np.ndarray) -> None:
        if self.mode != "bi":
            raise InvalidState("set_bi is only defined for the bi buffer")
        self.f_i_bwd = f_bwd
        self.f_i_fwd = f_fwd


def broadcast_prior(f_p: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Materialize the per-quality prior vector over a feature grid."""
    f_p = np.asarray(f_p, dtype=_F32)
    if f_p.shape != (shape[1],):
        raise InvalidArgument(f"prior vector must have {shape[1]} channels, got {f_p.shape}")
    return np.ascontiguousarray(np.broadcast_to(f_p[None, :, None, None], shape))


def extract_hybrid(f_d: np.ndarray, f_r: np.ndarray, w: TemporalWeights) -> np.ndarray:
    """Fuse decoder and reconstruction features into the buffer feature f~."""
    f_d, f_r = as_tensor(f_d), as_tensor(f_r)
    if f_d.shape[2:] != f_r.shape[2:]:
        raise InvalidArgument(f"spatial dims differ: {f_d.shape} vs {f_r.shape}")
    cat = np.concatenate([f_d, f_r], axis=1)
    return dc_block(linear_mix(cat, w.extract_proj_w, w.extract_proj_b), w.extract_dc)


def recurrent_update(prev: np.ndarray, f_tilde: np.ndarray, w: TemporalWeights) -> np.ndarray:
    """Gated blend f_i = g_F * prev + g_I * f~; both gates in (0, 1) elementwise."""
    prev, f_tilde = as_tensor(prev), as_tensor(f_tilde)
    if prev.shape != f_tilde.shape:
        raise InvalidArgument(f"state shapes differ: {prev.shape} vs {f_tilde.shape}")
    cat = np.concatenate([prev, f_tilde], axis=1)
    g_f = sigmoid(linear_mix(dc_block(cat, w.gate_f_dc), w.gate_f_proj_w, w.gate_f_proj_b))
    g_i = sigmoid(linear_mix(dc_block(cat, w.gate_i_dc), w.gate_i_proj_w, w.gate_i_proj_b))
    return g_f * prev + g_i * f_tilde


def derive_temporal_feature(state: np.ndarray, q_f: np.ndarray,
                            w: TemporalWeights, source_mode: str = "uni") -> TemporalFeature:
    """Rate-vector scale followed by two DC blocks: the usable feature f_t."""
    state = as_tensor(state)
    q_f = np.asarray(q_f, dtype=_F32)
    if q_f.shape != (state.shape[1],):
        raise InvalidArgument(f"q_f must have {state.shape[1]} entries, got {q_f.shape}")
    x = state * q_f[None, :, None, None]
    x = dc_block(dc_block(x, w.derive_dc0), w.derive_dc1)
    return TemporalFeature(f=x, source_mode=source_mode)


def merge_bidirectional(f_bwd: TemporalFeature, f_fwd: TemporalFeature,
                        w: TemporalWeights) -> TemporalFeature:
    """Fuse backward/forward features into one with unidirectional dimensionality."""
    if f_bwd.f.shape != f_fwd.f.shape:
        raise InvalidArgument(f"feature shapes differ: {f_bwd.f.shape} vs {f_fwd.f.shape}")
    cat = np.concatenate([f_bwd.f, f_fwd.f], axis=1)
    out = dc_block(linear_mix(cat, w.merge_proj_w, w.merge_proj_b), w.merge_dc)
    return TemporalFeature(f=out, source_mode="bi")


def classify_reliability(x_t: np.ndarray, f_star: TemporalFeature, w: TemporalWeights) -> float:
    """Scalar reliability of the temporal reference, strictly inside (0, 1).

    The frame is bridged to the latent grid by a stride-16 pixel-unshuffle +
    linear projection; the feature by a stride-2 unshuffle + projection.
    Encoder-side only (the decoder reads alpha from the header).
    """
    x_t = as_tensor(x_t)
    xp = linear_mix(pixel_unshuffle(x_t, 16), w.cls_x_proj_w, w.cls_x_proj_b)
    fp = linear_mix(pixel_unshuffle(f_star.f, 2), w.cls_f_proj_w, w.cls_f_proj_b)
    if xp.shape != fp.shape:
        raise InvalidArgument(f"classifier grids differ: {xp.shape} vs {fp.shape}")
    h = dc_block(dc_block(np.concatenate([xp, fp], axis=1), w.cls_dc0), w.cls_dc1)
    s = reduce_mean_spatial(linear_mix(h, w.cls_out_w, w.cls_out_b))
    return float(sigmoid(s)[0, 0, 0, 0])


def quantize_alpha(alpha: float) -> int:
    """Uniform 16-bit quantization of alpha in [0, 1], round-to-nearest."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    return int(min(max(round_half_away(np.float64(alpha) * ALPHA_MAX_CODE), 0), ALPHA_MAX_CODE))


def dequantize_alpha(code: int) -> float:
    """Inverse of :func:`quantize_alpha`; the encoder must gate with this value."""
    if not 0 <= code <= ALPHA_MAX_CODE:
        raise InvalidArgument(f"alpha code must be a u16, got {code}")
    return float(code) / ALPHA_MAX_CODE


def gate_feature(f_star: TemporalFeature, alpha: float, f_p: np.ndarray) -> TemporalFeature:
    """Reliability-gated feature alpha * f_star + broadcast(f_p).

    alpha must come from :func:`dequantize_alpha` so encoder and decoder gate
    with the identical value. At alpha == 0 the result is exactly the intra
    prior broadcast (bitwise), which makes inter coding collapse to intra.
    """
    prior = broadcast_prior(f_p, f_star.f.shape)
    if alpha == 0.0:
        return TemporalFeature(f=prior, source_mode="intra_prior")
    gated = _F32(alpha) * f_star.f + prior
    return TemporalFeature(f=gated, source_mode=f_star.source_mode)


def intra_prior_feature(f_p: np.ndarray, shape: tuple[int, int, int, int]) -> TemporalFeature:
    """The temporal stand-in used by pure intra coding."""
    return TemporalFeature(f=broadcast_prior(f_p, shape), source_mode="intra_prior")
