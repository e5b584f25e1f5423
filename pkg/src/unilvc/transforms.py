"""Analysis and synthesis transforms (the encoder/decoder trunks).

The analysis transform takes a frame to a 16x-downsampled latent through
a pixel-unshuffle front end, one cross-attention instance fed by the
temporal feature, a stack of DC blocks with the encoder rate vector
injected, and a final strided conv. Synthesis mirrors it and taps the
two features the buffer path consumes. A third cross-attention instance
conditions the entropy model's context features on the same temporal
feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import AttentionWeights, DcBlockWeights, cross_attn, dc_block
from .errors import InvalidArgument
from .hpcm import HpcmWeights, HyperLatent, HyperWeights
from .lattice_quant import LatticeBasis
from .temporal import TemporalWeights
from .tensor_core import (
    as_tensor,
    conv2d,
    linear_mix,
    pixel_shuffle,
    pixel_unshuffle,
    wsilu,
)

_F32 = np.float32

MODES = ("AI", "LD", "RA")


@dataclass(frozen=True)
class QualityConfig:
    """Everything one quality level controls at run time."""

    quality_index: int
    lam: float                    # rate-distortion multiplier (diagnostic)
    q_e: np.ndarray               # per-channel scale vectors, strictly positive
    q_d: np.ndarray
    q_f: np.ndarray
    q_r: np.ndarray
    a: float                      # lattice density scalar, > 0
    beta_by_mode: dict            # {'AI' | 'LD' | 'RA': shape parameter}
    f_p: np.ndarray               # intra prior vector (trunk channels)

    def __post_init__(self):
        for name in ("q_e", "q_d", "q_f", "q_r"):
            v = getattr(self, name)
            if not np.all(v > 0):
                raise InvalidArgument(f"quality {self.quality_index}: {name} must be positive")
        if not self.a > 0:
            raise InvalidArgument(f"quality {self.quality_index}: density scalar must be positive")


@dataclass(frozen=True)
class CodecWeights:
    """Typed views over the full weight set, shared by every coding stage."""

    enc_in_w: np.ndarray
    enc_in_b: np.ndarray
    enc_attn: AttentionWeights
    enc_blocks: tuple
    enc_down_w: np.ndarray
    enc_down_b: np.ndarray
    dec_up_w: np.ndarray
    dec_up_b: np.ndarray
    dec_attn: AttentionWeights
    dec_blocks: tuple
    head_conv_w: np.ndarray
    head_conv_b: np.ndarray
    head_out_w: np.ndarray
    head_out_b: np.ndarray
    ent_bridge_w: np.ndarray
    ent_bridge_b: np.ndarray
    ent_attn: AttentionWeights
    hyper: HyperWeights
    hpcm: HpcmWeights
    temporal: TemporalWeights
    basis: LatticeBasis

    @property
    def trunk_channels(self) -> int:
        return self.enc_in_w.shape[0]

    @property
    def latent_channels(self) -> int:
        return self.enc_down_w.shape[0]


def apply_rate_vector(t: np.ndarray, q_vec: np.ndarray) -> np.ndarray:
    """Per-channel multiply by one rate-control vector."""
    t = as_tensor(t)
    q_vec = np.asarray(q_vec, dtype=_F32)
    if q_vec.shape != (t.shape[1],):
        raise InvalidArgument(f"rate vector must have {t.shape[1]} entries, got {q_vec.shape}")
    return t * q_vec[None, :, None, None]


def analyze(frame: np.ndarray, temporal: np.ndarray, q: QualityConfig, w: CodecWeights):
    """Frame -> latent. Returns (y, trunk feature before downsampling)."""
    frame = as_tensor(frame)
    _, _, h, wd = frame.shape
    if h % 16 or wd % 16:
        raise InvalidArgument(f"frame dims must be multiples of 16, got {h}x{wd}")
    x = pixel_unshuffle(frame, 8)
    x = conv2d(x, w.enc_in_w, w.enc_in_b, stride=1, padding=0)
    x = cross_attn(x, temporal, w.enc_attn)
    x = apply_rate_vector(x, q.q_e)
    for blk in w.enc_blocks:
        x = dc_block(x, blk)
    y = conv2d(x, w.enc_down_w, w.enc_down_b, stride=2, padding=1)
    return y, x


def synthesize(y_hat: np.ndarray, temporal: np.ndarray, q: QualityConfig, w: CodecWeights):
    """Latent -> frame. Returns (x_hat, f_d pre-head, f_r head-internal)."""
    y_hat = as_tensor(y_hat)
    u = conv2d(y_hat, w.dec_up_w, w.dec_up_b, stride=1, padding=1)
    u = pixel_shuffle(u, 2)
    u = cross_attn(u, temporal, w.dec_attn)
    u = apply_rate_vector(u, q.q_d)
    for blk in w.dec_blocks:
        u = dc_block(u, blk)
    f_d = u
    h = apply_rate_vector(u, q.q_r)
    h = wsilu(conv2d(h, w.head_conv_w, w.head_conv_b, stride=1, padding=0))
    f_r = h
    x_hat = pixel_shuffle(conv2d(h, w.head_out_w, w.head_out_b, stride=1, padding=0), 8)
    return x_hat, f_d, f_r


def entropy_condition(hyper: HyperLatent, temporal: np.ndarray, w: CodecWeights) -> HyperLatent:
    """Condition the hyper context features on the temporal feature.

    The temporal feature (trunk grid) is brought to the latent grid by a
    stride-2 pixel-unshuffle + linear projection, zero-padded to the
    scheduling grid, and injected through the entropy cross-attention.
    Both sides compute this from decoded data only.
    """
    t = linear_mix(pixel_unshuffle(temporal, 2), w.ent_bridge_w, w.ent_bridge_b)
    hp, wp = hyper.features.shape[2], hyper.features.shape[3]
    if t.shape[2] != hp or t.shape[3] != wp:
        padded = np.zeros((t.shape[0], t.shape[1], hp, wp), dtype=_F32)
        padded[:, :, :t.shape[2], :t.shape[3]] = t
        t = padded
    return hyper.with_features(cross_attn(hyper.features, t, w.ent_attn))
