"""GOP orchestration for AI / LD / RA coding, model initialization, stats.

Frames are stored in the stream in coding order; the coding structure
(which frames are intra, every B-frame's two references, the hierarchy)
is derived deterministically from the sequence header on both sides. The
encoder reconstructs every frame through exactly the decoder's code
path, so encoder-side and decoder-side reconstructions are bitwise
identical; that is the codec's core contract and what keeps the
autoregressive entropy coding in sync across frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bitstream, hpcm, model as model_mod, transforms
from .bitstream import (
    FRAME_B,
    FRAME_I,
    FRAME_P,
    FrameHeader,
    GOP_AI,
    GOP_LD,
    GOP_RA,
    SequenceHeader,
)
from .diagnostics import psnr_from_mse
from .errors import DecodeError, InvalidArgument
from .model import Model
from .temporal import (
    BufferState,
    TemporalFeature,
    broadcast_prior,
    classify_reliability,
    dequantize_alpha,
    derive_temporal_feature,
    extract_hybrid,
    gate_feature,
    intra_prior_feature,
    merge_bidirectional,
    quantize_alpha,
)
from .tensor_core import round_half_away

_F32 = np.float32

_MODE_NAME = {GOP_AI: "AI", GOP_LD: "LD", GOP_RA: "RA"}
_MODE_CODE = {v: k for k, v in _MODE_NAME.items()}


@dataclass(frozen=True)
class GopConfig:
    """Sequence-level coding configuration."""

    mode: str                   # 'AI' | 'LD' | 'RA'
    intra_period: int = -1      # -1 = single leading intra
    gop_size: int = 8           # RA hierarchy span; ignored for AI/LD

    def __post_init__(self):
        if self.mode not in ("AI", "LD", "RA"):
            raise InvalidArgument(f"mode must be AI, LD or RA, got {self.mode!r}")
        if self.intra_period == 0 or self.intra_period < -1:
            raise InvalidArgument(f"intra_period must be -1 or positive, got {self.intra_period}")
        if self.mode == "RA":
            if self.intra_period <= 0:
                raise InvalidArgument("RA needs a positive intra_period")
            g = self.gop_size
            if g < 2 or g & (g - 1):
                raise InvalidArgument(f"RA gop_size must be a power of two >= 2, got {g}")
            if self.intra_period % g:
                raise InvalidArgument(
                    f"intra_period {self.intra_period} not divisible by gop_size {g}")


@dataclass(frozen=True)
class RaEntry:
    frame_index: int
    backward_ref_index: int
    forward_ref_index: int
    hierarchy_level: int


@dataclass(frozen=True)
class RaSchedule:
    """Midpoint-recursion coding order of one GOP's interior B-frames."""

    gop_size: int
    entries: tuple


def ra_schedule(gop_size: int) -> RaSchedule:
    """B-frame order for the interval [0, gop_size], endpoints already decoded."""
    if gop_size < 2 or gop_size & (gop_size - 1):
        raise InvalidArgument(f"gop_size must be a power of two >= 2, got {gop_size}")
    entries = []

    def recurse(a: int, b: int, level: int):
        if b - a < 2:
            return
        m = (a + b) // 2
        entries.append(RaEntry(m, a, b, level))
        recurse(a, m, level + 1)
        recurse(m, b, level + 1)

    recurse(0, gop_size, 1)
    return RaSchedule(gop_size=gop_size, entries=tuple(entries))


@dataclass(frozen=True)
class FramePlan:
    display_index: int
    frame_type: str             # 'I' | 'P' | 'B'
    bwd_ref: int | None = None
    fwd_ref: int | None = None
    level: int = 0

    @property
    def mode_code(self) -> int:
        return {"I": FRAME_I, "P": FRAME_P, "B": FRAME_B}[self.frame_type]


def coding_order(frame_count: int, gop: GopConfig):
    """Deterministic coding plan shared by encoder and decoder."""
    if frame_count < 1:
        raise InvalidArgument("need at least one frame")
    if gop.mode == "AI":
        return [FramePlan(i, "I") for i in range(frame_count)]
    if gop.mode == "LD":
        p = gop.intra_period
        plans = []
        for i in range(frame_count):
            if i == 0 or (p > 0 and i % p == 0):
                plans.append(FramePlan(i, "I"))
            else:
                plans.append(FramePlan(i, "P", bwd_ref=i - 1))
        return plans
    # RA: I-frames on intra-period boundaries, hierarchical B in between.
    # A GOP endpoint that is not an I-frame (mid-period endpoints, truncated
    # last GOP) codes as a B whose forward reference wraps to the segment's
    # starting I-frame.
    p, g = gop.intra_period, gop.gop_size
    plans = [FramePlan(0, "I")]

    def midpoints(a: int, b: int, level: int):
        if b - a < 2:
            return
        m = (a + b) // 2
        plans.append(FramePlan(m, "B", bwd_ref=a, fwd_ref=b, level=level))
        midpoints(a, m, level + 1)
        midpoints(m, b, level + 1)

    s = 0
    while s < frame_count - 1:
        e = min(s + g, frame_count - 1)
        if e % p == 0:
            plans.append(FramePlan(e, "I"))
        else:
            seg_start = (e // p) * p
            plans.append(FramePlan(e, "B", bwd_ref=s, fwd_ref=seg_start, level=1))
        midpoints(s, e, 2)
        s = e
    return plans


# ---------------------------------------------------------------- model init

def init_model(seed: int | None = None, path: str | None = None) -> Model:
    """Build a model from a seed or load (and validate) a weight file."""
    if (seed is None) == (path is None):
        raise InvalidArgument("provide exactly one of seed or path")
    if seed is not None:
        return model_mod.from_seed(int(seed))
    return model_mod.load_model(path)


# ---------------------------------------------------------------- frame plumbing

def _to_unit(frame_u8: np.ndarray) -> np.ndarray:
    x = frame_u8.astype(_F32) * _F32(1.0 / 255.0)
    return np.ascontiguousarray(x.transpose(2, 0, 1)[None])


def _to_u8(x: np.ndarray) -> np.ndarray:
    v = round_half_away(np.clip(x[0], 0.0, 1.0) * _F32(255.0))
    return np.ascontiguousarray(v.transpose(1, 2, 0)).astype(np.uint8)


def _pad16(x: np.ndarray):
    h, w = x.shape[2], x.shape[3]
    hp, wp = -(-h // 16) * 16, -(-w // 16) * 16
    if (hp, wp) == (h, w):
        return x, 0, 0
    return np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)), mode="edge"), wp - w, hp - h


@dataclass(frozen=True)
class FrameResult:
    display_index: int
    header: FrameHeader
    recon: np.ndarray            # (1, 3, H, W) float32, cropped to original dims
    alpha: float | None          # dequantized gate value, None on I-frames
    estimated_bits: float


@dataclass(frozen=True)
class SequenceResult:
    """Encoder or decoder output; frames and reconstructions in display order."""

    header: SequenceHeader
    stream: bytes
    results: tuple               # FrameResult, display order
    payload_bytes: int

    @property
    def reconstructions(self):
        return [r.recon for r in self.results]

    @property
    def frames_uint8(self):
        return np.stack([_to_u8(r.recon) for r in self.results])

    @property
    def alphas(self):
        return {r.display_index: r.alpha for r in self.results if r.alpha is not None}


def _effective_mode(frame_type: str, alpha_code: int) -> str:
    """Shape-parameter selection: intra-coded content uses the AI beta.

    A gate of exactly zero makes an inter frame intra-coded in every respect,
    so it must use the AI beta too (decodable from the header either way).
    """
    if frame_type == "I" or alpha_code == 0:
        return "AI"
    return "LD" if frame_type == "P" else "RA"


class _CodingSession:
    """Shared per-sequence state: buffers, stored features, trunk geometry."""

    def __init__(self, mdl: Model, gop: GopConfig, quality_index: int,
                 height: int, width: int):
        self.model = mdl
        self.weights = mdl.weights
        self.gop = gop
        self.quality = mdl.quality(quality_index)
        self.quality_index = quality_index
        hp, wp = -(-height // 16) * 16, -(-width // 16) * 16
        self.trunk_shape = (1, self.weights.trunk_channels, hp // 8, wp // 8)
        self.latent_hw = (hp // 16, wp // 16)
        if gop.mode == "LD":
            self.buffer = BufferState(mode="uni",
                                      f_i=broadcast_prior(self.quality.f_p, self.trunk_shape))
        elif gop.mode == "RA":
            self.buffer = BufferState(mode="bi")
            self.features: dict[int, np.ndarray] = {}
        else:
            self.buffer = None

    def temporal_feature(self, plan: FramePlan) -> TemporalFeature:
        """The pre-gate feature f* for an inter frame."""
        w = self.weights.temporal
        if plan.frame_type == "P":
            return derive_temporal_feature(self.buffer.f_i, self.quality.q_f, w, "uni")
        self.buffer.set_bi(self.features[plan.bwd_ref], self.features[plan.fwd_ref])
        f_bwd = derive_temporal_feature(self.buffer.f_i_bwd, self.quality.q_f, w, "bi")
        f_fwd = derive_temporal_feature(self.buffer.f_i_fwd, self.quality.q_f, w, "bi")
        return merge_bidirectional(f_bwd, f_fwd, w)

    def absorb(self, plan: FramePlan, f_d: np.ndarray, f_r: np.ndarray) -> None:
        """Update temporal memory from a decoded frame's features."""
        if self.gop.mode == "AI":
            return
        f_tilde = extract_hybrid(f_d, f_r, self.weights.temporal)
        if self.gop.mode == "LD":
            self.buffer.update_uni(f_tilde, self.weights.temporal)
        else:
            self.features[plan.display_index] = f_tilde


def _code_frame(session: _CodingSession, gated: TemporalFeature, eff_mode: str,
                x_pad: np.ndarray | None = None,
                payloads: tuple[bytes, bytes] | None = None):
    """Run one frame through the codec.

    Encoder path when x_pad is given (payloads produced); decoder path when
    payloads are given. Reconstruction runs through identical code either way.
    """
    w = session.weights
    q = session.quality
    if x_pad is not None:
        y, _ = transforms.analyze(x_pad, gated.f, q, w)
        hyper_payload, hyper, hyper_bits = hpcm.hyper_encode(y, w.hyper, w.latent_channels)
        hyper_c = transforms.entropy_condition(hyper, gated.f, w)
        main_payload, y_hat, info = hpcm.encode_latent(y, hyper_c, w.basis, q, w.hpcm, eff_mode)
    else:
        hyper_payload, main_payload = payloads
        hyper = hpcm.hyper_decode(hyper_payload, w.hyper, session.latent_hw, w.latent_channels)
        hyper_c = transforms.entropy_condition(hyper, gated.f, w)
        y_hat, info = hpcm.decode_latent(main_payload, hyper_c, w.basis, q, w.hpcm,
                                         session.latent_hw, eff_mode)
        hyper_bits = 0.0
    x_hat, f_d, f_r = transforms.synthesize(y_hat, gated.f, q, w)
    return hyper_payload, main_payload, x_hat, f_d, f_r, info.estimated_bits + hyper_bits


# ---------------------------------------------------------------- encode / decode

def encode_sequence(frames: np.ndarray, gop: GopConfig, quality_index: int,
                    mdl: Model, force_alpha: float | None = None) -> SequenceResult:
    """Encode an (n, h, w, 3) uint8 clip; returns the stream plus the
    encoder-side reconstructions (bitwise what the decoder will produce).

    force_alpha overrides the reliability classifier on every inter frame
    (0.0 disables the temporal path entirely: intra-fallback).
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise InvalidArgument(f"frames must be (n, h, w, 3) uint8, got "
                              f"{frames.shape} {frames.dtype}")
    n, height, width, _ = frames.shape
    if force_alpha is not None and not 0.0 <= force_alpha <= 1.0:
        raise InvalidArgument(f"force_alpha must be in [0, 1], got {force_alpha}")
    session = _CodingSession(mdl, gop, quality_index, height, width)
    plans = coding_order(n, gop)
    coded = []
    results: dict[int, FrameResult] = {}
    for plan in plans:
        x = _to_unit(frames[plan.display_index])
        x_pad, pad_r, pad_b = _pad16(x)
        if plan.frame_type == "I":
            gated = intra_prior_feature(session.quality.f_p, session.trunk_shape)
            alpha_code, alpha = 0, None
        else:
            f_star = session.temporal_feature(plan)
            raw_alpha = force_alpha if force_alpha is not None else \
                classify_reliability(x_pad, f_star, session.weights.temporal)
            alpha_code = quantize_alpha(raw_alpha)
            alpha = dequantize_alpha(alpha_code)
            gated = gate_feature(f_star, alpha, session.quality.f_p)
        eff_mode = _effective_mode(plan.frame_type, alpha_code)
        hyper_payload, main_payload, x_hat, f_d, f_r, est_bits = \
            _code_frame(session, gated, eff_mode, x_pad=x_pad)
        session.absorb(plan, f_d, f_r)
        fh = FrameHeader(frame_mode=plan.mode_code, quality_index=quality_index,
                         alpha_code=alpha_code, pad_right=pad_r, pad_bottom=pad_b,
                         hyper_len=len(hyper_payload), main_len=len(main_payload))
        coded.append((fh, hyper_payload, main_payload))
        recon = np.ascontiguousarray(x_hat[:, :, :height, :width])
        results[plan.display_index] = FrameResult(plan.display_index, fh, recon,
                                                  alpha, est_bits)
    header = SequenceHeader(
        width=width, height=height, frame_count=n, gop_mode=_MODE_CODE[gop.mode],
        intra_period=gop.intra_period, gop_size=gop.gop_size if gop.mode == "RA" else 0,
        weight_seed_or_hash=mdl.fingerprint)
    stream = bitstream.write_sequence(header, coded)
    ordered = tuple(results[i] for i in range(n))
    return SequenceResult(header=header, stream=stream, results=ordered,
                          payload_bytes=sum(len(h) + len(m) for _, h, m in coded))


def decode_sequence(data: bytes, mdl: Model) -> SequenceResult:
    """Decode a stream produced by :func:`encode_sequence`."""
    header, coded = bitstream.read_sequence(data)
    if header.weight_seed_or_hash != mdl.fingerprint:
        raise DecodeError(
            f"stream was coded with weight set {header.weight_seed_or_hash:#x}, "
            f"model fingerprint is {mdl.fingerprint:#x}")
    gop = GopConfig(mode=_MODE_NAME[header.gop_mode], intra_period=header.intra_period,
                    gop_size=header.gop_size if header.gop_mode == GOP_RA else 8)
    plans = coding_order(header.frame_count, gop)
    if not coded:
        return SequenceResult(header=header, stream=data, results=(), payload_bytes=0)
    quality_index = coded[0][0].quality_index
    session = _CodingSession(mdl, gop, quality_index, header.height, header.width)
    results: dict[int, FrameResult] = {}
    for plan, (fh, hyper_payload, main_payload) in zip(plans, coded):
        if fh.frame_mode != plan.mode_code:
            raise DecodeError(
                f"frame {plan.display_index}: header mode {fh.frame_mode} does not match "
                f"the derived coding structure ({plan.frame_type})")
        if plan.frame_type == "I":
            gated = intra_prior_feature(session.quality.f_p, session.trunk_shape)
            alpha = None
        else:
            f_star = session.temporal_feature(plan)
            alpha = dequantize_alpha(fh.alpha_code)
            gated = gate_feature(f_star, alpha, session.quality.f_p)
        eff_mode = _effective_mode(plan.frame_type, fh.alpha_code)
        try:
            _, _, x_hat, f_d, f_r, est_bits = _code_frame(
                session, gated, eff_mode, payloads=(hyper_payload, main_payload))
        except DecodeError as exc:
            raise DecodeError(f"frame {plan.display_index}: {exc}") from exc
        session.absorb(plan, f_d, f_r)
        recon = np.ascontiguousarray(x_hat[:, :, :header.height, :header.width])
        results[plan.display_index] = FrameResult(plan.display_index, fh, recon,
                                                  alpha, est_bits)
    ordered = tuple(results[i] for i in range(header.frame_count))
    return SequenceResult(header=header, stream=data, results=ordered,
                          payload_bytes=sum(len(h) + len(m) for _, h, m in coded))


# ---------------------------------------------------------------- stats

@dataclass(frozen=True)
class StatsReport:
    bpp: list
    mse: list
    psnr: list
    mean_bpp: float
    mean_mse: float
    mean_psnr: float
    total_bytes: int


def stats(original: np.ndarray, reconstructed: np.ndarray, stream: bytes) -> StatsReport:
    """Per-frame and mean bpp / mse / psnr; mse on the 8-bit scale."""
    original = np.asarray(original)
    reconstructed = np.asarray(reconstructed)
    if original.shape != reconstructed.shape:
        raise InvalidArgument(f"shape mismatch: {original.shape} vs {reconstructed.shape}")
    header, coded = bitstream.read_sequence(stream)
    if len(coded) != original.shape[0]:
        raise InvalidArgument(f"stream has {len(coded)} frames, clips have "
                              f"{original.shape[0]}")
    gop = GopConfig(mode=_MODE_NAME[header.gop_mode], intra_period=header.intra_period,
                    gop_size=header.gop_size if header.gop_mode == GOP_RA else 8)
    plans = coding_order(header.frame_count, gop)
    ppf = header.width * header.height
    bpp = [0.0] * header.frame_count
    for plan, (fh, _, _) in zip(plans, coded):
        bpp[plan.display_index] = 8.0 * (fh.hyper_len + fh.main_len) / ppf
    mse, psnr = [], []
    for i in range(header.frame_count):
        d = original[i].astype(np.float64) - reconstructed[i].astype(np.float64)
        m = float(np.mean(d * d))
        mse.append(m)
        psnr.append(psnr_from_mse(m))
    return StatsReport(
        bpp=bpp, mse=mse, psnr=psnr,
        mean_bpp=float(np.mean(bpp)), mean_mse=float(np.mean(mse)),
        mean_psnr=float(np.mean(psnr)),
        total_bytes=len(stream))
