"""Bit-exact container format.

One sequence header, then per frame: a fixed-size frame header followed
by the hyper payload and the main latent payload, lengths given
explicitly so frames can be skipped. All multi-byte integers are
little-endian, no padding between fields. The byte-by-byte layout is
documented in docs/formats.md; this file is its single implementation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import FormatError, InvalidArgument

MAGIC = b"ULVC"
VERSION = 1

GOP_AI, GOP_LD, GOP_RA = 0, 1, 2
FRAME_I, FRAME_P, FRAME_B = 0, 1, 2

_SEQ_FMT = "<4sBHHHBhBQ"     # magic, version, width, height, frame_count,
                             # gop_mode, intra_period, gop_size, weight fingerprint
_FRAME_FMT = "<BBHBBII"      # mode, quality, alpha_code, pad_right, pad_bottom,
                             # hyper_len, main_len
SEQ_HEADER_SIZE = struct.calcsize(_SEQ_FMT)
FRAME_HEADER_SIZE = struct.calcsize(_FRAME_FMT)


@dataclass(frozen=True)
class SequenceHeader:
    width: int
    height: int
    frame_count: int
    gop_mode: int
    intra_period: int
    gop_size: int                  # 0 unless gop_mode == GOP_RA
    weight_seed_or_hash: int
    version: int = VERSION

    def __post_init__(self):
        if not (16 <= self.width <= 0xFFFF and 16 <= self.height <= 0xFFFF):
            raise InvalidArgument(f"frame dims must be in [16, 65535], got "
                                  f"{self.width}x{self.height}")
        if self.gop_mode not in (GOP_AI, GOP_LD, GOP_RA):
            raise InvalidArgument(f"gop_mode must be 0, 1 or 2, got {self.gop_mode}")
        if not 0 <= self.frame_count <= 0xFFFF:
            raise InvalidArgument(f"frame_count must be a u16, got {self.frame_count}")
        if not -(1 << 15) <= self.intra_period < (1 << 15):
            raise InvalidArgument(f"intra_period must fit an i16, got {self.intra_period}")
        if not 0 <= self.gop_size <= 0xFF:
            raise InvalidArgument(f"gop_size must be a u8, got {self.gop_size}")


@dataclass(frozen=True)
class FrameHeader:
    frame_mode: int
    quality_index: int
    alpha_code: int
    pad_right: int
    pad_bottom: int
    hyper_len: int
    main_len: int

    def __post_init__(self):
        if self.frame_mode not in (FRAME_I, FRAME_P, FRAME_B):
            raise InvalidArgument(f"frame_mode must be 0, 1 or 2, got {self.frame_mode}")
        if self.frame_mode == FRAME_I and self.alpha_code != 0:
            raise InvalidArgument("I-frames carry alpha_code = 0")
        if not 0 <= self.alpha_code <= 0xFFFF:
            raise InvalidArgument(f"alpha_code must be a u16, got {self.alpha_code}")
        for name in ("quality_index", "pad_right", "pad_bottom"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFF:
                raise InvalidArgument(f"{name} must be a u8, got {v}")
        for name in ("hyper_len", "main_len"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFFFFFF:
                raise InvalidArgument(f"{name} must be a u32, got {v}")


def write_sequence(header: SequenceHeader, frames) -> bytes:
    """Serialize (FrameHeader, hyper bytes, main bytes) triples after the header."""
    out = bytearray()
    out += struct.pack(_SEQ_FMT, MAGIC, header.version, header.width, header.height,
                       header.frame_count, header.gop_mode, header.intra_period,
                       header.gop_size, header.weight_seed_or_hash)
    for i, (fh, hyper, main) in enumerate(frames):
        if fh.hyper_len != len(hyper) or fh.main_len != len(main):
            raise InvalidArgument(
                f"frame {i}: header lengths ({fh.hyper_len}, {fh.main_len}) do not match "
                f"payloads ({len(hyper)}, {len(main)})")
        out += struct.pack(_FRAME_FMT, fh.frame_mode, fh.quality_index, fh.alpha_code,
                           fh.pad_right, fh.pad_bottom, fh.hyper_len, fh.main_len)
        out += hyper
        out += main
    return bytes(out)


def read_sequence(data: bytes):
    """Parse a stream; returns (SequenceHeader, [(FrameHeader, hyper, main), ...])."""
    if len(data) < SEQ_HEADER_SIZE:
        raise FormatError("stream shorter than the sequence header", offset=len(data))
    magic, version, width, height, count, gop_mode, intra_period, gop_size, fp = \
        struct.unpack_from(_SEQ_FMT, data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}", offset=4)
    try:
        header = SequenceHeader(width=width, height=height, frame_count=count,
                                gop_mode=gop_mode, intra_period=intra_period,
                                gop_size=gop_size, weight_seed_or_hash=fp)
    except InvalidArgument as exc:
        raise FormatError(f"invalid sequence header: {exc}", offset=0) from exc
    pos = SEQ_HEADER_SIZE
    frames = []
    for i in range(count):
        if pos + FRAME_HEADER_SIZE > len(data):
            raise FormatError(f"frame {i} header truncated", offset=pos)
        mode, quality, alpha, pad_r, pad_b, hyper_len, main_len = \
            struct.unpack_from(_FRAME_FMT, data, pos)
        pos += FRAME_HEADER_SIZE
        if pos + hyper_len + main_len > len(data):
            raise FormatError(f"frame {i} payload truncated", offset=pos)
        hyper = data[pos:pos + hyper_len]
        pos += hyper_len
        main = data[pos:pos + main_len]
        pos += main_len
        try:
            fh = FrameHeader(frame_mode=mode, quality_index=quality, alpha_code=alpha,
                             pad_right=pad_r, pad_bottom=pad_b,
                             hyper_len=hyper_len, main_len=main_len)
        except InvalidArgument as exc:
            raise FormatError(f"invalid frame {i} header: {exc}",
                              offset=pos - hyper_len - main_len - FRAME_HEADER_SIZE) from exc
        frames.append((fh, hyper, main))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last frame", offset=pos)
    return header, frames
