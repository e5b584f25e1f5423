"""Minimal raw clip container for CLI I/O.

One ASCII header line, then packed planar RGB24 frames:

    ULVCRAW W<width> H<height> N<frames>\\n
    <frame 0: R plane, G plane, B plane> <frame 1: ...> ...

Each plane is height*width bytes, row-major. No external decoders needed.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import FormatError

_HEADER_RE = re.compile(rb"^ULVCRAW W(\d+) H(\d+) N(\d+)\n")


def write_raw_clip(path: str, frames: np.ndarray) -> None:
    """frames: (n, h, w, 3) uint8."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise FormatError(f"expected (n, h, w, 3) uint8 frames, got "
                          f"{frames.shape} {frames.dtype}")
    n, h, w, _ = frames.shape
    with open(path, "wb") as f:
        f.write(f"ULVCRAW W{w} H{h} N{n}\n".encode("ascii"))
        planar = frames.transpose(0, 3, 1, 2)     # (n, 3, h, w)
        f.write(np.ascontiguousarray(planar).tobytes())


def read_raw_clip(path: str) -> np.ndarray:
    """Returns (n, h, w, 3) uint8."""
    with open(path, "rb") as f:
        data = f.read()
    m = _HEADER_RE.match(data)
    if not m:
        raise FormatError("not a raw clip (bad header line)", offset=0)
    w, h, n = (int(g) for g in m.groups())
    body = data[m.end():]
    expect = n * 3 * h * w
    if len(body) != expect:
        raise FormatError(f"raw clip body is {len(body)} bytes, expected {expect}",
                          offset=m.end())
    planar = np.frombuffer(body, dtype=np.uint8).reshape(n, 3, h, w)
    return np.ascontiguousarray(planar.transpose(0, 2, 3, 1))
