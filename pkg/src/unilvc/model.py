"""Model weights: channel plan, seeded initialization, container I/O.

Every tensor the codec consumes is listed in a manifest derived from one
channel plan. Seeded models derive each tensor from a Philox
counter-based generator keyed by (seed, name hash): reproducible, order
independent, and identical no matter which tensors are materialized
first. Weight files are a little-endian binary container of named
float32 tensors; loading validates shapes and every invariant the
runtime relies on (orthogonality, positivity, condition cap) and names
the offending tensor on failure.

A model's fingerprint (the seed, or a 64-bit digest for hand-built
files) is carried in every bitstream header; decode refuses mismatches.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .blocks import AttentionWeights, DcBlockWeights, clamp_gamma
from .entropy_model import snap_beta, snap_mu_code, snap_sigma_index
from .errors import FormatError, LoadError
from .hpcm import HpcmWeights, HyperWeights
from .lattice_quant import LatticeBasis
from .temporal import TemporalWeights
from .transforms import CodecWeights, QualityConfig

_F32 = np.float32

# ---------------------------------------------------------------- channel plan

TRUNK = 64            # trunk feature channels
LATENT = 32           # latent channels (grouped in 4s for the LVQ)
N_BLOCKS = 4          # DC blocks per trunk
MLP_RATIO = 2
HEADS = 2
NEIGH_K = 5
SHUFFLE_GROUPS = 4
HYPER_MID = 32
HYPER_Z = 16
HYPER_CTX = 32
HYPER_SYN = 48
HPCM_HIDDEN = 32
ENT_CH = HYPER_CTX    # entropy attention operates on the hyper context features
N_QUALITY = 64
LVQ_DIM = 4

LAMBDA_LO, LAMBDA_HI = 0.0009, 0.0483      # quality-0 .. quality-63 multipliers
DENSITY_LO, DENSITY_HI = 0.5, 4.0          # lattice density scalars, increasing

WEIGHT_MAGIC = b"ULVW"
WEIGHT_VERSION = 1

_MASK64 = (1 << 64) - 1


def _dc_entries(prefix: str, c: int, ratio: int = MLP_RATIO):
    return [
        (f"{prefix}.dw", (c, 3, 3), "dw"),
        (f"{prefix}.mlp_w1", (c * ratio, c), "linear"),
        (f"{prefix}.mlp_b1", (c * ratio,), "bias"),
        (f"{prefix}.mlp_w2", (c, c * ratio), "linear"),
        (f"{prefix}.mlp_b2", (c,), "bias"),
    ]


def _attn_entries(prefix: str, c: int):
    d = c // HEADS
    kk2 = 2 * NEIGH_K * NEIGH_K
    return [
        (f"{prefix}.wq", (c, c), "linear"),
        (f"{prefix}.wk", (c, c), "linear"),
        (f"{prefix}.wv", (c, c), "linear"),
        (f"{prefix}.offset_dw", (HEADS, 2 * d, 3, 3), "dw"),
        (f"{prefix}.offset_w", (HEADS, kk2, 2 * d), "offset"),
        (f"{prefix}.offset_b", (HEADS, kk2), "bias"),
        (f"{prefix}.wqg", (c, c), "linear"),
        (f"{prefix}.wkg", (c, c), "linear"),
        (f"{prefix}.wvg", (c, c), "linear"),
        (f"{prefix}.wg", (c, c), "linear"),
        (f"{prefix}.gamma", (2 * c,), "gamma"),
    ]


def build_manifest():
    """(name, shape, init kind) for every tensor of the model."""
    m = []
    # encoder trunk
    m += [("enc.in_proj.w", (TRUNK, 3 * 64, 1, 1), "conv"), ("enc.in_proj.b", (TRUNK,), "bias")]
    m += _attn_entries("enc.attn", TRUNK)
    for i in range(N_BLOCKS):
        m += _dc_entries(f"enc.dc{i}", TRUNK)
    m += [("enc.down.w", (LATENT, TRUNK, 3, 3), "conv"), ("enc.down.b", (LATENT,), "bias")]
    # decoder trunk
    m += [("dec.up.w", (TRUNK * 4, LATENT, 3, 3), "conv"), ("dec.up.b", (TRUNK * 4,), "bias")]
    m += _attn_entries("dec.attn", TRUNK)
    for i in range(N_BLOCKS):
        m += _dc_entries(f"dec.dc{i}", TRUNK)
    m += [
        ("dec.head.conv.w", (TRUNK, TRUNK, 1, 1), "conv"), ("dec.head.conv.b", (TRUNK,), "bias"),
        ("dec.head.out.w", (3 * 64, TRUNK, 1, 1), "conv"), ("dec.head.out.b", (3 * 64,), "bias"),
    ]
    # entropy-side attention bridge
    m += [("ent.bridge.w", (ENT_CH, TRUNK * 4), "linear"), ("ent.bridge.b", (ENT_CH,), "bias")]
    m += _attn_entries("ent.attn", ENT_CH)
    # hyperprior
    m += [
        ("hyp.ha1.w", (HYPER_MID, LATENT, 3, 3), "conv"), ("hyp.ha1.b", (HYPER_MID,), "bias"),
        ("hyp.ha2.w", (HYPER_Z, HYPER_MID, 3, 3), "conv"), ("hyp.ha2.b", (HYPER_Z,), "bias"),
        ("hyp.hs1.w", (HYPER_SYN, HYPER_Z, 3, 3), "conv"), ("hyp.hs1.b", (HYPER_SYN,), "bias"),
        ("hyp.hs2.w", (4 * (HYPER_CTX + 2 * LATENT), HYPER_SYN, 1, 1), "conv"),
        ("hyp.hs2.b", (4 * (HYPER_CTX + 2 * LATENT),), "bias"),
        ("hyp.prior.mu", (HYPER_Z,), "prior_mu"),
        ("hyp.prior.sigma", (HYPER_Z,), "prior_sigma"),
        ("hyp.prior.beta", (HYPER_Z,), "beta"),
    ]
    # context model
    ctx_in = 2 * LATENT + 1 + HYPER_CTX
    m += [
        ("hpcm.conv1.w", (HPCM_HIDDEN, ctx_in, 3, 3), "conv"), ("hpcm.conv1.b", (HPCM_HIDDEN,), "bias"),
        ("hpcm.step_bias", (11, HPCM_HIDDEN), "small"),
        ("hpcm.conv2.w", (HPCM_HIDDEN, HPCM_HIDDEN, 3, 3), "conv"),
        ("hpcm.conv2.b", (HPCM_HIDDEN,), "bias"),
        ("hpcm.out.w", (2 * LATENT, HPCM_HIDDEN, 1, 1), "conv"), ("hpcm.out.b", (2 * LATENT,), "bias"),
    ]
    # lattice
    m += [
        ("lvq.u", (LVQ_DIM, LVQ_DIM), "orth"),
        ("lvq.v", (LVQ_DIM, LVQ_DIM), "orth"),
        ("lvq.sigma", (LVQ_DIM,), "lattice_sigma"),
    ]
    # temporal path
    m += [("tmp.extract.proj.w", (TRUNK, 2 * TRUNK), "linear"),
          ("tmp.extract.proj.b", (TRUNK,), "bias")]
    m += _dc_entries("tmp.extract.dc", TRUNK)
    for g in ("gate_f", "gate_i"):
        m += _dc_entries(f"tmp.{g}.dc", 2 * TRUNK, ratio=1)
        m += [(f"tmp.{g}.proj.w", (TRUNK, 2 * TRUNK), "linear"),
              (f"tmp.{g}.proj.b", (TRUNK,), "bias")]
    m += _dc_entries("tmp.derive.dc0", TRUNK)
    m += _dc_entries("tmp.derive.dc1", TRUNK)
    m += [("tmp.merge.proj.w", (TRUNK, 2 * TRUNK), "linear"),
          ("tmp.merge.proj.b", (TRUNK,), "bias")]
    m += _dc_entries("tmp.merge.dc", TRUNK)
    # reliability classifier
    m += [
        ("cls.x_proj.w", (TRUNK, 3 * 256), "linear"), ("cls.x_proj.b", (TRUNK,), "bias"),
        ("cls.f_proj.w", (TRUNK, 4 * TRUNK), "linear"), ("cls.f_proj.b", (TRUNK,), "bias"),
    ]
    m += _dc_entries("cls.dc0", 2 * TRUNK, ratio=1)
    m += _dc_entries("cls.dc1", 2 * TRUNK, ratio=1)
    m += [("cls.out.w", (1, 2 * TRUNK), "linear"), ("cls.out.b", (1,), "bias")]
    # quality banks
    for name in ("q_e", "q_d", "q_f", "q_r"):
        m.append((f"qb.{name}", (N_QUALITY, TRUNK), "qvec"))
    m += [
        ("qb.f_p", (N_QUALITY, TRUNK), "prior_vec"),
        ("qb.a", (N_QUALITY,), "bank_a"),
        ("qb.lambda", (N_QUALITY,), "bank_lambda"),
        ("model.beta", (3,), "beta"),
    ]
    return m


MANIFEST = build_manifest()
_MANIFEST_BY_NAME = {name: (shape, kind) for name, shape, kind in MANIFEST}


# ---------------------------------------------------------------- seeded init

def _fnv64(name: str) -> int:
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array(
        [seed & _MASK64, _fnv64(name)], dtype=np.uint64)))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return (q * np.sign(np.diag(r))).astype(_F32)


def _bank_a() -> np.ndarray:
    q = np.arange(N_QUALITY, dtype=np.float64) / (N_QUALITY - 1)
    return (DENSITY_LO * (DENSITY_HI / DENSITY_LO) ** q).astype(_F32)


def _bank_lambda() -> np.ndarray:
    q = np.arange(N_QUALITY, dtype=np.float64) / (N_QUALITY - 1)
    return (LAMBDA_LO * (LAMBDA_HI / LAMBDA_LO) ** q).astype(_F32)


def _init_tensor(seed: int, name: str, shape, kind: str) -> np.ndarray:
    rng = _tensor_rng(seed, name)
    # branch scales damped 2x below He so stacked residual paths keep
    # activations O(1) at desk scale (untrained weights)
    if kind == "conv":
        fan = int(np.prod(shape[1:]))
        return (rng.standard_normal(shape) * (0.5 / np.sqrt(fan))).astype(_F32)
    if kind == "linear":
        return (rng.standard_normal(shape) * (0.5 / np.sqrt(shape[-1]))).astype(_F32)
    if kind == "dw":
        return (rng.standard_normal(shape) * 0.15).astype(_F32)
    if kind == "offset":
        # small offsets keep deformed sampling near the regular grid
        return (rng.standard_normal(shape) * (0.1 / np.sqrt(shape[-1]))).astype(_F32)
    if kind == "bias":
        return np.zeros(shape, dtype=_F32)
    if kind == "small":
        return (rng.standard_normal(shape) * 0.02).astype(_F32)
    if kind == "gamma":
        return rng.uniform(0.5, 2.0, shape).astype(_F32)
    if kind == "orth":
        return _orthogonal(rng, shape[0])
    if kind == "lattice_sigma":
        return np.exp(rng.uniform(-0.5, 0.5, shape)).astype(_F32)
    if kind == "qvec":
        return rng.uniform(0.9, 1.1, shape).astype(_F32)
    if kind == "prior_vec":
        return (rng.standard_normal(shape) * 0.25).astype(_F32)
    if kind == "prior_mu":
        return (rng.standard_normal(shape) * 0.3).astype(_F32)
    if kind == "prior_sigma":
        return np.exp(rng.uniform(np.log(0.3), np.log(3.0), shape)).astype(_F32)
    if kind == "beta":
        return rng.uniform(1.0, 2.5, shape).astype(_F32)
    if kind == "bank_a":
        return _bank_a()
    if kind == "bank_lambda":
        return _bank_lambda()
    raise LoadError(f"unknown init kind {kind!r} for tensor {name!r}")


def seeded_arrays(seed: int) -> dict:
    return {name: _init_tensor(seed, name, shape, kind) for name, shape, kind in MANIFEST}


# ---------------------------------------------------------------- validation

def validate_arrays(arrays: dict) -> None:
    """Shape and invariant checks; raises LoadError naming the tensor."""
    for name, shape, _kind in MANIFEST:
        if name not in arrays:
            raise LoadError(f"missing tensor {name!r}")
        a = arrays[name]
        if tuple(a.shape) != tuple(shape):
            raise LoadError(f"tensor {name!r}: expected shape {shape}, got {tuple(a.shape)}")
        if a.dtype != _F32:
            raise LoadError(f"tensor {name!r}: expected float32, got {a.dtype}")
        if not np.all(np.isfinite(a)):
            raise LoadError(f"tensor {name!r}: contains non-finite values")
    extra = set(arrays) - set(_MANIFEST_BY_NAME)
    if extra:
        raise LoadError(f"unknown tensors in weight set: {sorted(extra)}")
    for name in ("qb.q_e", "qb.q_d", "qb.q_f", "qb.q_r", "qb.a", "hyp.prior.sigma"):
        if not np.all(arrays[name] > 0):
            raise LoadError(f"tensor {name!r}: must be strictly positive")
    try:
        LatticeBasis(arrays["lvq.u"], arrays["lvq.v"], arrays["lvq.sigma"])
    except LoadError as exc:
        raise LoadError(f"tensor 'lvq.*': {exc}") from exc


# ---------------------------------------------------------------- views

def _dc_view(arrays: dict, prefix: str) -> DcBlockWeights:
    return DcBlockWeights(
        dw_kernel=arrays[f"{prefix}.dw"],
        mlp_w1=arrays[f"{prefix}.mlp_w1"], mlp_b1=arrays[f"{prefix}.mlp_b1"],
        mlp_w2=arrays[f"{prefix}.mlp_w2"], mlp_b2=arrays[f"{prefix}.mlp_b2"],
        shuffle_groups=SHUFFLE_GROUPS,
    )


def _attn_view(arrays: dict, prefix: str) -> AttentionWeights:
    return AttentionWeights(
        wq=arrays[f"{prefix}.wq"], wk=arrays[f"{prefix}.wk"], wv=arrays[f"{prefix}.wv"],
        offset_dw=arrays[f"{prefix}.offset_dw"],
        offset_w=arrays[f"{prefix}.offset_w"], offset_b=arrays[f"{prefix}.offset_b"],
        wqg=arrays[f"{prefix}.wqg"], wkg=arrays[f"{prefix}.wkg"],
        wvg=arrays[f"{prefix}.wvg"], wg=arrays[f"{prefix}.wg"],
        gamma=clamp_gamma(arrays[f"{prefix}.gamma"]),
        heads=HEADS, k=NEIGH_K,
    )


def _clamp_beta(b: np.ndarray) -> np.ndarray:
    return snap_beta(b)


def build_weights(arrays: dict) -> CodecWeights:
    hyper = HyperWeights(
        ha1_w=arrays["hyp.ha1.w"], ha1_b=arrays["hyp.ha1.b"],
        ha2_w=arrays["hyp.ha2.w"], ha2_b=arrays["hyp.ha2.b"],
        hs1_w=arrays["hyp.hs1.w"], hs1_b=arrays["hyp.hs1.b"],
        hs2_w=arrays["hyp.hs2.w"], hs2_b=arrays["hyp.hs2.b"],
        prior_mu_code=snap_mu_code(arrays["hyp.prior.mu"]),
        prior_sigma_idx=snap_sigma_index(arrays["hyp.prior.sigma"]),
        prior_beta=_clamp_beta(arrays["hyp.prior.beta"]),
    )
    hpcm = HpcmWeights(
        conv1_w=arrays["hpcm.conv1.w"], conv1_b=arrays["hpcm.conv1.b"],
        step_bias=arrays["hpcm.step_bias"],
        conv2_w=arrays["hpcm.conv2.w"], conv2_b=arrays["hpcm.conv2.b"],
        out_w=arrays["hpcm.out.w"], out_b=arrays["hpcm.out.b"],
    )
    temporal = TemporalWeights(
        extract_proj_w=arrays["tmp.extract.proj.w"], extract_proj_b=arrays["tmp.extract.proj.b"],
        extract_dc=_dc_view(arrays, "tmp.extract.dc"),
        gate_f_dc=_dc_view(arrays, "tmp.gate_f.dc"),
        gate_f_proj_w=arrays["tmp.gate_f.proj.w"], gate_f_proj_b=arrays["tmp.gate_f.proj.b"],
        gate_i_dc=_dc_view(arrays, "tmp.gate_i.dc"),
        gate_i_proj_w=arrays["tmp.gate_i.proj.w"], gate_i_proj_b=arrays["tmp.gate_i.proj.b"],
        derive_dc0=_dc_view(arrays, "tmp.derive.dc0"),
        derive_dc1=_dc_view(arrays, "tmp.derive.dc1"),
        merge_proj_w=arrays["tmp.merge.proj.w"], merge_proj_b=arrays["tmp.merge.proj.b"],
        merge_dc=_dc_view(arrays, "tmp.merge.dc"),
        cls_x_proj_w=arrays["cls.x_proj.w"], cls_x_proj_b=arrays["cls.x_proj.b"],
        cls_f_proj_w=arrays["cls.f_proj.w"], cls_f_proj_b=arrays["cls.f_proj.b"],
        cls_dc0=_dc_view(arrays, "cls.dc0"), cls_dc1=_dc_view(arrays, "cls.dc1"),
        cls_out_w=arrays["cls.out.w"], cls_out_b=arrays["cls.out.b"],
    )
    return CodecWeights(
        enc_in_w=arrays["enc.in_proj.w"], enc_in_b=arrays["enc.in_proj.b"],
        enc_attn=_attn_view(arrays, "enc.attn"),
        enc_blocks=tuple(_dc_view(arrays, f"enc.dc{i}") for i in range(N_BLOCKS)),
        enc_down_w=arrays["enc.down.w"], enc_down_b=arrays["enc.down.b"],
        dec_up_w=arrays["dec.up.w"], dec_up_b=arrays["dec.up.b"],
        dec_attn=_attn_view(arrays, "dec.attn"),
        dec_blocks=tuple(_dc_view(arrays, f"dec.dc{i}") for i in range(N_BLOCKS)),
        head_conv_w=arrays["dec.head.conv.w"], head_conv_b=arrays["dec.head.conv.b"],
        head_out_w=arrays["dec.head.out.w"], head_out_b=arrays["dec.head.out.b"],
        ent_bridge_w=arrays["ent.bridge.w"], ent_bridge_b=arrays["ent.bridge.b"],
        ent_attn=_attn_view(arrays, "ent.attn"),
        hyper=hyper, hpcm=hpcm, temporal=temporal,
        basis=LatticeBasis(arrays["lvq.u"], arrays["lvq.v"], arrays["lvq.sigma"]),
    )


def build_qualities(arrays: dict) -> tuple:
    beta = _clamp_beta(arrays["model.beta"])
    beta_by_mode = {"AI": float(beta[0]), "LD": float(beta[1]), "RA": float(beta[2])}
    out = []
    for qi in range(N_QUALITY):
        out.append(QualityConfig(
            quality_index=qi,
            lam=float(arrays["qb.lambda"][qi]),
            q_e=arrays["qb.q_e"][qi], q_d=arrays["qb.q_d"][qi],
            q_f=arrays["qb.q_f"][qi], q_r=arrays["qb.q_r"][qi],
            a=float(arrays["qb.a"][qi]),
            beta_by_mode=beta_by_mode,
            f_p=arrays["qb.f_p"][qi],
        ))
    return tuple(out)


@dataclass(frozen=True)
class Model:
    """Immutable bundle of raw arrays, typed views, and quality configs."""

    arrays: dict
    weights: CodecWeights
    qualities: tuple
    fingerprint: int
    seed: int | None = None

    def quality(self, index: int) -> QualityConfig:
        if not 0 <= index < len(self.qualities):
            raise LoadError(f"quality index {index} outside [0, {len(self.qualities) - 1}]")
        return self.qualities[index]


def _digest(arrays: dict) -> int:
    h = hashlib.blake2b(digest_size=8)
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(arrays[name].tobytes())
    return int.from_bytes(h.digest(), "little")


def from_seed(seed: int) -> Model:
    arrays = seeded_arrays(seed)
    validate_arrays(arrays)
    return Model(arrays=arrays, weights=build_weights(arrays),
                 qualities=build_qualities(arrays), fingerprint=seed & _MASK64, seed=seed)


def from_arrays(arrays: dict, fingerprint: int | None = None, seed: int | None = None) -> Model:
    validate_arrays(arrays)
    fp = fingerprint if fingerprint is not None else _digest(arrays)
    return Model(arrays=arrays, weights=build_weights(arrays),
                 qualities=build_qualities(arrays), fingerprint=fp, seed=seed)


# ---------------------------------------------------------------- container

def save_model(model: Model, path: str) -> None:
    """Write the versioned tensor container (see docs/formats.md)."""
    with open(path, "wb") as f:
        flags = 1 if model.seed is not None else 0
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<BBQQI", WEIGHT_VERSION, flags,
                            model.seed if model.seed is not None else 0,
                            model.fingerprint, len(model.arrays)))
        for name in sorted(model.arrays):
            a = model.arrays[name]
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.astype("<f4").tobytes())


def load_model(path: str) -> Model:
    """Read a tensor container; full validation, fingerprint restored."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != WEIGHT_MAGIC:
        raise FormatError("not a weight container (bad magic)", offset=0)
    try:
        version, flags, seed, fingerprint, count = struct.unpack_from("<BBQQI", data, 4)
    except struct.error as exc:
        raise FormatError(f"weight header truncated: {exc}", offset=4) from exc
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight container version {version}")
    pos = 4 + struct.calcsize("<BBQQI")
    arrays = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > len(data):
                raise FormatError(f"tensor {name!r} data truncated", offset=pos)
            arrays[name] = np.frombuffer(data[pos:pos + size], dtype="<f4").reshape(shape).copy()
            pos += size
        except struct.error as exc:
            raise FormatError(f"weight container truncated: {exc}", offset=pos) from exc
    return from_arrays(arrays, fingerprint=fingerprint, seed=seed if flags & 1 else None)
