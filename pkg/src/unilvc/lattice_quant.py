"""Learned lattice vector quantizer.

The quantizer codebook is the lattice {B u : u integer}, with B factored
as U diag(sigma) V^T. Quantization rounds in basis coordinates (Babai's
nearest-plane approximation); a brute-force enumerator serves as the
exact nearest-point oracle at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import InvalidArgument, LoadError
from .tensor_core import round_half_away

_F32 = np.float32

ORTHO_TOL = 1e-4
CONDITION_CAP = 100.0


@dataclass(frozen=True)
class LatticeBasis:
    """Invertible basis B = U diag(sigma) V^T with cached forward/inverse matrices."""

    u_mat: np.ndarray
    v_mat: np.ndarray
    sigma_diag: np.ndarray
    b_mat: np.ndarray = field(init=False)
    b_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        u = np.asarray(self.u_mat, dtype=_F32)
        v = np.asarray(self.v_mat, dtype=_F32)
        s = np.asarray(self.sigma_diag, dtype=_F32)
        n = s.shape[0]
        if u.shape != (n, n) or v.shape != (n, n):
            raise LoadError(f"lattice basis: U/V must be ({n}, {n}), got {u.shape}/{v.shape}")
        for name, m in (("u_mat", u), ("v_mat", v)):
            err = np.abs(m.T.astype(np.float64) @ m.astype(np.float64) - np.eye(n)).max()
            if err >= ORTHO_TOL:
                raise LoadError(f"lattice basis: {name} not orthogonal (max error {err:.2e})")
        if not np.all(s > 0):
            raise LoadError("lattice basis: sigma_diag must be strictly positive")
        cond = float(s.max() / s.min())
        if cond > CONDITION_CAP:
            raise LoadError(f"lattice basis: condition number {cond:.1f} exceeds cap {CONDITION_CAP}")
        b = (u.astype(np.float64) @ np.diag(s.astype(np.float64)) @ v.astype(np.float64).T)
        b_inv = (v.astype(np.float64) @ np.diag(1.0 / s.astype(np.float64)) @ u.astype(np.float64).T)
        err = np.abs(b @ b_inv - np.eye(n)).max()
        if err >= ORTHO_TOL:
            raise LoadError(f"lattice basis: B @ B^-1 deviates from identity by {err:.2e}")
        object.__setattr__(self, "u_mat", u)
        object.__setattr__(self, "v_mat", v)
        object.__setattr__(self, "sigma_diag", s)
        object.__setattr__(self, "b_mat", b.astype(_F32))
        object.__setattr__(self, "b_inv", b_inv.astype(_F32))

    @property
    def dim(self) -> int:
        return self.sigma_diag.shape[0]

    @classmethod
    def identity(cls, n: int) -> "LatticeBasis":
        eye = np.eye(n, dtype=_F32)
        return cls(eye, eye, np.ones(n, dtype=_F32))

    @classmethod
    def from_matrix(cls, b: np.ndarray) -> "LatticeBasis":
        """Factor an explicit basis matrix through its SVD (test convenience)."""
        u, s, vt = np.linalg.svd(np.asarray(b, dtype=np.float64))
        return cls(u.astype(_F32), vt.T.astype(_F32), s.astype(_F32))


def _check_vec(y, n: int, name: str) -> np.ndarray:
    a = np.asarray(y, dtype=_F32)
    if a.shape[-1] != n:
        raise InvalidArgument(f"{name}: last dimension must be {n}, got shape {a.shape}")
    return a


def lattice_transform(y, mu, basis: LatticeBasis) -> np.ndarray:
    """Map into basis coordinates: B^-1 (y - mu). Accepts (..., n) batches."""
    n = basis.dim
    y = _check_vec(y, n, "y")
    mu = _check_vec(mu, n, "mu")
    if y.shape != mu.shape:
        mu = np.broadcast_to(mu, y.shape)
    return (y - mu) @ basis.b_inv.T


def babai_round(y_tr) -> np.ndarray:
    """Elementwise round-half-away-from-zero in basis coordinates."""
    y_tr = np.asarray(y_tr, dtype=_F32)
    if not np.all(np.isfinite(y_tr)):
        raise InvalidArgument("babai_round: inputs must be finite")
    return round_half_away(y_tr)


def lattice_reconstruct(y_hat_tr, mu, basis: LatticeBasis) -> np.ndarray:
    """Map back from basis coordinates: B y_hat_tr + mu."""
    n = basis.dim
    y_hat_tr = _check_vec(y_hat_tr, n, "y_hat_tr")
    mu = _check_vec(mu, n, "mu")
    if y_hat_tr.shape != mu.shape:
        mu = np.broadcast_to(mu, y_hat_tr.shape)
    return y_hat_tr @ basis.b_mat.T + mu


def density_scale(y, a: float) -> np.ndarray:
    """Densify the effective lattice: multiply the latent by a before quantization."""
    if not a > 0:
        raise InvalidArgument(f"density scalar must be positive, got {a}")
    return np.asarray(y, dtype=_F32) * _F32(a)


def density_unscale(y_hat, a: float) -> np.ndarray:
    """Undo :func:`density_scale` on decoded coefficients (multiply by 1/a)."""
    if not a > 0:
        raise InvalidArgument(f"density scalar must be positive, got {a}")
    return np.asarray(y_hat, dtype=_F32) * (_F32(1.0) / _F32(a))


def quantize(y, mu, basis: LatticeBasis, a: float = 1.0):
    """Full quantizer round trip for one batch; returns (integer coords, y_hat)."""
    ys = density_scale(y, a)
    coords = babai_round(lattice_transform(ys, mu, basis))
    y_hat = density_unscale(lattice_reconstruct(coords, mu, basis), a)
    return coords, y_hat


def brute_force_nearest(y, basis: LatticeBasis, radius: int = 3) -> np.ndarray:
    """Exact nearest lattice point by exhaustive search around the Babai answer.

    Searches all integer coordinates within +-radius of Babai's rounding,
    ties broken by lexicographically smallest coordinate vector. Desk-scale
    oracle only: requires dim <= 4 and radius <= 6.
    """
    n = basis.dim
    if n > 4:
        raise InvalidArgument(f"brute_force_nearest supports dim <= 4, got {n}")
    if not 0 <= radius <= 6:
        raise InvalidArgument(f"radius must be in [0, 6], got {radius}")
    y = _check_vec(y, n, "y")
    if y.ndim != 1:
        raise InvalidArgument("brute_force_nearest takes a single vector")
    center = babai_round(lattice_transform(y, np.zeros(n, dtype=_F32), basis))
    offsets = np.array(list(product(range(-radius, radius + 1), repeat=n)), dtype=np.float64)
    cands = center.astype(np.float64) + offsets          # lexicographic order
    pts = cands @ basis.b_mat.T.astype(np.float64)
    d2 = ((pts - y.astype(np.float64)) ** 2).sum(axis=1)
    best = int(np.argmin(d2))                            # first minimum = lexicographic tie-break
    return cands[best].astype(_F32)
