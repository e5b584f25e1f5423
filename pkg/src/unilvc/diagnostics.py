"""Pure loss evaluators, used by tests and the `stats --losses` path.

No optimization happens here: these evaluate the training-time
objectives as diagnostics. Rates are reported in bits; the distortion
entering the rate-distortion sum is mean squared error on unit-range
pixels; the binary cross-entropy uses natural logs. Each choice is
recorded in the report fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class LossReport:
    """rd = rate_y_bits + rate_z_bits + lam * distortion, by construction."""

    rate_y_bits: float
    rate_z_bits: float
    distortion: float          # MSE on unit-range pixels
    lam: float
    rd: float
    reg: float
    cls: float


def rd_loss(rate_y: float, rate_z: float, mse: float, lam: float) -> float:
    """Weighted rate-distortion sum: rate_y + rate_z + lam * mse."""
    if rate_y < 0 or rate_z < 0 or mse < 0 or lam <= 0:
        raise InvalidArgument("rates and mse must be nonnegative, lam positive")
    return rate_y + rate_z + lam * mse


def gate_regularizer(alphas) -> float:
    """Sparsity plus total variation of the gate sequence:
    sum(alpha_t) + sum(|alpha_t - alpha_{t-1}|), differences from t = 1."""
    a = np.asarray(alphas, dtype=np.float64)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise InvalidArgument("alphas must lie in [0, 1]")
    if a.size == 0:
        return 0.0
    return float(a.sum() + np.abs(np.diff(a)).sum())


def label_smoothed_bce(alphas, labels, epsilon: float = 0.1) -> float:
    """Sum of -r~ log(a) - (1 - r~) log(1 - a) with r~ = (1-eps) r + eps (1-r).

    Natural logarithms; gate values are clamped to [1e-7, 1 - 1e-7] before
    the logs so endpoint alphas stay finite.
    """
    a = np.asarray(alphas, dtype=np.float64)
    r = np.asarray(labels, dtype=np.float64)
    if a.shape != r.shape:
        raise InvalidArgument("alphas and labels must have the same length")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise InvalidArgument("alphas must lie in [0, 1]")
    if r.size and not np.all((r == 0) | (r == 1)):
        raise InvalidArgument("labels must be 0 or 1")
    if not 0 <= epsilon < 0.5:
        raise InvalidArgument(f"epsilon must be in [0, 0.5), got {epsilon}")
    a = np.clip(a, 1e-7, 1 - 1e-7)
    rt = (1 - epsilon) * r + epsilon * (1 - r)
    return float(-(rt * np.log(a) + (1 - rt) * np.log(1 - a)).sum())


def make_report(rate_y_bits: float, rate_z_bits: float, distortion: float,
                lam: float, alphas=(), labels=None, epsilon: float = 0.1) -> LossReport:
    """Assemble a LossReport; labels default to all-ones (clean references)."""
    alphas = list(alphas)
    if labels is None:
        labels = [1.0] * len(alphas)
    return LossReport(
        rate_y_bits=float(rate_y_bits),
        rate_z_bits=float(rate_z_bits),
        distortion=float(distortion),
        lam=float(lam),
        rd=rd_loss(rate_y_bits, rate_z_bits, distortion, lam),
        reg=gate_regularizer(alphas),
        cls=label_smoothed_bce(alphas, labels, epsilon) if alphas else 0.0,
    )


def psnr_from_mse(mse: float, peak: float = 255.0) -> float:
    """PSNR on the 8-bit scale; +inf for zero error."""
    if mse < 0:
        raise InvalidArgument("mse must be nonnegative")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
