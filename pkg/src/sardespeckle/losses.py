"""Self-supervised losses on log-intensity predictions.

Both losses accept any pair of equally shaped arrays (or log-intensity
images): a single image, or a ``(batch, 1, H, W)`` tensor during training.
Totals are always reduced in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import Domain, Image
from .speckle import log_speckle_bias

__all__ = [
    "LossValue",
    "ExponentOverflowError",
    "loss_likelihood",
    "loss_likelihood_grad",
    "loss_l2_debiased",
    "loss_l2_debiased_grad",
    "LOSSES",
]

OVERFLOW_LIMIT = 700.0


class ExponentOverflowError(FloatingPointError):
    """y2 - pred exceeded the double-precision exponent budget."""


@dataclass(frozen=True)
class LossValue:
    total: float
    per_pixel: np.ndarray


def _pair(pred, y2):
    if isinstance(pred, Image):
        pred = pred.require(Domain.LOG_INTENSITY).values
    if isinstance(y2, Image):
        y2 = y2.require(Domain.LOG_INTENSITY).values
    pred = np.asarray(pred)
    y2 = np.asarray(y2)
    if pred.shape != y2.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {y2.shape}")
    return pred.astype(np.float64, copy=False), y2.astype(np.float64, copy=False)


def _residual_exp(pred, y2):
    d = y2 - pred
    worst = np.max(d) if d.size else 0.0
    if not np.isfinite(d).all():
        raise ExponentOverflowError("non-finite values in loss inputs")
    if worst > OVERFLOW_LIMIT:
        raise ExponentOverflowError(f"y2 - pred reaches {worst:.1f} > {OVERFLOW_LIMIT}")
    return np.exp(d)


def loss_likelihood(pred, y2) -> LossValue:
    """Co-log-likelihood of log-speckle, dropping the constant and factor L.

    Per pixel: ``pred - y2 + exp(y2 - pred)``, minimised at ``pred = y2``.
    """
    pred, y2 = _pair(pred, y2)
    per_pixel = pred - y2 + _residual_exp(pred, y2)
    return LossValue(float(np.sum(per_pixel)), per_pixel)


def loss_likelihood_grad(pred, y2) -> np.ndarray:
    pred, y2 = _pair(pred, y2)
    return 1.0 - _residual_exp(pred, y2)


def loss_l2_debiased(pred, y2, looks) -> LossValue:
    """Squared error against a target shifted by the log-speckle mean."""
    pred, y2 = _pair(pred, y2)
    r = pred - y2 + log_speckle_bias(looks)
    per_pixel = r * r
    return LossValue(float(np.sum(per_pixel)), per_pixel)


def loss_l2_debiased_grad(pred, y2, looks) -> np.ndarray:
    pred, y2 = _pair(pred, y2)
    return 2.0 * (pred - y2 + log_speckle_bias(looks))


def _lik(pred, y2, looks):
    pred, y2 = _pair(pred, y2)
    e = _residual_exp(pred, y2)
    per_pixel = pred - y2 + e
    return LossValue(float(np.sum(per_pixel)), per_pixel), 1.0 - e


def _l2(pred, y2, looks):
    return loss_l2_debiased(pred, y2, looks), loss_l2_debiased_grad(pred, y2, looks)


# name -> callable(pred, y2, looks) returning (LossValue, gradient)
LOSSES = {"likelihood": _lik, "l2": _l2}
