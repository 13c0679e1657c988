"""Depth evaluation metrics and the scaled affine-invariant training loss.

Conventions: ``pred`` and ``gt`` are arrays of the same shape; every
metric is computed only over an explicit boolean mask. Threshold
accuracies use strict inequality against 1.25^i. The edge-weighted MAE
weights each pixel by gradient-derived conduction coefficients computed
on the ground truth with replicate border padding.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .core import DepthMap
from .errors import EmptyMaskError, ValidationError


@dataclass(frozen=True)
class EdgeWeightParams:
    """Regularization constant for the conduction functions, in meters."""

    kappa: float = 0.1

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValidationError("kappa must be positive")


@dataclass
class MetricReport:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rmse: float
    log10: float
    ewmae: float
    loss: float
    valid_count: int

    def to_dict(self) -> dict:
        return asdict(self)


class BasicMetrics(NamedTuple):
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rmse: float
    log10: float


def valid_mask(gt: DepthMap, detection_max: float) -> np.ndarray:
    """Pixels valid in gt whose depth is within the detection range."""
    return gt.valid & (gt.data <= detection_max)


def _masked(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ValidationError("pred, gt and mask must share one shape")
    if not mask.any():
        raise EmptyMaskError("no valid pixels to evaluate")
    return pred[mask], gt[mask]


def basic_metrics(pred, gt, mask) -> BasicMetrics:
    """Threshold accuracies, mean relative error, RMSE and mean |log10| error."""
    x, y = _masked(pred, gt, mask)
    ratio = np.maximum(y / x, x / y)
    deltas = [float((ratio < 1.25**i).mean()) for i in (1, 2, 3)]
    rel = float(np.mean(np.abs(y - x) / y))
    rmse = float(np.sqrt(np.mean((y - x) ** 2)))
    log10 = float(np.mean(np.abs(np.log10(y) - np.log10(x))))
    return BasicMetrics(deltas[0], deltas[1], deltas[2], rel, rmse, log10)


def edge_weights(gt, params: EdgeWeightParams = EdgeWeightParams()) -> np.ndarray:
    """Per-pixel weight in [0, 1): mean conduction response of the four
    directional gradients (replicate padding zeroes border gradients)."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim != 2:
        raise ValidationError("edge weights need a 2-D depth array")
    padded = np.pad(gt, 1, mode="edge")
    k2 = params.kappa**2
    total = np.zeros_like(gt)
    for grad in (
        padded[:-2, 1:-1] - gt,   # north
        padded[2:, 1:-1] - gt,    # south
        padded[1:-1, 2:] - gt,    # east
        padded[1:-1, :-2] - gt,   # west
    ):
        g2 = grad * grad
        total += g2 / (g2 + k2)
    return total / 4.0


def ewmae(
    pred,
    gt,
    mask,
    params: EdgeWeightParams = EdgeWeightParams(),
    literal_prefactor: bool = False,
) -> float:
    """Edge-weighted mean absolute error over the masked pixels.

    Defined as sum(G |y - x|) / sum(G); when every weight is zero
    (homogeneous ground truth) it falls back to the plain MAE.
    ``literal_prefactor`` additionally divides by the pixel count, which
    makes the value shrink with resolution.
    """
    x, y = _masked(pred, gt, mask)
    weights = edge_weights(gt, params)[np.asarray(mask, dtype=bool)]
    err = np.abs(y - x)
    wsum = weights.sum()
    value = float(err.mean()) if wsum == 0 else float((weights * err).sum() / wsum)
    if literal_prefactor:
        value /= x.size
    return value


def affine_invariant_loss(pred, gt, mask, alpha: float = 10.0, lam: float = 0.85) -> float:
    """Scale-damped affine-invariant loss on log depth.

    With g = log(pred) - log(gt) over the T masked pixels:
    alpha * sqrt(mean(g^2) - lam * (sum(g) / T)^2). A slightly negative
    radicand from rounding is clamped to zero.
    """
    x, y = _masked(pred, gt, mask)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("loss requires positive depths on the mask")
    g = np.log(x) - np.log(y)
    t = g.size
    radicand = float(g @ g) / t - lam * float(g.sum()) ** 2 / t**2
    return alpha * float(np.sqrt(max(radicand, 0.0)))


def evaluate(
    pred,
    gt,
    mask,
    params: EdgeWeightParams = EdgeWeightParams(),
    alpha: float = 10.0,
    lam: float = 0.85,
    literal_prefactor: bool = False,
) -> MetricReport:
    """Full metric suite over one prediction/ground-truth pair."""
    basics = basic_metrics(pred, gt, mask)
    return MetricReport(
        delta1=basics.delta1,
        delta2=basics.delta2,
        delta3=basics.delta3,
        rel=basics.rel,
        rmse=basics.rmse,
        log10=basics.log10,
        ewmae=ewmae(pred, gt, mask, params, literal_prefactor),
        loss=affine_invariant_loss(pred, gt, mask, alpha, lam),
        valid_count=int(np.asarray(mask, dtype=bool).sum()),
    )


def error_map(pred, gt, mask) -> np.ndarray:
    """Per-pixel |pred - gt|, zero outside the mask."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    out = np.zeros_like(gt)
    m = np.asarray(mask, dtype=bool)
    out[m] = np.abs(pred[m] - gt[m])
    return out
