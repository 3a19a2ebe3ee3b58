"""Scale-invariant log-depth loss and multi-scale gradient-matching loss.

Both terms work on ``g = log(pred) - log(gt)`` over pixels where the ground
truth is finite and positive. ``n`` is always the valid-pixel count at full
resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    absolute,
    as_tensor,
    avg_pool2x2,
    clamp_min,
    getitem,
    log,
    mul,
    sqrt,
    sub,
    tsum,
    where,
)
from .depthmap import DepthMap
from .errors import ConfigError, DomainError, EmptyMaskError, ShapeError

DEFAULT_SCALES = 4


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.85
    lambda3: float = 0.5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda3 < 0 or not 0 <= self.lambda2 <= 1:
            raise ConfigError(
                f"need lambda1 >= 0, 0 <= lambda2 <= 1, lambda3 >= 0; got {self}")


def _gt_parts(gt) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(gt, DepthMap):
        values, mask = gt.values, gt.mask
    else:
        values = np.asarray(gt, dtype=np.float64)
        mask = np.ones(values.shape, dtype=bool)
    with np.errstate(invalid="ignore"):
        mask = mask & np.isfinite(values) & (values > 0)
    return values, mask


def log_difference(pred, gt) -> tuple[Tensor, np.ndarray, int]:
    """``(g, mask, n)``; ``g`` is exactly zero on invalid pixels."""
    if isinstance(pred, DepthMap):
        pred = pred.values
    pred = as_tensor(pred)
    gt_values, mask = _gt_parts(gt)
    if pred.shape != gt_values.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt_values.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("ground truth has no valid pixel")
    p = pred.data[mask]
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        raise DomainError("prediction must be finite and > 0 on every valid pixel")
    log_gt = np.log(np.where(mask, gt_values, 1.0))
    g = sub(log(where(mask, pred, 1.0)), log_gt)
    return g, mask, n


def scale_invariant_term(g: Tensor, n: int, w: LossWeights) -> Tensor:
    mean_sq = tsum(mul(g, g)) * (1.0 / n)
    mean = tsum(g) * (1.0 / n)
    radicand = clamp_min(sub(mean_sq, mul(mul(mean, mean), w.lambda2)), 0.0)
    return mul(sqrt(radicand), w.lambda1)


def _pair_sum(g: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    if axis == 1:
        lo, hi = (slice(None), slice(None, -1)), (slice(None), slice(1, None))
    else:
        lo, hi = (slice(None, -1), slice(None)), (slice(1, None), slice(None))
    both = mask[lo] & mask[hi]
    diff = sub(getitem(g, hi), getitem(g, lo))
    return tsum(mul(absolute(diff), both.astype(np.float64)))


def gradient_term(g: Tensor, mask: np.ndarray, n: int, w: LossWeights,
                  scales: int = DEFAULT_SCALES) -> Tensor:
    """Forward differences of ``g`` summed over ``scales`` 2x2-pooled levels.

    A difference counts only if both pixels are valid; a pooled pixel is valid
    only if all four of its sources are.
    """
    if scales < 1:
        raise ValueError(f"need at least one scale, got {scales}")
    total = None
    for k in range(scales):
        h, wd = g.shape
        terms = []
        if wd >= 2:
            terms.append(_pair_sum(g, mask, axis=1))
        if h >= 2:
            terms.append(_pair_sum(g, mask, axis=0))
        for t in terms:
            total = t if total is None else total + t
        if k == scales - 1 or h < 2 or wd < 2:
            break
        g = avg_pool2x2(g)
        h2, w2 = h // 2, wd // 2
        mask = mask[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).all(axis=(1, 3))
    if total is None:
        return as_tensor(0.0)
    return mul(total, w.lambda3 / n)


def pixel_loss(pred, gt, w: LossWeights = LossWeights()) -> Tensor:
    g, _, n = log_difference(pred, gt)
    return scale_invariant_term(g, n, w)


def grad_loss(pred, gt, w: LossWeights = LossWeights(), scales: int = DEFAULT_SCALES) -> Tensor:
    g, mask, n = log_difference(pred, gt)
    return gradient_term(g, mask, n, w, scales)


def total_loss(pred, gt, w: LossWeights = LossWeights(), scales: int = DEFAULT_SCALES) -> Tensor:
    g, mask, n = log_difference(pred, gt)
    return scale_invariant_term(g, n, w) + gradient_term(g, mask, n, w, scales)
