"""Median-scaled depth evaluation with the 150 mm cap."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .depthmap import DepthMap, as_depthmap
from .errors import ProtocolError

DEPTH_CAP_MM = 150.0
DELTA_THRESHOLD = 1.25
METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta")


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta: float
    n_pixels: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in METRIC_NAMES)

    def as_dict(self) -> dict:
        return asdict(self)


def _joint_mask(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise ProtocolError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    with np.errstate(invalid="ignore"):
        return (pred.mask & gt.mask & np.isfinite(pred.values) & np.isfinite(gt.values)
                & (pred.values > 0) & (gt.values > 0))


def lower_median(values: np.ndarray) -> float:
    """Median taking the lower of the two middle values for even counts."""
    s = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return float(s[(s.size - 1) // 2])


def median_scale(pred, gt) -> DepthMap:
    """Multiply ``pred`` by ``median(gt) / median(pred)`` over jointly valid pixels."""
    pred, gt = as_depthmap(pred), as_depthmap(gt)
    joint = _joint_mask(pred, gt)
    if not joint.any():
        raise ProtocolError("no jointly valid pixel to take medians over")
    m_pred = lower_median(pred.values[joint])
    if not m_pred > 0:
        raise ProtocolError(f"median of prediction is {m_pred}")
    factor = lower_median(gt.values[joint]) / m_pred
    return DepthMap(pred.values * factor, pred.mask.copy())


def compute_metrics(pred, gt, threshold: float = DELTA_THRESHOLD) -> MetricsReport:
    pred, gt = as_depthmap(pred), as_depthmap(gt)
    joint = _joint_mask(pred, gt)
    n = int(joint.sum())
    if n == 0:
        raise ProtocolError("no jointly valid pixel to evaluate")
    p, g = pred.values[joint], gt.values[joint]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta=float(np.mean(ratio < threshold)),
        n_pixels=n,
    )


def evaluate_pair(pred, gt, cap: float = DEPTH_CAP_MM) -> MetricsReport:
    """Joint mask, median scaling, cap both maps at ``cap``, then the five metrics."""
    pred, gt = as_depthmap(pred), as_depthmap(gt)
    joint = _joint_mask(pred, gt)
    scaled = median_scale(DepthMap(pred.values, joint), DepthMap(gt.values, joint))
    capped_pred = DepthMap(np.minimum(scaled.values, cap), joint)
    capped_gt = DepthMap(np.minimum(gt.values, cap), joint)
    return compute_metrics(capped_pred, capped_gt)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ProtocolError("no reports to average")
    values = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    return MetricsReport(**values, n_pixels=int(sum(r.n_pixels for r in reports)))


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        env = os.environ.get("SURGIDEPTH_THREADS")
        workers = int(env) if env else 1
    return max(1, workers)


def evaluate_images(pairs: Sequence, names: Optional[Sequence[str]] = None,
                    cap: float = DEPTH_CAP_MM, workers: Optional[int] = None) -> list[MetricsReport]:
    """Per-image reports, in input order. ``workers`` defaults to ``$SURGIDEPTH_THREADS`` or 1."""
    pairs = list(pairs)
    if not pairs:
        raise ProtocolError("no image pairs to evaluate")
    names = list(names) if names is not None else [f"#{i}" for i in range(len(pairs))]

    def one(i):
        try:
            return evaluate_pair(pairs[i][0], pairs[i][1], cap)
        except (ProtocolError, ValueError) as exc:
            raise ProtocolError(f"image {names[i]}: {exc}") from exc

    n_workers = _worker_count(workers)
    if n_workers == 1:
        return [one(i) for i in range(len(pairs))]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, range(len(pairs))))


def evaluate_dataset(pairs: Sequence, names: Optional[Sequence[str]] = None,
                     cap: float = DEPTH_CAP_MM, workers: Optional[int] = None) -> MetricsReport:
    """Unweighted mean of the per-image reports."""
    return mean_report(evaluate_images(pairs, names, cap, workers))


REPORT_FIELDS = tuple(f.name for f in fields(MetricsReport))
