"""Quantitative protocols: landmark-regression proxy and foreground IoU.

Part centers are turned into landmarks by a closed-form ridge regressor;
errors are reported as percentages of the inter-ocular distance or the
annotated bounding box, matching the two dataset conventions. Foreground
quality is the IoU of the aggregated part mask against a binary object
mask.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class InterOcularNorm:
    """Normalize by the distance between two eye landmarks (by index)."""

    left_eye: int
    right_eye: int


@dataclass(frozen=True)
class BboxNorm:
    """Normalize by ground-truth box size: per-axis (u by height, v by
    width) or by the box diagonal."""

    width: float
    height: float
    mode: str = "per_axis"

    def __post_init__(self):
        if self.mode not in ("per_axis", "diagonal"):
            raise EvaluationError(f"unknown bbox normalization mode {self.mode!r}")
        if self.width <= 0 or self.height <= 0:
            raise EvaluationError("bbox normalizer requires positive width and height")


@dataclass
class RegressorFit:
    """Affine map from stacked part-center coordinates to landmarks."""

    coefficients: np.ndarray  # (2K[+1], 2L)
    ridge: float
    include_bias: bool

    def predict(self, centers: np.ndarray) -> np.ndarray:
        x = np.asarray(centers, dtype=np.float64)
        if self.include_bias:
            x = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
        return x @ self.coefficients


def fit_landmark_regressor(
    centers: np.ndarray,
    landmarks: np.ndarray,
    ridge: float = 1e-6,
    include_bias: bool = True,
) -> RegressorFit:
    """Closed-form (ridge) least squares from centers to landmarks.

    ``centers`` is N x 2K (stacked per-part coordinates), ``landmarks``
    N x 2L. Images with empty parts must be excluded by the caller before
    fitting; NaN rows are rejected here.
    """
    x = np.asarray(centers, dtype=np.float64)
    y = np.asarray(landmarks, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise EvaluationError(
            f"need matching N x 2K and N x 2L arrays, got {x.shape} and {y.shape}"
        )
    if np.isnan(x).any() or np.isnan(y).any():
        raise EvaluationError("NaN rows must be excluded before fitting")
    n, d = x.shape
    cols = d + 1 if include_bias else d
    if n <= cols:
        raise EvaluationError(f"need more than {cols} samples to fit, got {n}")
    if include_bias:
        x = np.concatenate([x, np.ones((n, 1))], axis=1)
    if ridge < 0:
        raise EvaluationError("ridge must be non-negative")
    if ridge == 0:
        if np.linalg.matrix_rank(x) < x.shape[1]:
            raise EvaluationError(
                "design matrix is rank deficient; use ridge > 0 to regularize"
            )
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    else:
        gram = x.T @ x + ridge * np.eye(x.shape[1])
        coef = np.linalg.solve(gram, x.T @ y)
    return RegressorFit(coefficients=coef, ridge=ridge, include_bias=include_bias)


def landmark_error(pred: np.ndarray, gt: np.ndarray, norm) -> float:
    """Mean normalized L2 landmark distance, as a percentage."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 2:
        raise EvaluationError(f"need matching L x 2 arrays, got {p.shape} and {g.shape}")
    if isinstance(norm, InterOcularNorm):
        dist = np.linalg.norm(g[norm.left_eye] - g[norm.right_eye])
        if dist <= 0:
            raise EvaluationError("inter-ocular distance is zero (coincident eye landmarks)")
        per_landmark = np.linalg.norm(p - g, axis=1) / dist
    elif isinstance(norm, BboxNorm):
        diff = p - g
        if norm.mode == "per_axis":
            scaled = np.stack([diff[:, 0] / norm.height, diff[:, 1] / norm.width], axis=1)
            per_landmark = np.linalg.norm(scaled, axis=1)
        else:
            per_landmark = np.linalg.norm(diff, axis=1) / float(
                np.hypot(norm.width, norm.height)
            )
    else:
        raise EvaluationError(f"unknown normalization spec {norm!r}")
    return float(per_landmark.mean() * 100.0)


def foreground_iou(labels: np.ndarray, gt_mask: np.ndarray) -> float:
    """IoU of the aggregated part region (label > 0) with a binary mask.

    Empty-vs-empty is defined as 1.0 (nothing to segment, nothing
    segmented).
    """
    lab = np.asarray(labels)
    gt = np.asarray(gt_mask)
    if lab.shape != gt.shape:
        raise EvaluationError(f"size mismatch: {lab.shape} vs {gt.shape}")
    pred = lab > 0
    gt = gt.astype(bool)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def assignment_purity(pred_labels, gt_labels, parts: int, gt_parts: int) -> float:
    """Majority-vote purity of predicted parts against ground-truth parts.

    Counted over pixels that are foreground in both maps; each predicted
    part is mapped to its most frequent ground-truth part and purity is
    the fraction of counted pixels that agree with that mapping.
    """
    confusion = np.zeros((parts, gt_parts), dtype=np.int64)
    for pred, gt in zip(pred_labels, gt_labels):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        both = (pred > 0) & (gt > 0)
        np.add.at(confusion, (pred[both] - 1, gt[both] - 1), 1)
    total = confusion.sum()
    if total == 0:
        return 0.0
    return float(confusion.max(axis=1).sum() / total)


@dataclass
class MetricRow:
    split: str
    method: str
    parts: int
    metric: str
    value: float
    n_images: int
    n_excluded: int = 0


METRIC_COLUMNS = ("split", "method", "K", "metric", "value", "n_images", "n_excluded")


def write_metrics_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.split, r.method, r.parts, r.metric, f"{r.value:.6f}", r.n_images, r.n_excluded]
            )
