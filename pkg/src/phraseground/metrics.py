"""Recall-over-IoU-threshold evaluation.

Average recall is the area under recall(tau) for tau in [0, 1]; curves
are also split by thing/stuff and singular/plural phrase categories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.01), 2)


@dataclass
class EvalRecord:
    iou: float
    thing: bool
    plural: bool


@dataclass
class RecallCurve:
    thresholds: np.ndarray
    recalls: np.ndarray
    area: float


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; both empty counts as a
    correct prediction of absence (IoU 1)."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def merge_plural(masks: np.ndarray) -> np.ndarray:
    """Union of the member masks of one plural phrase."""
    masks = np.asarray(masks)
    if masks.ndim == 1:
        return masks.astype(bool)
    return masks.astype(bool).any(axis=0)


def recall_curve(ious, thresholds: np.ndarray | None = None) -> RecallCurve:
    """recall(tau) = fraction of records with IoU >= tau; area by the
    trapezoid rule."""
    ious = np.asarray(list(ious), dtype=np.float64)
    if ious.size == 0:
        raise ShapeError("cannot compute recall of zero records")
    th = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    recalls = (ious[None, :] >= th[:, None]).mean(axis=1)
    area = 0.5 * ((recalls[1:] + recalls[:-1]) * np.diff(th)).sum()
    return RecallCurve(thresholds=th, recalls=recalls, area=float(area))


CATEGORY_FILTERS = {
    "overall": lambda r: True,
    "things": lambda r: r.thing,
    "stuff": lambda r: not r.thing,
    "singulars": lambda r: not r.plural,
    "plurals": lambda r: r.plural,
}


def average_recall(records: list[EvalRecord],
                   thresholds: np.ndarray | None = None) -> dict[str, RecallCurve | None]:
    """Overall and per-category recall curves; a category with no records
    maps to None."""
    if not records:
        raise ShapeError("cannot evaluate zero records")
    out: dict[str, RecallCurve | None] = {}
    for name, keep in CATEGORY_FILTERS.items():
        subset = [r.iou for r in records if keep(r)]
        out[name] = recall_curve(subset, thresholds) if subset else None
    return out
