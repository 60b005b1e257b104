"""Evaluation metrics: IoU, boundary IoU, per-class mIoU, top-1 selection accuracy."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .rasters import as_mask, boundary_band


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    a = as_mask(a)
    b = as_mask(b)
    _check_dims(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def default_band_width(shape: tuple[int, int]) -> int:
    """2% of the image diagonal, at least 1 pixel."""
    h, w = shape
    return max(1, int(round(0.02 * math.hypot(w, h))))


def boundary_iou(a: np.ndarray, b: np.ndarray, d: float | None = None) -> float:
    """IoU restricted to inner boundary bands of width d."""
    a = as_mask(a)
    b = as_mask(b)
    _check_dims(a, b)
    if d is None:
        d = default_band_width(a.shape)
    if d < 1:
        raise ValueError("boundary width must be >= 1")
    return iou(boundary_band(a, d), boundary_band(b, d))


class ConfusionAccumulator:
    """Per-class intersection/union pooled across a dataset."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.intersection = np.zeros(num_classes, dtype=np.int64)
        self.union = np.zeros(num_classes, dtype=np.int64)
        self.seen = np.zeros(num_classes, dtype=bool)

    def update(self, pred: np.ndarray, gt: np.ndarray):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        _check_dims(pred, gt)
        if pred.max(initial=0) >= self.num_classes or gt.max(initial=0) >= self.num_classes:
            raise ValueError("label out of range")
        for c in range(self.num_classes):
            p = pred == c
            g = gt == c
            if p.any() or g.any():
                self.seen[c] = True
            self.intersection[c] += np.count_nonzero(p & g)
            self.union[c] += np.count_nonzero(p | g)

    def per_class(self) -> dict[int, float]:
        out = {}
        for c in range(self.num_classes):
            if self.seen[c]:
                out[c] = float(self.intersection[c] / self.union[c]) if self.union[c] else 1.0
        return out

    def mean(self) -> float:
        vals = list(self.per_class().values())
        if not vals:
            raise ValueError("no class present in either prediction or ground truth")
        return float(np.mean(vals))


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple[dict[int, float], float]:
    """Per-class IoU and its mean for one label-mask pair.

    Classes absent from both masks are excluded from the mean.
    """
    acc = ConfusionAccumulator(num_classes)
    acc.update(pred, gt)
    return acc.per_class(), acc.mean()


def top1_accuracy(records: Sequence[tuple[Mapping[str, Sequence[float]], Sequence[float]]]
                  ) -> dict[str, float]:
    """Fraction of records where each selector's argmax hits the best-gt candidate.

    Each record is (scores-by-selector, gt IoU per candidate). Ties in gt count
    as correct when the selected index is within the gt argmax set.
    """
    if not records:
        raise ValueError("no records")
    hits: dict[str, int] = {}
    for scores_by_selector, gt_ious in records:
        gt = np.asarray(gt_ious, dtype=np.float64)
        best = set(np.flatnonzero(gt == gt.max()).tolist())
        for name, scores in scores_by_selector.items():
            idx = int(np.argmax(np.asarray(scores, dtype=np.float64)))
            hits[name] = hits.get(name, 0) + (1 if idx in best else 0)
    return {name: h / len(records) for name, h in hits.items()}


@dataclass
class EvalReport:
    """Per-instance metric rows plus aggregates recomputed from the rows."""

    rows: list[dict] = field(default_factory=list)
    per_class_iou: dict[int, float] | None = None
    mean_class_iou: float | None = None
    top1: dict[str, float] | None = None
    schema_version: int = 1

    def add_row(self, **kwargs):
        self.rows.append(dict(kwargs))

    @property
    def count(self) -> int:
        return len(self.rows)

    def _mean_of(self, key: str) -> float | None:
        vals = [r[key] for r in self.rows if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    def aggregates(self) -> dict:
        agg = {
            "count": self.count,
            "mean_iou": self._mean_of("iou"),
            "mean_boundary_iou": self._mean_of("boundary_iou"),
        }
        if self.per_class_iou is not None:
            agg["per_class_iou"] = {str(k): v for k, v in sorted(self.per_class_iou.items())}
            agg["mean_class_iou"] = self.mean_class_iou
        if self.top1 is not None:
            agg["top1"] = dict(sorted(self.top1.items()))
        return agg

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "aggregates": self.aggregates(),
            "rows": self.rows,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in keys:
                    keys.append(k)
        writer = csv.DictWriter(buf, fieldnames=keys)
        writer.writeheader()
        for r in self.rows:
            writer.writerow(r)
        return buf.getvalue()
