"""Seeded defect injection: fabricate realistic coarse masks from ground truth.

Three defect taxa are applied morphologically: signed boundary perturbation
(local dilate/erode brushes along the contour), external false-positive blob
stamping, and internal false-negative hole punching. Results are resampled
until the coarse-vs-gt IoU lands in the configured window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import iou
from .rasters import as_mask, disk, distance_to_foreground, erode


class SimulationError(RuntimeError):
    """The IoU window could not be satisfied within the retry budget."""


@dataclass(frozen=True)
class DefectSpec:
    """Ranges are inclusive; a channel with zero-range radii/counts is off."""

    seed: int = 0
    boundary_noise: tuple[int, int] = (1, 2)       # brush radius range, px
    fp_blobs: tuple[int, int, int, int] = (1, 2, 2, 4)   # count lo/hi, radius lo/hi
    fn_holes: tuple[int, int, int, int] = (1, 2, 2, 4)
    drop_prob: float = 0.0
    iou_window: tuple[float, float] = (0.4, 0.98)
    max_retries: int = 30

    def __post_init__(self):
        if min(*self.boundary_noise, *self.fp_blobs, *self.fn_holes) < 0:
            raise ValueError("defect ranges must be non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must be a probability")

    @property
    def any_enabled(self) -> bool:
        return (self.boundary_noise[1] > 0 or self.fp_blobs[1] > 0
                or self.fn_holes[1] > 0)


def _pick(rng, ys, xs):
    i = int(rng.integers(0, len(ys)))
    return int(ys[i]), int(xs[i])


def _attempt(gt: np.ndarray, spec: DefectSpec, rng) -> np.ndarray:
    h, w = gt.shape
    m = gt.copy()

    lo, hi = spec.boundary_noise
    if hi > 0:
        contour = gt & ~erode(gt, 1)
        ys, xs = np.nonzero(contour)
        if ys.size:
            brushes = max(1, int(round(ys.size / 15)))
            for _ in range(brushes):
                cy, cx = _pick(rng, ys, xs)
                r = int(rng.integers(lo, hi + 1))
                if r == 0:
                    continue
                brush = disk(r, cy, cx, h, w)
                if rng.random() < 0.5:
                    m |= brush
                else:
                    m &= ~brush

    c_lo, c_hi, r_lo, r_hi = spec.fn_holes
    if c_hi > 0:
        interior = erode(gt, 1)
        ys, xs = np.nonzero(interior if interior.any() else gt)
        if ys.size:
            for _ in range(int(rng.integers(c_lo, c_hi + 1))):
                cy, cx = _pick(rng, ys, xs)
                r = int(rng.integers(r_lo, r_hi + 1))
                if r > 0:
                    m &= ~disk(r, cy, cx, h, w)

    c_lo, c_hi, r_lo, r_hi = spec.fp_blobs
    if c_hi > 0:
        clearance = distance_to_foreground(gt)
        for _ in range(int(rng.integers(c_lo, c_hi + 1))):
            r = int(rng.integers(r_lo, r_hi + 1))
            if r == 0:
                continue
            ys, xs = np.nonzero(clearance > r + 1)
            if not ys.size:
                continue  # nowhere to stamp without touching gt
            cy, cx = _pick(rng, ys, xs)
            m |= disk(r, cy, cx, h, w)
    return m


def simulate_defects(gt: np.ndarray, spec: DefectSpec,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the spec's defects to a non-empty ground-truth mask.

    With every channel disabled the mask is returned unchanged (identity).
    Otherwise attempts are resampled until the result is non-empty and its
    IoU against gt lies inside spec.iou_window.
    """
    gt = as_mask(gt)
    if not gt.any():
        raise ValueError("ground-truth mask is empty")
    if not spec.any_enabled:
        return gt.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lo, hi = spec.iou_window
    for _ in range(spec.max_retries):
        m = _attempt(gt, spec, rng)
        if m.any() and lo <= iou(m, gt) <= hi:
            return m
    raise SimulationError(
        f"could not reach IoU window [{lo}, {hi}] in {spec.max_retries} attempts")
