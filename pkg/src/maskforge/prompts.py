"""Prompt mining from a coarse instance mask.

Three prompt families are excavated with no human input:

- a positive click at the deepest-interior foreground pixel (and an optional
  negative click at the deepest in-box background pixel),
- an elastic bounding box that expands the tight box direction-by-direction
  wherever surrounding image features resemble the object's mean feature,
- a soft mask whose amplitude decays with squared distance from the positive
  click, zeroed outside the coarse foreground.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .rasters import (
    Box,
    EmptyMaskError,
    Point,
    as_mask,
    distance_transform,
    foreground_area,
    resize_bilinear,
    resize_nearest,
    rle_encode,
    tight_box,
)

PROMPT_KINDS = ("point", "box", "mask")


class DegenerateFeatureError(ValueError):
    """Raised when a query embedding has zero norm."""


@dataclass(frozen=True, eq=False)
class ImageEmbedding:
    """Spatial feature tensor from a backend encoder, (h, w, c) over the
    source image extent (src_w x src_h pixels)."""

    data: np.ndarray
    src_w: int
    src_h: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"embedding must be (h, w, c), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("embedding contains non-finite entries")
        self.data.setflags(write=False)

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Non-negative soft prompt raster plus the scalars that generated it."""

    data: np.ndarray
    center: Point
    amplitude: float
    span: float

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError("soft mask must be 2-d")
        if np.any(self.data < 0):
            raise ValueError("soft mask must be non-negative")
        self.data.setflags(write=False)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PromptSet:
    """The mined prompts for one target; `enabled` gates what a backend sees."""

    positive: Point
    negative: Optional[Point] = None
    box: Optional[Box] = None
    soft_mask: Optional[SoftMask] = None
    enabled: frozenset = frozenset(PROMPT_KINDS)

    def __post_init__(self):
        unknown = set(self.enabled) - set(PROMPT_KINDS)
        if unknown:
            raise ValueError(f"unknown prompt kinds {sorted(unknown)}")

    def to_json_dict(self) -> dict:
        out: dict = {
            "enabled": sorted(self.enabled),
            "points": [self.positive.to_list()],
        }
        if self.negative is not None:
            out["points"].append(self.negative.to_list())
        if self.box is not None:
            out["box"] = self.box.to_list()
        if self.soft_mask is not None:
            support = rle_encode(self.soft_mask.data > 0)
            out["soft_mask"] = {
                "size": [support.height, support.width],
                "support_counts": list(support.counts),
                "center": self.soft_mask.center.to_list(),
                "amplitude": self.soft_mask.amplitude,
                "span": self.soft_mask.span,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> int:
        """Stable 64-bit content hash of the canonical JSON form."""
        h = hashlib.sha256(self.to_json().encode()).digest()
        return int.from_bytes(h[:8], "big")


@dataclass(frozen=True)
class ExcavationConfig:
    """Knobs for the three prompt miners.

    expand_ratio_threshold gates box expansion by the fraction of
    feature-similar pixels in the candidate strip; amplitude/span_factor shape
    the soft mask; expand_fraction is the strip width as a fraction of the
    box side length.
    """

    expand_ratio_threshold: float = 0.1
    amplitude: float = 15.0
    span_factor: float = 4.0
    sim_threshold: float = 0.5
    expand_fraction: float = 0.10
    max_expand_px: int = 16
    expand_iters: int = 3

    def __post_init__(self):
        if not 0.0 <= self.expand_ratio_threshold <= 1.0:
            raise ValueError("expand_ratio_threshold must be in [0, 1]")
        if self.amplitude <= 0 or self.span_factor <= 0:
            raise ValueError("amplitude and span_factor must be positive")


def positive_point(coarse: np.ndarray) -> Point:
    """Foreground pixel with maximum distance to the nearest background.

    Ties break in raster-scan order (smallest y, then x).
    """
    m = as_mask(coarse)
    if not m.any():
        raise EmptyMaskError("positive_point of an empty mask")
    d = distance_transform(m)
    idx = int(np.argmax(d))  # argmax scans row-major: raster tie-break
    y, x = divmod(idx, m.shape[1])
    return Point(x, y, positive=True)


def negative_point(coarse: np.ndarray, box: Box,
                   min_distance: float = 2.0) -> Optional[Point]:
    """Deepest background pixel inside the box, or None.

    None when the box contains no background or when the best candidate sits
    closer than min_distance to the foreground (boundary noise guard).
    """
    m = as_mask(coarse)
    d = distance_transform(~m)
    sel = np.full(m.shape, -1.0)
    region = (slice(box.y0, box.y1), slice(box.x0, box.x1))
    sel[region] = np.where(m[region], -1.0, d[region])
    best = int(np.argmax(sel))
    y, x = divmod(best, m.shape[1])
    if sel[y, x] < min_distance:
        return None
    return Point(x, y, positive=False)


def _grid_cell_of(p: Point, src_w: int, src_h: int, grid_w: int, grid_h: int) -> tuple[int, int]:
    gx = min(grid_w - 1, p.x * grid_w // src_w)
    gy = min(grid_h - 1, p.y * grid_h // src_h)
    return gx, gy


def query_embedding(emb: ImageEmbedding, coarse: np.ndarray) -> np.ndarray:
    """Channel-wise mean of the embedding over the resized coarse foreground.

    If nearest-resizing to the embedding grid empties the mask, falls back to
    the single cell containing the positive point.
    """
    m = as_mask(coarse)
    if not m.any():
        raise EmptyMaskError("query_embedding of an empty mask")
    grid = resize_nearest(m, emb.grid_h, emb.grid_w)
    if not grid.any():
        gx, gy = _grid_cell_of(positive_point(m), emb.src_w, emb.src_h,
                               emb.grid_w, emb.grid_h)
        return emb.data[gy, gx].astype(np.float64)
    return emb.data[grid].mean(axis=0).astype(np.float64)


def similarity_map(query: np.ndarray, emb: ImageEmbedding,
                   threshold: float = 0.5) -> np.ndarray:
    """Cosine similarity of each embedding cell against the query, bilinearly
    upsampled to the source resolution and thresholded (>= threshold)."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (emb.channels,):
        raise ValueError(f"query dim {q.shape} != embedding channels {emb.channels}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise DegenerateFeatureError("zero-norm query embedding")
    cells = emb.data.reshape(-1, emb.channels).astype(np.float64)
    norms = np.linalg.norm(cells, axis=1)
    cos = np.zeros(len(cells))
    nz = norms > 0
    cos[nz] = (cells[nz] @ q) / (norms[nz] * qn)
    cos = cos.reshape(emb.grid_h, emb.grid_w)
    up = resize_bilinear(cos, emb.src_h, emb.src_w)
    return up >= threshold


def _strip(box: Box, side: str, dx: int, w: int, h: int):
    """Region added by moving one edge of `box` outward by dx, clamped."""
    if side == "left":
        return slice(box.y0, box.y1), slice(max(0, box.x0 - dx), box.x0)
    if side == "right":
        return slice(box.y0, box.y1), slice(box.x1, min(w, box.x1 + dx))
    if side == "up":
        return slice(max(0, box.y0 - dx), box.y0), slice(box.x0, box.x1)
    return slice(box.y1, min(h, box.y1 + dx)), slice(box.x0, box.x1)


def elastic_box(coarse: np.ndarray, emb: ImageEmbedding,
                cfg: ExcavationConfig = ExcavationConfig()) -> Box:
    """Tight box expanded direction-by-direction where the just-outside strip
    is rich in query-similar pixels.

    Per iteration each edge in (left, right, up, down) sees a strip of width
    expand_fraction * current side length; if the strip's positive ratio in
    the similarity map exceeds the threshold, the edge moves outward by at
    most max_expand_px. The box never shrinks and stays inside the image.
    """
    m = as_mask(coarse)
    h, w = m.shape
    sim = similarity_map(query_embedding(emb, m), emb, cfg.sim_threshold)
    box = tight_box(m)
    for _ in range(cfg.expand_iters):
        for side in ("left", "right", "up", "down"):
            side_len = box.width if side in ("left", "right") else box.height
            dx = max(1, int(cfg.expand_fraction * side_len + 0.5))
            ys, xs = _strip(box, side, dx, w, h)
            strip = sim[ys, xs]
            if strip.size == 0:
                continue
            if strip.mean() > cfg.expand_ratio_threshold:
                step = min(dx, cfg.max_expand_px)
                if side == "left":
                    box = replace(box, x0=max(0, box.x0 - step))
                elif side == "right":
                    box = replace(box, x1=min(w, box.x1 + step))
                elif side == "up":
                    box = replace(box, y0=max(0, box.y0 - step))
                else:
                    box = replace(box, y1=min(h, box.y1 + step))
    return box


def gaussian_mask(coarse: np.ndarray, cfg: ExcavationConfig = ExcavationConfig(),
                  out_w: int | None = None, out_h: int | None = None) -> SoftMask:
    """Soft mask amplitude * exp(-d^2 / (area * span)) around the deepest
    foreground pixel, zeroed outside the coarse foreground.

    Computed in source pixel coordinates, then nearest-resized to
    (out_w, out_h) when a prompt-grid resolution is requested.
    """
    m = as_mask(coarse)
    if not m.any():
        raise EmptyMaskError("gaussian_mask of an empty mask")
    h, w = m.shape
    center = positive_point(m)
    area = foreground_area(m)
    ys = (np.arange(h, dtype=np.float64) - center.y)[:, None]
    xs = (np.arange(w, dtype=np.float64) - center.x)[None, :]
    gm = cfg.amplitude * np.exp(-(xs * xs + ys * ys) / (area * cfg.span_factor))
    gm = np.where(m, gm, 0.0)
    if out_w is not None and out_h is not None and (out_w, out_h) != (w, h):
        gm = resize_nearest(gm, out_h, out_w)
    return SoftMask(gm, center=center, amplitude=cfg.amplitude, span=cfg.span_factor)


def excavate(coarse: np.ndarray, emb: ImageEmbedding,
             cfg: ExcavationConfig = ExcavationConfig(),
             enabled: Iterable[str] = PROMPT_KINDS,
             prompt_grid: tuple[int, int] | None = None) -> PromptSet:
    """Assemble the prompt set for one coarse mask.

    The positive point is always mined (it anchors the soft mask); the
    negative point searches the tight box regardless of whether the elastic
    box is enabled, so point-only prompt sets do not depend on box mining.
    prompt_grid is the backend's (w, h) soft-mask resolution.
    """
    m = as_mask(coarse)
    if not m.any():
        raise EmptyMaskError("excavate of an empty mask")
    kinds = frozenset(enabled)
    if not kinds:
        raise ValueError("at least one prompt kind must be enabled")
    pos = positive_point(m)
    neg = negative_point(m, tight_box(m)) if "point" in kinds else None
    box = elastic_box(m, emb, cfg) if "box" in kinds else None
    soft = None
    if "mask" in kinds:
        if prompt_grid is None:
            prompt_grid = (m.shape[1], m.shape[0])
        soft = gaussian_mask(m, cfg, out_w=prompt_grid[0], out_h=prompt_grid[1])
    return PromptSet(positive=pos, negative=neg, box=box, soft_mask=soft, enabled=kinds)
