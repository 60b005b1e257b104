"""Raster primitives shared by every other module.

Masks are plain numpy arrays indexed [y, x]:

- binary mask:  bool (H, W), True = foreground
- label mask:   int32 (H, W), 0 = background, labels 1..R
- distance map: float64 (H, W), Euclidean pixels
- soft mask:    float64 (H, W), non-negative

Functions never mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np


class EmptyMaskError(ValueError):
    """Raised when an operation requires at least one foreground pixel."""


class RleFormatError(ValueError):
    """Raised when RLE counts are inconsistent with the stated size."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box, half-open on x1/y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative box origin {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def union(self, other: "Box") -> "Box":
        return Box(min(self.x0, other.x0), min(self.y0, other.y0),
                   max(self.x1, other.x1), max(self.y1, other.y1))

    def contains(self, other: "Box") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def to_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class Point:
    """Pixel coordinate with click polarity."""

    x: int
    y: int
    positive: bool = True

    def to_list(self) -> list:
        return [self.x, self.y, "positive" if self.positive else "negative"]


@dataclass(frozen=True)
class RleMask:
    """Column-major run-length encoding, COCO uncompressed counts convention.

    First run is background; sum(counts) == width*height.
    """

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if sum(self.counts) != self.width * self.height:
            raise RleFormatError(
                f"counts sum {sum(self.counts)} != {self.width}*{self.height}")


def as_mask(a: np.ndarray) -> np.ndarray:
    """Coerce to a bool (H, W) mask, rejecting degenerate dimensions."""
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"mask must be 2-d and non-empty, got shape {m.shape}")
    return m.astype(bool, copy=False)


def foreground_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(as_mask(mask)))


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform
# ---------------------------------------------------------------------------

def _edt_rows(col_dist: np.ndarray) -> np.ndarray:
    """Lower-envelope-of-parabolas pass over each row.

    col_dist holds per-pixel vertical distance (in pixels) to the nearest
    source in the same column. Returns squared Euclidean distances.
    """
    h, w = col_dist.shape
    f = col_dist.astype(np.int64) ** 2
    out = np.empty((h, w), dtype=np.int64)
    xs2 = np.arange(w, dtype=np.int64) ** 2
    for y in range(h):
        fr = f[y]
        v = np.empty(w, dtype=np.int64)    # parabola apex positions
        z = np.empty(w + 1, dtype=np.float64)  # envelope boundaries
        k = 0
        v[0] = 0
        z[0] = -math.inf
        z[1] = math.inf
        for q in range(1, w):
            fq = fr[q] + xs2[q]
            s = (fq - (fr[v[k]] + xs2[v[k]])) / (2 * q - 2 * v[k])
            while s <= z[k]:
                k -= 1
                s = (fq - (fr[v[k]] + xs2[v[k]])) / (2 * q - 2 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = math.inf
        k = 0
        row = out[y]
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            dq = q - v[k]
            row[q] = dq * dq + fr[v[k]]
    return out


def _column_pass(sources: np.ndarray) -> np.ndarray:
    """Per-column distance (in rows) to the nearest True pixel of sources.

    Rows without any source above/below keep a sentinel larger than the image.
    """
    h, w = sources.shape
    big = h + w + 1
    g = np.empty((h, w), dtype=np.int64)
    g[0] = np.where(sources[0], 0, big)
    for y in range(1, h):
        g[y] = np.where(sources[y], 0, g[y - 1] + 1)
    for y in range(h - 2, -1, -1):
        np.minimum(g[y], g[y + 1] + 1, out=g[y])
    return g


def _sq_distance_to(sources: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel (int64).

    Two-pass separable transform: a vertical scan per column, then a
    lower-envelope pass per row. Pixels outside the image are NOT sources.
    """
    if not sources.any():
        h, w = sources.shape
        return np.full((h, w), np.iinfo(np.int64).max // 4, dtype=np.int64)
    return _edt_rows(_column_pass(sources))


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest
    background pixel; background maps to 0.

    Pixels outside the image border count as background, so the transform is
    computed on a one-pixel zero-padded frame and cropped back.
    """
    m = as_mask(mask)
    padded = np.pad(m, 1, constant_values=False)
    d2 = _sq_distance_to(~padded)[1:-1, 1:-1]
    return np.sqrt(d2.astype(np.float64))


def distance_to_foreground(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance to the nearest foreground pixel (no border sources).

    Foreground pixels map to 0. All-background masks map to +inf.
    """
    m = as_mask(mask)
    if not m.any():
        return np.full(m.shape, np.inf)
    return np.sqrt(_sq_distance_to(m).astype(np.float64))


# ---------------------------------------------------------------------------
# Connected components
# ---------------------------------------------------------------------------

def connected_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label maximal connected foreground regions 1..count.

    Two-pass union-find; final labels are renumbered in raster-scan
    first-touch order so the labeling is deterministic.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = as_mask(mask)
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = [0]

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    nxt = 1
    for y in range(h):
        row = m[y]
        for x in range(w):
            if not row[x]:
                continue
            neigh = []
            if x > 0 and m[y, x - 1]:
                neigh.append(labels[y, x - 1])
            if y > 0:
                if m[y - 1, x]:
                    neigh.append(labels[y - 1, x])
                if connectivity == 8:
                    if x > 0 and m[y - 1, x - 1]:
                        neigh.append(labels[y - 1, x - 1])
                    if x + 1 < w and m[y - 1, x + 1]:
                        neigh.append(labels[y - 1, x + 1])
            if not neigh:
                labels[y, x] = nxt
                parent.append(nxt)
                nxt += 1
            else:
                lo = min(neigh)
                labels[y, x] = lo
                for n in neigh:
                    ra, rb = find(lo), find(n)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)

    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    out = np.zeros((h, w), dtype=np.int32)
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab == 0:
                continue
            root = find(lab)
            if remap[root] == 0:
                count += 1
                remap[root] = count
            out[y, x] = remap[root]
    return out, count


def canonicalize_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber arbitrary non-negative labels to a contiguous 0..R set,
    ordered by raster-scan first touch (background 0 stays 0)."""
    lab = np.asarray(labels)
    out = np.zeros_like(lab, dtype=np.int32)
    mapping: dict[int, int] = {0: 0}
    flat_in = lab.ravel()
    flat_out = out.ravel()
    for i, v in enumerate(flat_in):
        v = int(v)
        if v not in mapping:
            mapping[v] = len(mapping)
        flat_out[i] = mapping[v]
    return out


# ---------------------------------------------------------------------------
# Boxes, morphology
# ---------------------------------------------------------------------------

def tight_box(mask: np.ndarray) -> Box:
    """Smallest axis-aligned box containing all foreground pixels."""
    m = as_mask(mask)
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise EmptyMaskError("tight_box of an empty mask")
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def erode(mask: np.ndarray, radius: float) -> np.ndarray:
    """Erosion by a closed Euclidean disk; radius 0 is the identity.

    A pixel survives iff every pixel within the disk (out-of-image counts as
    background) is foreground, i.e. distance_transform(mask) > radius.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    m = as_mask(mask)
    if radius == 0:
        return m.copy()
    return distance_transform(m) > radius


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Dilation by a closed Euclidean disk; radius 0 is the identity."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    m = as_mask(mask)
    if radius == 0 or not m.any():
        return m.copy()
    return distance_to_foreground(m) <= radius


def morphology(mask: np.ndarray, op: Literal["erode", "dilate"], radius: float) -> np.ndarray:
    if op == "erode":
        return erode(mask, radius)
    if op == "dilate":
        return dilate(mask, radius)
    raise ValueError(f"unknown morphology op {op!r}")


def boundary_band(mask: np.ndarray, width: float) -> np.ndarray:
    """Inner boundary band: mask minus its erosion by `width`."""
    m = as_mask(mask)
    return m & ~erode(m, width)


# ---------------------------------------------------------------------------
# RLE codec (COCO uncompressed counts, column-major)
# ---------------------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> RleMask:
    """Encode a binary mask as column-major run lengths starting with background."""
    m = as_mask(mask)
    h, w = m.shape
    flat = m.T.ravel()  # column-major
    if flat.size == 0:
        return RleMask(w, h, (0,))
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:  # counts must start with a (possibly zero) background run
        counts = [0] + counts
    return RleMask(w, h, tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode back to a bool (H, W) mask. Inverse of rle_encode, bit-exact."""
    total = rle.width * rle.height
    flat = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for c in rle.counts:
        if c < 0:
            raise RleFormatError("negative run length")
        flat[pos:pos + c] = val
        pos += c
        val = not val
    if pos != total:
        raise RleFormatError(f"runs cover {pos} pixels, expected {total}")
    return flat.reshape((rle.width, rle.height)).T


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def _nearest_indices(n_out: int, n_src: int) -> np.ndarray:
    # floor of the source index: idx = floor(i * n_src / n_out)
    return np.minimum((np.arange(n_out, dtype=np.int64) * n_src) // n_out, n_src - 1)


def resize_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize using the floor-of-source-index convention."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("target dims must be positive")
    a = np.asarray(src)
    ys = _nearest_indices(out_h, a.shape[0])
    xs = _nearest_indices(out_w, a.shape[1])
    return a[np.ix_(ys, xs)]


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align-corners=false).

    Source coordinate of output pixel i is (i + 0.5) * scale - 0.5, clamped.
    """
    if out_h <= 0 or out_w <= 0:
        raise ValueError("target dims must be positive")
    a = np.asarray(src, dtype=np.float64)
    h, w = a.shape

    def axis_coords(n_out: int, n_src: int):
        c = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_src / n_out) - 0.5
        c = np.clip(c, 0.0, n_src - 1.0)
        i0 = np.floor(c).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, c - i0

    y0, y1, wy = axis_coords(out_h, h)
    x0, x1, wx = axis_coords(out_w, w)
    wy = wy[:, None]
    wx = wx[None, :]
    top = a[np.ix_(y0, x0)] * (1 - wx) + a[np.ix_(y0, x1)] * wx
    bot = a[np.ix_(y1, x0)] * (1 - wx) + a[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def resize(src: np.ndarray, out_h: int, out_w: int,
           mode: Literal["bilinear", "nearest"] = "bilinear") -> np.ndarray:
    if mode == "nearest":
        return resize_nearest(src, out_h, out_w)
    if mode == "bilinear":
        return resize_bilinear(src, out_h, out_w)
    raise ValueError(f"unknown resize mode {mode!r}")


def disk(radius: float, cy: int, cx: int, h: int, w: int) -> np.ndarray:
    """Closed Euclidean disk rasterized into an (h, w) bool mask."""
    ys = np.arange(h, dtype=np.float64)[:, None] - cy
    xs = np.arange(w, dtype=np.float64)[None, :] - cx
    return ys * ys + xs * xs <= radius * radius
