"""Split-then-merge: turn a multi-object semantic mask into promptable targets.

Split finds 8-connected regions of one class; merge re-groups regions whose
combined bounding box stays dense enough, so fragments of one object become a
single target while far-apart objects stay separate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rasters import Box, as_mask, connected_components, foreground_area, tight_box


@dataclass(frozen=True)
class Region:
    region_id: int
    mask: np.ndarray
    box: Box
    box_area: int
    mask_area: int


@dataclass(frozen=True)
class RegionSet:
    """Disjoint regions whose union is the source foreground."""

    labels: np.ndarray
    regions: tuple[Region, ...]

    def __post_init__(self):
        for r in self.regions:
            if r.mask_area > r.box_area:
                raise ValueError(f"region {r.region_id}: mask area exceeds box area")


@dataclass(frozen=True)
class MergeConfig:
    """occupancy_threshold is the minimum density of the merged box; regions
    whose final group stays below min_region_px are noise, not prompt targets."""

    occupancy_threshold: float = 0.5
    min_region_px: int = 4

    def __post_init__(self):
        if not 0.0 < self.occupancy_threshold <= 1.0:
            raise ValueError("occupancy_threshold must be in (0, 1]")


def split(class_mask: np.ndarray) -> RegionSet:
    """8-connected regions with per-region boxes and areas."""
    m = as_mask(class_mask)
    labels, count = connected_components(m, connectivity=8)
    regions = []
    for rid in range(1, count + 1):
        rmask = labels == rid
        box = tight_box(rmask)
        regions.append(Region(rid, rmask, box, box.area, foreground_area(rmask)))
    return RegionSet(labels, tuple(regions))


class _Groups:
    """Union-find over region ids with group box/area bookkeeping."""

    def __init__(self, regions):
        self.parent = {r.region_id: r.region_id for r in regions}
        self.box = {r.region_id: r.box for r in regions}
        self.box_area = {r.region_id: r.box_area for r in regions}
        self.mask_area = {r.region_id: r.mask_area for r in regions}

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int):
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return
        keep, drop = min(ri, rj), max(ri, rj)
        self.parent[drop] = keep
        self.box[keep] = self.box[keep].union(self.box[drop])
        self.box_area[keep] = self.box[keep].area
        self.mask_area[keep] += self.mask_area[drop]


def merge(rs: RegionSet, cfg: MergeConfig = MergeConfig()) -> list[np.ndarray]:
    """Single-pass pairwise merging over original region ids.

    For each ordered pair (i, j), i < j, the pair merges iff both the summed
    box areas and the summed mask areas exceed occupancy_threshold times the
    area of the merged bounding box. Merging is transitive: after a union,
    later pairs see the updated group boxes and areas.

    Returns one mask per final group, ordered by smallest member id.
    """
    if not rs.regions:
        return []
    groups = _Groups(rs.regions)
    ids = [r.region_id for r in rs.regions]
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            gi, gj = groups.find(i), groups.find(j)
            if gi == gj:
                continue
            merged_box = groups.box[gi].union(groups.box[gj])
            bar = merged_box.area
            if (groups.box_area[gi] + groups.box_area[gj] > cfg.occupancy_threshold * bar
                    and groups.mask_area[gi] + groups.mask_area[gj] > cfg.occupancy_threshold * bar):
                groups.union(gi, gj)
    members: dict[int, list[int]] = {}
    for rid in ids:
        members.setdefault(groups.find(rid), []).append(rid)
    out = []
    for root in sorted(members):
        sel = np.isin(rs.labels, members[root])
        out.append(sel)
    return out


def semantic_targets(semantic: np.ndarray, cfg: MergeConfig = MergeConfig()
                     ) -> dict[int, list[np.ndarray]]:
    """Split-then-merge each class of a label mask (labels >= 1 are classes).

    Classes with no pixels are omitted. Group masks below min_region_px are
    still returned; callers decide whether to prompt them (the pipeline treats
    them as unrefined passthrough).
    """
    lab = np.asarray(semantic)
    if lab.ndim != 2:
        raise ValueError("semantic mask must be 2-d")
    if lab.min() < 0:
        raise ValueError("labels must be non-negative")
    out: dict[int, list[np.ndarray]] = {}
    for cls in np.unique(lab):
        cls = int(cls)
        if cls == 0:
            continue
        out[cls] = merge(split(lab == cls), cfg)
    return out
