"""Independent reference implementations shared by the test modules.

Everything here is deliberately written the slow, obvious way and stays
independent of the code paths it checks.
"""

import numpy as np
from scipy.spatial.distance import cdist


def brute_force_edt(mask: np.ndarray) -> np.ndarray:
    """O(n^2) nearest-background search; out-of-image counts as background."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    out = np.zeros((h, w), dtype=np.float64)
    if ys.size == 0:
        return out
    border = np.minimum.reduce([xs + 1, w - xs, ys + 1, h - ys]).astype(np.float64)
    bys, bxs = np.nonzero(~mask)
    if bys.size:
        fg = np.stack([ys, xs], axis=1).astype(np.float64)
        bg = np.stack([bys, bxs], axis=1).astype(np.float64)
        border = np.minimum(border, cdist(fg, bg).min(axis=1))
    out[ys, xs] = border
    return out


def bilinear_reference(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear sampling, half-pixel centers."""
    h, w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (src[y0, x0] * (1 - fy) * (1 - fx)
                         + src[y0, x1] * (1 - fy) * fx
                         + src[y1, x0] * fy * (1 - fx)
                         + src[y1, x1] * fy * fx)
    return out


def cosine_grid(emb_data: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Per-cell cosine similarity, explicit loops."""
    h, w, c = emb_data.shape
    out = np.zeros((h, w))
    qn = np.linalg.norm(query)
    for y in range(h):
        for x in range(w):
            v = emb_data[y, x]
            n = np.linalg.norm(v)
            out[y, x] = 0.0 if n == 0 else float(v @ query) / (n * qn)
    return out


def iou_ref(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


def region_boxes_areas(masks: dict) -> dict:
    """(box extents, box area, mask area) per group, recomputed from pixels."""
    out = {}
    for gid, m in masks.items():
        ys, xs = np.nonzero(m)
        x0, y0, x1, y1 = xs.min(), ys.min(), xs.max() + 1, ys.max() + 1
        out[gid] = ((x0, y0, x1, y1), (x1 - x0) * (y1 - y0), len(ys))
    return out


def _pair_qualifies(info_a, info_b, mu):
    (ax0, ay0, ax1, ay1), abox, amask = info_a
    (bx0, by0, bx1, by1), bbox, bmask = info_b
    ux0, uy0 = min(ax0, bx0), min(ay0, by0)
    ux1, uy1 = max(ax1, bx1), max(ay1, by1)
    bar = (ux1 - ux0) * (uy1 - uy0)
    return (abox + bbox > mu * bar) and (amask + bmask > mu * bar)


def single_pass_merge_partition(region_masks: list, mu: float) -> set:
    """Documented single-pass semantics, recomputing group boxes from pixels.

    Ordered double loop over original ids; later pairs see updated groups.
    """
    n = len(region_masks)
    group_of = {i: i for i in range(n)}
    members = {i: {i} for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            gi, gj = group_of[i], group_of[j]
            if gi == gj:
                continue
            masks = {g: np.any([region_masks[k] for k in members[g]], axis=0)
                     for g in (gi, gj)}
            info = region_boxes_areas(masks)
            if _pair_qualifies(info[gi], info[gj], mu):
                keep, drop = min(gi, gj), max(gi, gj)
                members[keep] |= members[drop]
                for k in members[drop]:
                    group_of[k] = keep
                del members[drop]
    return {frozenset(v) for v in members.values()}


def fixed_point_merge_partition(region_masks: list, mu: float) -> set:
    """Brute-force fixed point: merge any qualifying pair until none qualifies."""
    members = {i: {i} for i in range(len(region_masks))}
    changed = True
    while changed:
        changed = False
        gids = sorted(members)
        for a in range(len(gids)):
            for b in range(a + 1, len(gids)):
                ga, gb = gids[a], gids[b]
                masks = {g: np.any([region_masks[k] for k in members[g]], axis=0)
                         for g in (ga, gb)}
                info = region_boxes_areas(masks)
                if _pair_qualifies(info[ga], info[gb], mu):
                    members[ga] |= members[gb]
                    del members[gb]
                    changed = True
                    break
            if changed:
                break
    return {frozenset(v) for v in members.values()}


def random_rectangle_regions(rng, n_regions: int, h: int = 40, w: int = 40):
    """Disjoint random rectangles as region masks (rejection-sampled)."""
    masks = []
    occupied = np.zeros((h, w), dtype=bool)
    tries = 0
    while len(masks) < n_regions and tries < 200:
        tries += 1
        rw, rh = int(rng.integers(2, 14)), int(rng.integers(2, 14))
        x0 = int(rng.integers(0, w - rw))
        y0 = int(rng.integers(0, h - rh))
        rect = np.zeros((h, w), dtype=bool)
        rect[y0:y0 + rh, x0:x0 + rw] = True
        if (rect & occupied).any():
            continue
        occupied |= rect
        masks.append(rect)
    return masks


def make_linear_rank_samples(rng, n, teacher, teacher_mag=8.0, noise=1.0, d_h=16):
    """TrainSamples whose hidden vectors linearly encode the best index:
    h_best gets a +teacher_mag * teacher bump over unit Gaussian noise."""
    from maskforge.adaption import TrainSample
    out = []
    for _ in range(n):
        j = int(rng.integers(0, 3))
        h = rng.normal(scale=noise, size=(3, d_h))
        h[j] += teacher_mag * teacher
        base = rng.uniform(0, 1, 3)
        out.append(TrainSample(hidden=h, base_scores=base, best_index=j))
    return out
