"""Seeded synthetic scenes with defected coarse masks, for tests and demos.

Three case kinds stress different prompt families through the mock backend's
target-priority cascade (point -> box -> soft mask):

- "mild": one shape, moderate defects; every prompt family can recover it.
- "point_hostile": a false-positive blob with a deeper interior than the
  defected object core, so the positive click lands in the blob (which is no
  scene shape) and point-only refinement collapses; the box rule still works.
- "box_hostile": a larger decoy shape plus a far blob that inflates the
  coarse mask's bounding box until the box rule prefers the decoy; the click
  still sits inside the true object.

Mixing the kinds is what makes the ALL >= box-only >= point-only robustness
ordering emerge, mirroring how combined prompts tolerate defects that defeat
any single prompt family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .defects import DefectSpec, simulate_defects
from .rasters import disk
from .segmenter import MockSegmenter, OracleScene


@dataclass(frozen=True, eq=False)
class RefinementCase:
    """One scene plus per-instance (target shape id, gt, coarse) triples."""

    scene: OracleScene
    instances: tuple[tuple[int, np.ndarray, np.ndarray], ...]
    kind: str


def _mild_case(rng, width=96, height=96,
               iou_window=(0.5, 0.9)) -> RefinementCase:
    r = int(rng.integers(10, 15))
    cy = int(rng.integers(r + 4, height - r - 4))
    cx = int(rng.integers(r + 4, width - r - 4))
    gt = disk(r, cy, cx, height, width)
    scene = OracleScene(width, height, ((1, gt),), feature_dim=8,
                        seed=int(rng.integers(0, 2**31)))
    spec = DefectSpec(boundary_noise=(1, 2), fp_blobs=(1, 2, 2, 4),
                      fn_holes=(1, 3, 2, 4), iou_window=iou_window)
    coarse = simulate_defects(gt, spec, rng)
    return RefinementCase(scene, ((1, gt, coarse),), "mild")


def _point_hostile_case(rng, width=96, height=96) -> RefinementCase:
    r = int(rng.integers(9, 12))
    cy = int(rng.integers(r + 4, height - r - 4))
    cx = int(rng.integers(r + 4, width // 2 - r - 4))
    gt = disk(r, cy, cx, height, width)
    scene = OracleScene(width, height, ((1, gt),), feature_dim=8,
                        seed=int(rng.integers(0, 2**31)))
    # heavy interior holes flatten the object's distance peak, then a blob
    # deeper than the remaining core steals the positive click
    spec = DefectSpec(boundary_noise=(1, 2), fp_blobs=(0, 0, 0, 0),
                      fn_holes=(2, 3, 3, 5), iou_window=(0.3, 0.95))
    coarse = simulate_defects(gt, spec, rng)
    blob_r = r + 2
    by = int(rng.integers(blob_r + 1, height - blob_r - 1))
    bx = int(rng.integers(width // 2 + blob_r + 2, width - blob_r - 1))
    coarse = coarse | disk(blob_r, by, bx, height, width)
    return RefinementCase(scene, ((1, gt, coarse),), "point_hostile")


def _box_hostile_case(rng, width=128, height=96) -> RefinementCase:
    r_s = int(rng.integers(8, 11))
    r_t = r_s + int(rng.integers(6, 9))
    cy = height // 2 + int(rng.integers(-6, 7))
    s_cx = r_s + 4
    t_cx = width // 2 + int(rng.integers(-4, 5))
    s_mask = disk(r_s, cy, s_cx, height, width)
    t_mask = disk(r_t, cy, t_cx, height, width)
    scene = OracleScene(width, height, ((1, s_mask), (2, t_mask)),
                        feature_dim=8, seed=int(rng.integers(0, 2**31)))
    spec = DefectSpec(boundary_noise=(1, 1), fp_blobs=(0, 0, 0, 0),
                      fn_holes=(1, 1, 1, 2), iou_window=(0.5, 0.98))
    coarse = simulate_defects(s_mask, spec, rng)
    # a distant blob drags the bounding box across the decoy shape
    blob_r = 3
    coarse = coarse | disk(blob_r, cy, width - blob_r - 2, height, width)
    return RefinementCase(scene, ((1, s_mask, coarse),), "box_hostile")


_MAKERS = {"mild": _mild_case, "point_hostile": _point_hostile_case,
           "box_hostile": _box_hostile_case}


def refinement_case(seed: int, kind: str = "mild", **kwargs) -> RefinementCase:
    rng = np.random.default_rng([seed, 0xCA5E])
    return _MAKERS[kind](rng, **kwargs)


def refinement_suite(seed: int, n_scenes: int, kind: str = "mild") -> list[RefinementCase]:
    """n_scenes seeded cases; kind "mixed" cycles hostile and mild cases."""
    cases = []
    for k in range(n_scenes):
        if kind == "mixed":
            sub = ("point_hostile", "point_hostile", "box_hostile", "mild")[k % 4]
        else:
            sub = kind
        cases.append(refinement_case(seed * 10_007 + k, sub))
    return cases


def backend_for(case: RefinementCase, noise_amplitude: float = 0.0) -> MockSegmenter:
    return MockSegmenter(case.scene, noise_amplitude=noise_amplitude)


def render_scene_image(scene: OracleScene) -> np.ndarray:
    """Flat RGB rendering of a scene (index-coded colors), for dataset files."""
    img = np.zeros((scene.height, scene.width, 3), dtype=np.uint8)
    img[:] = (32, 32, 32)
    for k, (sid, m) in enumerate(scene.shapes):
        color = np.array([(60 + 50 * k) % 256, (130 + 80 * k) % 256,
                          (200 + 40 * k) % 256], dtype=np.uint8)
        img[m] = color
    return img
