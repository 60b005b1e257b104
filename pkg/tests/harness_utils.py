"""Shared helpers for harness-level tests: build mock datasets on disk."""

import hashlib
import json
from pathlib import Path

import numpy as np

from maskforge.datasets import save_image_png, save_mask_png
from maskforge.segmenter import save_scene
from maskforge.synth import refinement_case, render_scene_image


def build_mock_dataset(root: Path, n_images: int = 4, seed: int = 1,
                       kind: str = "mild") -> dict:
    """Images, per-instance coarse + gt PNGs, and per-image scene JSONs."""
    images = root / "images"
    coarse = root / "coarse"
    gt = root / "gt"
    scenes = root / "scenes"
    for d in (images, coarse, gt, scenes):
        d.mkdir(parents=True, exist_ok=True)
    names = []
    for k in range(n_images):
        case = refinement_case(seed * 1000 + k, kind)
        name = f"img{k:03d}"
        save_image_png(render_scene_image(case.scene), images / f"{name}.png")
        save_scene(case.scene, scenes / f"{name}.json")
        for sid, gt_mask, coarse_mask in case.instances:
            save_mask_png(coarse_mask, coarse / f"{name}__{sid}.png")
            save_mask_png(gt_mask, gt / f"{name}__{sid}.png")
        names.append(name)
    return {"root": root, "images": images, "coarse": coarse, "gt": gt,
            "scenes": scenes, "names": names}


def tree_digest(root: Path) -> dict:
    """Relative path -> sha256 of every file under root."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def read_report(out_dir: Path) -> dict:
    return json.loads((out_dir / "report.json").read_text())
