"""Dataset ingestion and mask file I/O.

Three mask sources are supported:

- instance_png: a directory of per-instance masks named
  "<image_stem>__<target_id>.png" (any nonzero pixel is foreground),
- label_png: a directory of "<image_stem>.png" label masks (pixel = class id),
- coco_json: a single JSON file with COCO-style images/annotations where each
  segmentation is an uncompressed column-major RLE counts list.

Ordering is always deterministic: images lexicographic by file name, targets
lexicographic by target id (numeric annotation ids sort numerically).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Optional

import numpy as np
from PIL import Image

from .rasters import RleFormatError, RleMask, rle_decode, rle_encode

MaskFormat = Literal["instance_png", "label_png", "coco_json"]
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class IngestError(ValueError):
    pass


class MissingFileError(IngestError):
    pass


class DimMismatchError(IngestError):
    pass


@dataclass(frozen=True)
class MaskSource:
    format: MaskFormat
    path: Path

    def __post_init__(self):
        if self.format not in ("instance_png", "label_png", "coco_json"):
            raise IngestError(f"unknown mask format {self.format!r}")


@dataclass(frozen=True)
class DatasetSpec:
    mode: Literal["instance", "semantic"]
    image_dir: Path
    masks: MaskSource
    gt: Optional[MaskSource] = None


@dataclass
class InstanceRecord:
    name: str
    image: np.ndarray
    targets: list[tuple[str, np.ndarray]]
    gt: Optional[dict[str, np.ndarray]] = None


@dataclass
class SemanticRecord:
    name: str
    image: np.ndarray
    labels: np.ndarray
    gt: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# PNG helpers
# ---------------------------------------------------------------------------

def load_image(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"image not found: {path}")
    return np.asarray(Image.open(path).convert("RGB"))


def load_mask_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"mask not found: {path}")
    return np.asarray(Image.open(path).convert("L")) > 0


def load_label_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"label mask not found: {path}")
    return np.asarray(Image.open(path).convert("L")).astype(np.int32)


def save_mask_png(mask: np.ndarray, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((mask.astype(np.uint8)) * 255, mode="L").save(path)


def save_label_png(labels: np.ndarray, path: Path):
    if labels.max(initial=0) > 255:
        raise IngestError("label ids above 255 cannot be written as 8-bit PNG")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def save_image_png(image: np.ndarray, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.astype(np.uint8)).save(path)


# ---------------------------------------------------------------------------
# COCO-style JSON (uncompressed RLE)
# ---------------------------------------------------------------------------

def rle_to_coco(mask: np.ndarray) -> dict:
    r = rle_encode(mask)
    return {"size": [r.height, r.width], "counts": list(r.counts)}


def coco_to_mask(seg: dict) -> np.ndarray:
    try:
        h, w = int(seg["size"][0]), int(seg["size"][1])
        counts = tuple(int(c) for c in seg["counts"])
    except (KeyError, TypeError, ValueError) as e:
        raise RleFormatError(f"malformed RLE segmentation: {e}") from e
    return rle_decode(RleMask(w, h, counts))


def _load_coco_targets(path: Path) -> dict[str, list[tuple[str, np.ndarray]]]:
    """file_name -> [(annotation id, mask)] sorted by annotation id."""
    if not path.is_file():
        raise MissingFileError(f"COCO JSON not found: {path}")
    payload = json.loads(path.read_text())
    images = {int(im["id"]): im["file_name"] for im in payload.get("images", [])}
    out: dict[str, list[tuple[int, np.ndarray]]] = {name: [] for name in images.values()}
    for ann in payload.get("annotations", []):
        image_id = int(ann["image_id"])
        if image_id not in images:
            raise IngestError(f"annotation {ann.get('id')} references unknown "
                              f"image id {image_id}")
        mask = coco_to_mask(ann["segmentation"])
        out[images[image_id]].append((int(ann["id"]), mask))
    return {name: [(str(aid), m) for aid, m in sorted(pairs)]
            for name, pairs in out.items()}


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _image_files(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise MissingFileError(f"image directory not found: {image_dir}")
    files = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise MissingFileError(f"no images in {image_dir}")
    return files


def _instance_png_targets(mask_dir: Path, stem: str) -> list[tuple[str, np.ndarray]]:
    if not mask_dir.is_dir():
        raise MissingFileError(f"mask directory not found: {mask_dir}")
    out = []
    for p in sorted(mask_dir.glob(f"{stem}__*.png")):
        target_id = p.stem[len(stem) + 2:]
        out.append((target_id, load_mask_png(p)))
    return out


def _check_dims(mask: np.ndarray, image: np.ndarray, what: str):
    if mask.shape[:2] != image.shape[:2]:
        raise DimMismatchError(
            f"{what}: mask dims {mask.shape[:2]} != image dims {image.shape[:2]}")


def ingest(spec: DatasetSpec) -> Iterator[InstanceRecord | SemanticRecord]:
    """Yield one record per image, deterministically ordered and dim-checked."""
    coco_cache = None
    gt_coco_cache = None
    for img_path in _image_files(spec.image_dir):
        stem = img_path.stem
        image = load_image(img_path)
        if spec.mode == "semantic":
            if spec.masks.format != "label_png":
                raise IngestError("semantic mode needs a label_png mask source")
            labels = load_label_png(spec.masks.path / f"{stem}.png")
            _check_dims(labels, image, f"{stem} labels")
            gt = None
            if spec.gt is not None:
                gt = load_label_png(spec.gt.path / f"{stem}.png")
                _check_dims(gt, image, f"{stem} gt labels")
            yield SemanticRecord(stem, image, labels, gt)
            continue

        if spec.masks.format == "instance_png":
            targets = _instance_png_targets(spec.masks.path, stem)
        elif spec.masks.format == "coco_json":
            if coco_cache is None:
                coco_cache = _load_coco_targets(spec.masks.path)
            targets = coco_cache.get(img_path.name, [])
        else:
            raise IngestError("instance mode needs instance_png or coco_json masks")
        for tid, m in targets:
            _check_dims(m, image, f"{stem}__{tid}")

        gt_map = None
        if spec.gt is not None:
            if spec.gt.format == "instance_png":
                gt_map = dict(_instance_png_targets(spec.gt.path, stem))
            elif spec.gt.format == "coco_json":
                if gt_coco_cache is None:
                    gt_coco_cache = _load_coco_targets(spec.gt.path)
                gt_map = dict(gt_coco_cache.get(img_path.name, []))
            else:
                raise IngestError("instance mode gt needs instance_png or coco_json")
            for tid, m in gt_map.items():
                _check_dims(m, image, f"gt {stem}__{tid}")
        yield InstanceRecord(stem, image, targets, gt_map)
