"""Prompted-segmentation backends.

The protocol is small: embed an image once, then predict K=3 candidate masks
per prompt set, each with a predicted quality score and the quality head's
penultimate hidden vector. Two implementations exist: the deterministic
geometric mock in this module (a test oracle over known shapes) and the
neural backend in maskforge.neural (exported graphs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .metrics import iou
from .prompts import ImageEmbedding, PromptSet
from .rasters import (
    Box,
    as_mask,
    dilate,
    disk,
    erode,
    resize_bilinear,
    resize_nearest,
    rle_decode,
    rle_encode,
    RleMask,
    tight_box,
)

CANDIDATE_COUNT = 3


class NoPromptError(ValueError):
    """Raised when predict is called with no enabled prompt."""


@dataclass(frozen=True)
class Capabilities:
    candidate_count: int
    hidden_dim: int
    prompt_grid: tuple[int, int]          # (w, h) soft-mask resolution
    embedding_grid: tuple[int, int, int]  # (h, w, c)


@dataclass(frozen=True, eq=False)
class MultiMaskOutput:
    """K candidate masks with low-res logits, quality scores and hidden taps.

    Invariant (checked): masks[i] equals the thresholded (>0) bilinear
    upsampling of logits[i].
    """

    masks: np.ndarray     # (K, H, W) bool
    logits: np.ndarray    # (K, h, w) float
    iou_pred: np.ndarray  # (K,) float in [0, 1]
    hidden: np.ndarray    # (K, d_h) float

    def __post_init__(self):
        k = self.masks.shape[0]
        if k != CANDIDATE_COUNT:
            raise ValueError(f"expected {CANDIDATE_COUNT} candidates, got {k}")
        if not (self.logits.shape[0] == self.iou_pred.shape[0] == self.hidden.shape[0] == k):
            raise ValueError("candidate count mismatch across fields")
        if np.any(self.iou_pred < 0) or np.any(self.iou_pred > 1):
            raise ValueError("iou_pred must lie in [0, 1]")
        h, w = self.masks.shape[1:]
        for i in range(k):
            lg = self.logits[i]
            up = lg if lg.shape == (h, w) else resize_bilinear(lg, h, w)
            if not np.array_equal(self.masks[i], up > 0):
                raise ValueError(f"mask {i} is not threshold(upsample(logits))")
        for a in (self.masks, self.logits, self.iou_pred, self.hidden):
            a.setflags(write=False)


@runtime_checkable
class PromptedSegmenter(Protocol):
    @property
    def capabilities(self) -> Capabilities: ...

    def embed(self, image: np.ndarray | None = None) -> ImageEmbedding: ...

    def predict(self, emb: ImageEmbedding, prompts: PromptSet) -> MultiMaskOutput: ...


# ---------------------------------------------------------------------------
# Oracle scene + mock backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OracleScene:
    """Known ground-truth shapes for the geometric mock backend.

    Shape masks may overlap; ids must be unique; feature_dim must exceed the
    shape count so every cluster gets an orthogonal feature direction.
    """

    width: int
    height: int
    shapes: tuple[tuple[int, np.ndarray], ...]
    feature_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        ids = [sid for sid, _ in self.shapes]
        if len(set(ids)) != len(ids):
            raise ValueError("shape ids must be unique")
        if self.feature_dim <= len(self.shapes):
            raise ValueError("feature_dim must exceed the shape count")
        for sid, m in self.shapes:
            if m.shape != (self.height, self.width):
                raise ValueError(f"shape {sid} has wrong dims {m.shape}")

    def shape_mask(self, sid: int) -> np.ndarray:
        for s, m in self.shapes:
            if s == sid:
                return m
        raise KeyError(sid)


def scene_to_json_dict(scene: OracleScene) -> dict:
    shapes = []
    for sid, m in scene.shapes:
        r = rle_encode(m)
        shapes.append({"id": sid, "rle": {"size": [r.height, r.width],
                                          "counts": list(r.counts)}})
    return {"width": scene.width, "height": scene.height,
            "feature_dim": scene.feature_dim, "seed": scene.seed,
            "shapes": shapes}


def scene_from_json_dict(d: dict) -> OracleScene:
    w, h = int(d["width"]), int(d["height"])
    shapes = []
    for s in d["shapes"]:
        if "rle" in s:
            rle = s["rle"]
            m = rle_decode(RleMask(int(rle["size"][1]), int(rle["size"][0]),
                                   tuple(int(c) for c in rle["counts"])))
        elif "rect" in s:
            x0, y0, x1, y1 = s["rect"]
            m = np.zeros((h, w), dtype=bool)
            m[y0:y1, x0:x1] = True
        elif "disk" in s:
            cx, cy, r = s["disk"]
            m = disk(r, cy, cx, h, w)
        else:
            raise ValueError(f"shape {s.get('id')} needs rle, rect or disk")
        shapes.append((int(s["id"]), m))
    return OracleScene(w, h, tuple(shapes),
                       feature_dim=int(d.get("feature_dim", 32)),
                       seed=int(d.get("seed", 0)))


def save_scene(scene: OracleScene, path: str | Path):
    Path(path).write_text(json.dumps(scene_to_json_dict(scene), sort_keys=True))


def load_scene(path: str | Path) -> OracleScene:
    return scene_from_json_dict(json.loads(Path(path).read_text()))


def _perimeter(mask: np.ndarray) -> int:
    """Foreground pixels with a 4-neighbor background (border counts)."""
    m = mask
    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1]
                         & m[1:-1, :-2] & m[1:-1, 2:])
    return int(np.count_nonzero(m & ~inner))


class MockSegmenter:
    """Deterministic geometric oracle over an OracleScene.

    embed: each embedding cell gets the orthonormal feature direction of the
    shape covering its center (last shape in list order wins; background has
    its own direction), so same-shape cells form one cluster and cross-cluster
    cosine is 0.

    predict: the target shape is chosen by prompt priority (shape containing
    the positive point, else max-IoU shape against the box interior, else max
    overlap with the soft-mask support, else none). Candidates are the exact
    target and its dilation/erosion by 2 px; quality scores are the true IoU
    of each candidate against the target, quantized to 1e-3 and perturbed by
    seeded uniform noise of amplitude noise_amplitude.
    """

    LOGIT_AMPLITUDE = 8.0
    STAT_FEATURES = 5

    def __init__(self, scene: OracleScene, noise_amplitude: float = 0.05,
                 embed_scale: int = 4, hidden_dim: int = 16):
        if hidden_dim <= self.STAT_FEATURES:
            raise ValueError("hidden_dim too small for the mask statistics")
        self.scene = scene
        self.noise_amplitude = float(noise_amplitude)
        self.embed_scale = int(embed_scale)
        self.hidden_dim = int(hidden_dim)
        rng = np.random.default_rng([scene.seed, 0x51DE])
        q, _ = np.linalg.qr(rng.normal(size=(scene.feature_dim, scene.feature_dim)))
        ids = sorted(sid for sid, _ in scene.shapes)
        self._direction = {0: q[:, 0]}  # 0 = background cluster
        for k, sid in enumerate(ids, start=1):
            self._direction[sid] = q[:, k]
        pad_rng = np.random.default_rng([scene.seed, 0xFAD])
        # slot-coded constants; std 3 keeps one-epoch low-rank training from
        # stalling at the zero-init delta
        self._pad = 3.0 * pad_rng.normal(size=(CANDIDATE_COUNT,
                                               self.hidden_dim - self.STAT_FEATURES))

    @property
    def capabilities(self) -> Capabilities:
        h = max(1, self.scene.height // self.embed_scale)
        w = max(1, self.scene.width // self.embed_scale)
        return Capabilities(candidate_count=CANDIDATE_COUNT,
                            hidden_dim=self.hidden_dim,
                            prompt_grid=(self.scene.width, self.scene.height),
                            embedding_grid=(h, w, self.scene.feature_dim))

    def _owner_at(self, x: int, y: int) -> int:
        owner = 0
        for sid, m in self.scene.shapes:  # later shapes paint over earlier
            if m[y, x]:
                owner = sid
        return owner

    def embed(self, image: np.ndarray | None = None) -> ImageEmbedding:
        sc = self.scene
        if image is not None and image.shape[:2] != (sc.height, sc.width):
            raise ValueError(f"image dims {image.shape[:2]} != scene "
                             f"({sc.height}, {sc.width})")
        gh, gw, c = self.capabilities.embedding_grid
        data = np.empty((gh, gw, c), dtype=np.float64)
        for gy in range(gh):
            sy = min(sc.height - 1, (2 * gy + 1) * sc.height // (2 * gh))
            for gx in range(gw):
                sx = min(sc.width - 1, (2 * gx + 1) * sc.width // (2 * gw))
                data[gy, gx] = self._direction[self._owner_at(sx, sy)]
        return ImageEmbedding(data, sc.width, sc.height)

    def _select_target(self, prompts: PromptSet) -> Optional[np.ndarray]:
        if "point" in prompts.enabled:
            p = prompts.positive
            sid = self._owner_at(p.x, p.y)
            if sid != 0:
                return self.scene.shape_mask(sid)
        if "box" in prompts.enabled and prompts.box is not None:
            box = prompts.box
            region = np.zeros((self.scene.height, self.scene.width), dtype=bool)
            region[box.y0:box.y1, box.x0:box.x1] = True
            best, best_iou = None, 0.0
            for sid, m in self.scene.shapes:
                v = iou(m, region)
                if v > best_iou:
                    best, best_iou = m, v
            if best is not None:
                return best
        if "mask" in prompts.enabled and prompts.soft_mask is not None:
            support = prompts.soft_mask.data > 0
            if support.shape != (self.scene.height, self.scene.width):
                support = resize_nearest(support, self.scene.height, self.scene.width)
            best, best_ov = None, 0
            for sid, m in self.scene.shapes:
                ov = int(np.count_nonzero(m & support))
                if ov > best_ov:
                    best, best_ov = m, ov
            if best is not None:
                return best
        return None

    def _hidden_for(self, mask: np.ndarray, slot: int) -> np.ndarray:
        h, w = mask.shape
        area = int(np.count_nonzero(mask))
        stats = np.zeros(self.STAT_FEATURES)
        if area:
            ys, xs = np.nonzero(mask)
            box = tight_box(mask)
            stats[0] = area / (h * w)
            stats[1] = _perimeter(mask) / area
            stats[2] = xs.mean() / w - 0.5
            stats[3] = ys.mean() / h - 0.5
            stats[4] = area / box.area
        return np.concatenate([stats, self._pad[slot]])

    def predict(self, emb: ImageEmbedding, prompts: PromptSet) -> MultiMaskOutput:
        if not prompts.enabled:
            raise NoPromptError("predict needs at least one enabled prompt")
        sc = self.scene
        target = self._select_target(prompts)
        if target is None:
            empty = np.zeros((sc.height, sc.width), dtype=bool)
            cands = [empty, empty.copy(), empty.copy()]
            true_iou = np.zeros(CANDIDATE_COUNT)
        else:
            cands = [target.copy(), dilate(target, 2), erode(target, 2)]
            true_iou = np.array([iou(c, target) for c in cands])
        rng = np.random.default_rng([sc.seed, 0xD1CE, prompts.digest()])
        noise = rng.uniform(-1.0, 1.0, CANDIDATE_COUNT) * self.noise_amplitude
        iou_pred = np.clip(np.round(true_iou * 1000) / 1000 + noise, 0.0, 1.0)
        masks = np.stack(cands)
        logits = np.where(masks, self.LOGIT_AMPLITUDE, -self.LOGIT_AMPLITUDE)
        hidden = np.stack([self._hidden_for(masks[i], i)
                           for i in range(CANDIDATE_COUNT)])
        return MultiMaskOutput(masks=masks, logits=logits,
                               iou_pred=iou_pred, hidden=hidden)


# ---------------------------------------------------------------------------
# Model manifest (shared schema with the export component)
# ---------------------------------------------------------------------------

MANIFEST_FORMAT_VERSION = 1


class ManifestError(ValueError):
    """Manifest missing, malformed, or version-incompatible."""


@dataclass(frozen=True)
class ModelManifest:
    """Structured description of an exported promptable model."""

    format_version: int
    input_size: int
    pad_rule: str                     # "top_left"
    norm_scale: float                 # pixel divisor applied before mean/std
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    embedding_grid: tuple[int, int, int]   # (h, w, c)
    prompt_grid: tuple[int, int]           # (w, h)
    logit_grid: tuple[int, int]            # (h, w)
    coordinate_transform: str         # "longest_side_scale_top_left_pad"
    hidden_dim: int
    candidate_count: int
    encoder_graph: str
    decoder_graph: str

    @staticmethod
    def from_json_dict(d: dict) -> "ModelManifest":
        try:
            version = int(d["format_version"])
            if version != MANIFEST_FORMAT_VERSION:
                raise ManifestError(f"unsupported manifest version {version}")
            emb = d["embedding_grid"]
            pg = d["prompt_grid"]
            lg = d["logit_grid"]
            norm = d["normalization"]
            m = ModelManifest(
                format_version=version,
                input_size=int(d["input_size"]),
                pad_rule=str(d["pad_rule"]),
                norm_scale=float(norm["scale"]),
                norm_mean=tuple(float(v) for v in norm["mean"]),
                norm_std=tuple(float(v) for v in norm["std"]),
                embedding_grid=(int(emb["h"]), int(emb["w"]), int(emb["c"])),
                prompt_grid=(int(pg["w"]), int(pg["h"])),
                logit_grid=(int(lg["h"]), int(lg["w"])),
                coordinate_transform=str(d["coordinate_transform"]),
                hidden_dim=int(d["hidden_dim"]),
                candidate_count=int(d["candidate_count"]),
                encoder_graph=str(d["graphs"]["encoder"]),
                decoder_graph=str(d["graphs"]["decoder"]),
            )
        except (KeyError, TypeError) as e:
            raise ManifestError(f"malformed manifest: {e}") from e
        if min(m.input_size, m.hidden_dim, *m.embedding_grid, *m.prompt_grid,
               *m.logit_grid) <= 0:
            raise ManifestError("manifest dims must be positive")
        if m.candidate_count != CANDIDATE_COUNT:
            raise ManifestError(f"candidate_count must be {CANDIDATE_COUNT}")
        return m

    def to_json_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "input_size": self.input_size,
            "pad_rule": self.pad_rule,
            "normalization": {"scale": self.norm_scale,
                              "mean": list(self.norm_mean),
                              "std": list(self.norm_std)},
            "embedding_grid": {"h": self.embedding_grid[0],
                               "w": self.embedding_grid[1],
                               "c": self.embedding_grid[2]},
            "prompt_grid": {"w": self.prompt_grid[0], "h": self.prompt_grid[1]},
            "logit_grid": {"h": self.logit_grid[0], "w": self.logit_grid[1]},
            "coordinate_transform": self.coordinate_transform,
            "hidden_dim": self.hidden_dim,
            "candidate_count": self.candidate_count,
            "graphs": {"encoder": self.encoder_graph, "decoder": self.decoder_graph},
        }


def load_manifest(path: str | Path) -> ModelManifest:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    return ModelManifest.from_json_dict(payload)
