"""End-to-end refinement: excavate prompts, predict, select, iterate, recompose.

One image embedding is computed per image and shared across all of its
instance refinements; every step below is a pure function of its inputs, so
results are identical regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .adaption import LoraAdaptor, adapted_scores
from .metrics import iou
from .prompts import ExcavationConfig, ImageEmbedding, PromptSet, excavate
from .rasters import as_mask
from .segmenter import MultiMaskOutput, PromptedSegmenter
from .stm import MergeConfig, semantic_targets

Selector = Literal["predicted", "adapted", "coarse_iou", "gt_iou"]
SELECTORS = ("predicted", "adapted", "coarse_iou", "gt_iou")


class SelectorContextError(ValueError):
    """A selector was asked to run without the context it needs."""


@dataclass(frozen=True)
class RefineConfig:
    excavation: ExcavationConfig = ExcavationConfig()
    merge: MergeConfig = MergeConfig()
    iterations: int = 1
    selector: str = "predicted"
    prompts_enabled: frozenset = frozenset({"point", "box", "mask"})

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")


@dataclass
class IterationRecord:
    prompts: PromptSet
    output: MultiMaskOutput
    chosen_index: int
    chosen_score: float


@dataclass
class RefineResult:
    refined: np.ndarray
    chosen_index: Optional[int]
    per_iteration: list[IterationRecord] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def chosen_score(self) -> float:
        if not self.per_iteration:
            return 0.0
        return self.per_iteration[-1].chosen_score


def selector_scores(out: MultiMaskOutput, selector: str, *,
                    coarse: np.ndarray | None = None,
                    gt: np.ndarray | None = None,
                    adaptor: LoraAdaptor | None = None) -> np.ndarray:
    if selector == "predicted":
        return np.asarray(out.iou_pred, dtype=np.float64)
    if selector == "adapted":
        if adaptor is None:
            raise SelectorContextError("selector 'adapted' needs an adaptor")
        return adapted_scores(out.hidden, out.iou_pred, adaptor)
    if selector == "coarse_iou":
        if coarse is None:
            raise SelectorContextError("selector 'coarse_iou' needs the coarse mask")
        return np.array([iou(m, coarse) for m in out.masks])
    if selector == "gt_iou":
        if gt is None:
            raise SelectorContextError("selector 'gt_iou' needs ground truth")
        return np.array([iou(m, gt) for m in out.masks])
    raise ValueError(f"unknown selector {selector!r}")


def select_best(out: MultiMaskOutput, selector: str, *,
                coarse: np.ndarray | None = None,
                gt: np.ndarray | None = None,
                adaptor: LoraAdaptor | None = None) -> int:
    """Argmax of the selector's scores; ties go to the lowest index."""
    scores = selector_scores(out, selector, coarse=coarse, gt=gt, adaptor=adaptor)
    return int(np.argmax(scores))


def refine_instance(backend: PromptedSegmenter, emb: ImageEmbedding,
                    coarse: np.ndarray, cfg: RefineConfig = RefineConfig(), *,
                    gt: np.ndarray | None = None,
                    adaptor: LoraAdaptor | None = None) -> RefineResult:
    """Refine one coarse instance mask.

    Each iteration re-excavates all enabled prompts from the current mask
    (the soft mask is regenerated, not carried over as logits) and feeds the
    chosen candidate into the next iteration. An empty coarse mask passes
    through untouched with a warning diagnostic; a selected empty mask stops
    the cascade early (later iterations would be passthrough anyway).

    The coarse_iou selector compares candidates against the mask the current
    iteration's prompts were mined from.
    """
    current = as_mask(coarse)
    result = RefineResult(refined=current, chosen_index=None)
    if not current.any():
        result.diagnostics["warning"] = "empty coarse mask: refinement skipped"
        if gt is not None:
            result.diagnostics["coarse_iou_vs_gt"] = iou(current, gt)
            result.diagnostics["refined_iou_vs_gt"] = iou(current, gt)
        return result
    grid = backend.capabilities.prompt_grid
    for _ in range(cfg.iterations):
        prompts = excavate(current, emb, cfg.excavation,
                           enabled=cfg.prompts_enabled, prompt_grid=grid)
        out = backend.predict(emb, prompts)
        idx = select_best(out, cfg.selector, coarse=current, gt=gt, adaptor=adaptor)
        scores = selector_scores(out, cfg.selector, coarse=current, gt=gt,
                                 adaptor=adaptor)
        result.per_iteration.append(
            IterationRecord(prompts, out, idx, float(scores[idx])))
        current = out.masks[idx]
        if not current.any():
            result.diagnostics["warning"] = "selected an empty mask: cascade stopped"
            break
    result.refined = current
    result.chosen_index = result.per_iteration[-1].chosen_index
    if gt is not None:
        result.diagnostics["coarse_iou_vs_gt"] = iou(as_mask(coarse), gt)
        result.diagnostics["refined_iou_vs_gt"] = iou(current, gt)
    return result


def refine_semantic(backend: PromptedSegmenter, image: np.ndarray | None,
                    semantic: np.ndarray, cfg: RefineConfig = RefineConfig(), *,
                    adaptor: LoraAdaptor | None = None,
                    emb: ImageEmbedding | None = None) -> np.ndarray:
    """Refine a multi-class label mask class by class.

    Each class is split-then-merged into targets; targets below the merge
    noise floor pass through unrefined (score 0.0). Refined masks are painted
    onto a fresh canvas; a pixel claimed by several classes goes to the class
    whose claiming target has the higher selected score, ties to the lower
    class id. Pixels of the input not claimed by any target become background.
    """
    lab = np.asarray(semantic)
    if emb is None:
        emb = backend.embed(image)
    targets = semantic_targets(lab, cfg.merge)
    score_map = np.full(lab.shape, -np.inf)
    out = np.zeros_like(lab, dtype=np.int32)
    for cls in sorted(targets):
        for target in targets[cls]:
            if int(target.sum()) < cfg.merge.min_region_px:
                painted, score = target, 0.0
            else:
                r = refine_instance(backend, emb, target, cfg, adaptor=adaptor)
                painted, score = r.refined, r.chosen_score
            if not painted.any():
                continue
            claim = painted & (score_map < score)  # earlier class keeps ties
            out[claim] = cls
            score_map[claim] = score
    return out
