"""maskforge: refine coarse segmentation masks by mining noise-tolerant
prompts for a promptable segmenter and picking the best of its candidates."""

__version__ = "0.1.0"

from .adaption import (
    LoraAdaptor,
    TrainConfig,
    TrainSample,
    adapted_scores,
    build_training_set,
    load_adaptor,
    ranking_loss,
    ranking_loss_grad,
    save_adaptor,
    train,
)
from .defects import DefectSpec, simulate_defects
from .metrics import EvalReport, boundary_iou, iou, miou, top1_accuracy
from .pipeline import (
    RefineConfig,
    RefineResult,
    refine_instance,
    refine_semantic,
    select_best,
)
from .prompts import (
    ExcavationConfig,
    ImageEmbedding,
    PromptSet,
    SoftMask,
    elastic_box,
    excavate,
    gaussian_mask,
    negative_point,
    positive_point,
    query_embedding,
    similarity_map,
)
from .rasters import (
    Box,
    Point,
    RleMask,
    connected_components,
    dilate,
    distance_transform,
    erode,
    morphology,
    resize,
    rle_decode,
    rle_encode,
    tight_box,
)
from .segmenter import (
    Capabilities,
    MockSegmenter,
    ModelManifest,
    MultiMaskOutput,
    OracleScene,
    PromptedSegmenter,
    load_manifest,
    load_scene,
    save_scene,
)
from .stm import MergeConfig, RegionSet, merge, semantic_targets, split

__all__ = [name for name in dir() if not name.startswith("_")]
