"""Export a checkpoint to the bundle the neural backend consumes:
encoder.onnx + decoder.onnx + manifest.json + golden fixtures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .fixtures import build_fixtures
from .graphs import build_decoder_graph, build_encoder_graph
from .model import (
    CANDIDATES,
    EMBED_CHANNELS,
    EMBED_GRID,
    HIDDEN_DIM,
    INPUT_SIZE,
    LOGIT_GRID,
    NORM_MEAN,
    NORM_SCALE,
    NORM_STD,
    PROMPT_GRID,
    PromptableModel,
    normalize_image,
)

FIXTURE_TOLERANCE = 1e-3
MANIFEST_FORMAT_VERSION = 1


class ExportError(RuntimeError):
    pass


def build_manifest() -> dict:
    return {
        "format_version": MANIFEST_FORMAT_VERSION,
        "input_size": INPUT_SIZE,
        "pad_rule": "top_left",
        "normalization": {"scale": NORM_SCALE, "mean": list(NORM_MEAN),
                          "std": list(NORM_STD)},
        "embedding_grid": {"h": EMBED_GRID, "w": EMBED_GRID, "c": EMBED_CHANNELS},
        "prompt_grid": {"w": PROMPT_GRID, "h": PROMPT_GRID},
        "logit_grid": {"h": LOGIT_GRID, "w": LOGIT_GRID},
        "coordinate_transform": "longest_side_scale_top_left_pad",
        "hidden_dim": HIDDEN_DIM,
        "candidate_count": CANDIDATES,
        "graphs": {"encoder": "encoder.onnx", "decoder": "decoder.onnx"},
    }


def _replay_native(model: PromptableModel, bundle: dict) -> None:
    """Self-consistency: stored references must match a fresh forward pass."""
    with torch.no_grad():
        emb = model.encoder(normalize_image(bundle["image"])).numpy()
        if not np.array_equal(emb, bundle["embedding"]):
            raise ExportError("fixture embedding does not replay bit-identically")
        logits, iou_pred, hidden = model.decoder(
            torch.from_numpy(bundle["embedding"]),
            *(torch.from_numpy(bundle[k]) for k in
              ("point_coords", "point_labels", "box_coords", "box_flag",
               "mask_prompt", "mask_flag")))
    for name, got in (("logits", logits), ("iou_pred", iou_pred),
                      ("hidden", hidden)):
        if not np.array_equal(got.numpy(), bundle[name]):
            raise ExportError(f"fixture {name} does not replay bit-identically")


def export(checkpoint: str | Path, out_dir: str | Path,
           expected_sha256: str | None = None, fixture_seed: int = 0) -> dict:
    """Write the full bundle; returns a summary of what was written."""
    model = load_checkpoint(checkpoint, expected_sha256)
    out = Path(out_dir)
    fixtures_dir = out / "fixtures"
    fixtures_dir.mkdir(parents=True, exist_ok=True)

    encoder_bytes = build_encoder_graph(model)
    decoder_bytes = build_decoder_graph(model)
    if not encoder_bytes or not decoder_bytes:
        raise ExportError("graph serialization produced no bytes")
    (out / "encoder.onnx").write_bytes(encoder_bytes)
    (out / "decoder.onnx").write_bytes(decoder_bytes)

    manifest = build_manifest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")

    bundles = build_fixtures(model, seed=fixture_seed)
    names = []
    for i, bundle in enumerate(bundles):
        _replay_native(model, bundle)
        name = f"fixture_{i:03d}.npz"
        np.savez(fixtures_dir / name, **bundle)
        names.append(name)
    (fixtures_dir / "fixtures.json").write_text(json.dumps(
        {"fixtures": names, "tolerance": FIXTURE_TOLERANCE}, indent=2) + "\n")

    return {"out_dir": str(out), "fixtures": names,
            "encoder_bytes": len(encoder_bytes),
            "decoder_bytes": len(decoder_bytes)}
