"""Checkpoint creation and hash pinning.

The pin is a content hash over the parameter tensors (sorted names, dtype,
shape, raw bytes), not over the file: torch's zip container embeds a random
serialization id, so file bytes differ across identical saves.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .model import PromptableModel, build_model


class CheckpointError(RuntimeError):
    pass


class CheckpointHashError(CheckpointError):
    pass


def state_sha256(state_dict: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(state_dict):
        t = state_dict[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def make_checkpoint(seed: int, path: str | Path) -> str:
    """Write a seeded checkpoint plus its pins file; returns the content hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = build_model(seed)
    torch.save(model.state_dict(), path)
    digest = state_sha256(model.state_dict())
    pins = {"sha256": digest, "seed": seed}
    path.with_suffix(path.suffix + ".pins.json").write_text(
        json.dumps(pins, indent=2) + "\n")
    return digest


def pinned_sha256(checkpoint: Path) -> str:
    pins_path = checkpoint.with_suffix(checkpoint.suffix + ".pins.json")
    if not pins_path.is_file():
        raise CheckpointHashError(f"no pins file next to checkpoint: {pins_path}")
    return json.loads(pins_path.read_text())["sha256"]


def load_checkpoint(checkpoint: str | Path,
                    expected_sha256: str | None = None) -> PromptableModel:
    """Load a checkpoint after verifying its pinned content hash."""
    checkpoint = Path(checkpoint)
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    expected = expected_sha256 or pinned_sha256(checkpoint)
    try:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {checkpoint}: {e}") from e
    actual = state_sha256(state)
    if actual != expected:
        raise CheckpointHashError(
            f"checkpoint hash mismatch: expected {expected}, got {actual}")
    model = PromptableModel()
    model.load_state_dict(state)
    return model.eval()
