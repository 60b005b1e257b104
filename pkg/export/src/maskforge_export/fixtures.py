"""Golden fixture generation: seeded inputs plus native-model outputs.

Each fixture bundles a 128x128 uint8 image, the decoder prompt feeds, and
the reference embedding/logits/iou_pred/hidden computed by the torch model.
The decoder references are computed from the stored embedding, matching how
the parity check replays the two graphs in isolation.
"""

from __future__ import annotations

import numpy as np
import torch

from .model import INPUT_SIZE, PROMPT_GRID, PromptableModel, normalize_image


def _synthetic_image(rng: np.random.Generator) -> np.ndarray:
    """Blocky color field with noise, enough structure to light up convs."""
    base = rng.integers(0, 256, size=(8, 8, 3))
    img = np.repeat(np.repeat(base, INPUT_SIZE // 8, axis=0),
                    INPUT_SIZE // 8, axis=1).astype(np.float64)
    img += rng.normal(0, 12, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def _gaussian_prompt(rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(8, PROMPT_GRID - 8, size=2)
    ys = np.arange(PROMPT_GRID)[:, None] - cy
    xs = np.arange(PROMPT_GRID)[None, :] - cx
    gm = 15.0 * np.exp(-(ys * ys + xs * xs) / rng.uniform(40, 120))
    return gm.astype(np.float32)[None, None]


def _feeds(rng: np.random.Generator, kind: str) -> dict[str, np.ndarray]:
    coords = np.zeros((1, 2, 2), dtype=np.float32)
    labels = np.full((1, 2), -1.0, dtype=np.float32)
    coords[0, 0] = rng.uniform(10, INPUT_SIZE - 10, size=2)
    labels[0, 0] = 1.0
    box = np.zeros((1, 4), dtype=np.float32)
    box_flag = np.zeros((1, 1), dtype=np.float32)
    mask = np.zeros((1, 1, PROMPT_GRID, PROMPT_GRID), dtype=np.float32)
    mask_flag = np.zeros((1, 1), dtype=np.float32)
    if kind in ("point_box", "all"):
        x0, y0 = rng.uniform(5, INPUT_SIZE / 2, size=2)
        box[0] = (x0, y0, x0 + rng.uniform(20, 50), y0 + rng.uniform(20, 50))
        box_flag[0, 0] = 1.0
    if kind == "all":
        coords[0, 1] = rng.uniform(10, INPUT_SIZE - 10, size=2)
        labels[0, 1] = 0.0
        mask[:] = _gaussian_prompt(rng)
        mask_flag[0, 0] = 1.0
    return {"point_coords": coords, "point_labels": labels,
            "box_coords": box, "box_flag": box_flag,
            "mask_prompt": mask, "mask_flag": mask_flag}


FIXTURE_KINDS = ("point", "point_box", "all")


def build_fixtures(model: PromptableModel, seed: int = 0) -> list[dict[str, np.ndarray]]:
    rng = np.random.default_rng([seed, 0xF1B])
    out = []
    with torch.no_grad():
        for kind in FIXTURE_KINDS:
            image = _synthetic_image(rng)
            embedding = model.encoder(normalize_image(image)).numpy()
            feeds = _feeds(rng, kind)
            logits, iou_pred, hidden = model.decoder(
                torch.from_numpy(embedding),
                *(torch.from_numpy(feeds[k]) for k in
                  ("point_coords", "point_labels", "box_coords", "box_flag",
                   "mask_prompt", "mask_flag")))
            out.append({"image": image, "embedding": embedding, **feeds,
                        "logits": logits.numpy(),
                        "iou_pred": iou_pred.numpy(),
                        "hidden": hidden.numpy()})
    return out
