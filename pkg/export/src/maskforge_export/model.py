"""Desk-scale promptable segmentation model (the export source).

Encoder: four stride-2 convs, a 16x downsampled embedding of the 128x128
input. Decoder: sparse prompts (clicks, box, flags) go through a small MLP;
the soft-mask prompt is convolved down to the embedding grid and summed in;
a conv trunk feeds both the K=3 logit head and the quality head, whose
penultimate activations are exposed so a low-rank delta can be trained on
the scores outside the graph.

The forward passes are written op-for-op the way graphs.py serializes them.
"""

from __future__ import annotations

import torch
import torch.nn as nn

INPUT_SIZE = 128
EMBED_GRID = 8
EMBED_CHANNELS = 32
PROMPT_GRID = 32
LOGIT_GRID = 16
HIDDEN_DIM = 16
CANDIDATES = 3
NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.5, 0.5, 0.5)
NORM_SCALE = 255.0


class Encoder(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 24, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(24, 32, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(32, EMBED_CHANNELS, 3, stride=2, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.conv1(image))
        x = torch.relu(self.conv2(x))
        x = torch.relu(self.conv3(x))
        return self.conv4(x)


class Decoder(nn.Module):
    def __init__(self):
        super().__init__()
        self.sparse1 = nn.Linear(12, EMBED_CHANNELS)
        self.sparse2 = nn.Linear(EMBED_CHANNELS, EMBED_CHANNELS)
        self.mask1 = nn.Conv2d(1, 8, 3, stride=2, padding=1)
        self.mask2 = nn.Conv2d(8, EMBED_CHANNELS, 3, stride=2, padding=1)
        self.trunk1 = nn.Conv2d(EMBED_CHANNELS, EMBED_CHANNELS, 3, padding=1)
        self.trunk2 = nn.Conv2d(EMBED_CHANNELS, EMBED_CHANNELS, 3, padding=1)
        self.up = nn.ConvTranspose2d(EMBED_CHANNELS, 16, 2, stride=2)
        self.logit_head = nn.Conv2d(16, CANDIDATES, 1)
        self.quality1 = nn.Linear(2 * EMBED_CHANNELS, 48)
        self.quality2 = nn.Linear(48, CANDIDATES * HIDDEN_DIM)
        self.score_w = nn.Parameter(torch.empty(HIDDEN_DIM, 1))
        self.score_b = nn.Parameter(torch.empty(1))

    def forward(self, embedding, point_coords, point_labels, box_coords,
                box_flag, mask_prompt, mask_flag):
        sparse_in = torch.cat([
            point_coords.reshape(1, 4) * (1.0 / INPUT_SIZE),
            point_labels,
            box_coords * (1.0 / INPUT_SIZE),
            box_flag,
            mask_flag,
        ], dim=1)
        sparse = self.sparse2(torch.relu(self.sparse1(sparse_in)))

        dense = torch.relu(self.mask1(mask_prompt))
        dense = self.mask2(dense) * mask_flag

        fused = embedding + dense + sparse.reshape(1, EMBED_CHANNELS, 1, 1)
        trunk = torch.relu(self.trunk1(fused))
        trunk = torch.relu(self.trunk2(trunk))

        logits = self.logit_head(torch.relu(self.up(trunk)))

        pooled = trunk.mean(dim=(2, 3), keepdim=True).reshape(1, EMBED_CHANNELS)
        q_in = torch.cat([pooled, sparse], dim=1)
        hidden = torch.relu(self.quality2(torch.relu(self.quality1(q_in))))
        hidden = hidden.reshape(1, CANDIDATES, HIDDEN_DIM)
        iou_pred = torch.sigmoid((hidden @ self.score_w + self.score_b)
                                 .reshape(1, CANDIDATES))
        return logits, iou_pred, hidden


class PromptableModel(nn.Module):
    def __init__(self):
        super().__init__()
        self.encoder = Encoder()
        self.decoder = Decoder()


def build_model(seed: int = 0) -> PromptableModel:
    """Seeded weights; no training, the export pipeline only needs fixed,
    reproducible numerics."""
    torch.manual_seed(seed)
    model = PromptableModel()
    with torch.no_grad():
        nn.init.normal_(model.decoder.score_w, std=0.3)
        nn.init.zeros_(model.decoder.score_b)
    return model.eval()


def normalize_image(image_u8) -> torch.Tensor:
    """uint8 (S, S, 3) -> (1, 3, S, S), matching the manifest's rule."""
    x = torch.from_numpy(image_u8.copy()).float() / NORM_SCALE
    mean = torch.tensor(NORM_MEAN)
    std = torch.tensor(NORM_STD)
    x = (x - mean) / std
    return x.permute(2, 0, 1).unsqueeze(0).contiguous()
