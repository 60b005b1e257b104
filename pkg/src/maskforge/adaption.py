"""Self-boosted adaptation of the quality-ranking head.

A low-rank delta on the backend's quality scores is trained with a pairwise
margin ranking loss whose supervision comes from each candidate's IoU against
the coarse mask, so no extra annotation is needed. The base head stays frozen;
score'_i = base_i + scale * B @ (A @ h_i) where h_i is the quality head's
penultimate activation for candidate i. Gradients are written out by hand and
optimized with plain SGD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import iou
from .prompts import ExcavationConfig, ImageEmbedding, excavate
from .rasters import as_mask

ADAPTOR_FORMAT_VERSION = 1


class AdaptorFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LoraAdaptor:
    """Rank-r delta applied per candidate to the frozen base quality score."""

    A: np.ndarray          # (r, d_h)
    B: np.ndarray          # (1, r)
    scale: float = 1.0

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.shape != (1, self.A.shape[0]):
            raise ValueError(f"bad adaptor shapes A{self.A.shape} B{self.B.shape}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("adaptor weights must be finite")
        if self.A.shape[0] > self.A.shape[1]:
            raise ValueError("rank must not exceed hidden dim")
        self.A.setflags(write=False)
        self.B.setflags(write=False)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.A.shape[1]

    @staticmethod
    def zero(hidden_dim: int, rank: int = 4, scale: float = 1.0) -> "LoraAdaptor":
        return LoraAdaptor(np.zeros((rank, hidden_dim)), np.zeros((1, rank)), scale)


def save_adaptor(adaptor: LoraAdaptor, path: str | Path):
    payload = {
        "version": ADAPTOR_FORMAT_VERSION,
        "d_h": adaptor.hidden_dim,
        "r": adaptor.rank,
        "scale": adaptor.scale,
        "A": adaptor.A.ravel().tolist(),   # row-major
        "B": adaptor.B.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_adaptor(path: str | Path) -> LoraAdaptor:
    try:
        payload = json.loads(Path(path).read_text())
        if payload["version"] != ADAPTOR_FORMAT_VERSION:
            raise AdaptorFormatError(f"unsupported adaptor version {payload['version']}")
        r, d_h = int(payload["r"]), int(payload["d_h"])
        a = np.asarray(payload["A"], dtype=np.float64).reshape(r, d_h)
        b = np.asarray(payload["B"], dtype=np.float64).reshape(1, r)
        return LoraAdaptor(a, b, float(payload["scale"]))
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        if isinstance(e, AdaptorFormatError):
            raise
        raise AdaptorFormatError(f"malformed adaptor file {path}: {e}") from e


@dataclass(frozen=True, eq=False)
class TrainSample:
    """Hidden vectors and base scores for one prediction's K candidates, with
    the index of the candidate closest to the coarse mask."""

    hidden: np.ndarray       # (K, d_h)
    base_scores: np.ndarray  # (K,)
    best_index: int

    def __post_init__(self):
        if not 0 <= self.best_index < self.hidden.shape[0]:
            raise ValueError("best_index out of range")
        if self.base_scores.shape != (self.hidden.shape[0],):
            raise ValueError("base_scores/hidden candidate mismatch")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch: int = 5
    epochs: int = 1
    lr_drop_steps: tuple[int, ...] = (60, 100)
    margin: float = 0.02
    rank: int = 4
    scale: float = 1.0
    seed: int = 0
    init_std: float = 0.01
    scale_drop_steps: bool = False
    # steps-per-epoch the default schedule was written for (585 samples / batch 5)
    reference_total_steps: int = 117

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


def adapted_scores(hidden: np.ndarray, base_scores: np.ndarray,
                   adaptor: LoraAdaptor) -> np.ndarray:
    """base + scale * B(Ah) per candidate."""
    h = np.asarray(hidden, dtype=np.float64)
    base = np.asarray(base_scores, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != adaptor.hidden_dim:
        raise ValueError(f"hidden dims {h.shape} incompatible with adaptor "
                         f"d_h={adaptor.hidden_dim}")
    if base.shape != (h.shape[0],):
        raise ValueError("base_scores/hidden candidate mismatch")
    delta = adaptor.scale * (h @ adaptor.A.T @ adaptor.B.T).ravel()
    return base + delta


def ranking_loss(scores: Sequence[float], best_index: int, margin: float) -> float:
    """sum_{i != j} max(0, x_i - x_j + m) with j the coarse-best candidate."""
    x = np.asarray(scores, dtype=np.float64)
    if not 0 <= best_index < x.size:
        raise ValueError("best_index out of range")
    hinge = x - x[best_index] + margin
    hinge[best_index] = 0.0
    return float(np.maximum(hinge, 0.0).sum())


def ranking_loss_grad(scores: Sequence[float], best_index: int, margin: float) -> np.ndarray:
    """Subgradient of ranking_loss w.r.t. the scores (0 at hinge kinks)."""
    x = np.asarray(scores, dtype=np.float64)
    if not 0 <= best_index < x.size:
        raise ValueError("best_index out of range")
    active = x - x[best_index] + margin > 0
    active[best_index] = False
    g = active.astype(np.float64)
    g[best_index] = -float(active.sum())
    return g


def build_training_set(backend, items: Iterable[tuple[ImageEmbedding, np.ndarray]],
                       cfg: ExcavationConfig = ExcavationConfig(),
                       modes: Sequence[str] = ("point", "box", "mask"),
                       ) -> list[TrainSample]:
    """One sample per (instance, single-prompt mode).

    For each coarse mask and each mode, run the backend and label the sample
    with the candidate maximizing IoU against the coarse mask. Instances with
    empty coarse masks and samples whose candidates all tie are skipped.
    """
    samples = []
    pg = backend.capabilities.prompt_grid
    for emb, coarse in items:
        m = as_mask(coarse)
        if not m.any():
            continue
        for mode in modes:
            prompts = excavate(m, emb, cfg, enabled={mode}, prompt_grid=pg)
            out = backend.predict(emb, prompts)
            ious = np.array([iou(cand, m) for cand in out.masks])
            if np.all(ious == ious[0]):
                continue
            samples.append(TrainSample(hidden=np.array(out.hidden),
                                       base_scores=np.array(out.iou_pred),
                                       best_index=int(np.argmax(ious))))
    return samples


def _lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    drops = cfg.lr_drop_steps
    if cfg.scale_drop_steps and total_steps > 0:
        factor = total_steps / cfg.reference_total_steps
        drops = tuple(max(1, int(round(d * factor))) for d in drops)
    return cfg.lr * (0.1 ** sum(1 for d in drops if step > d))


def train(samples: Sequence[TrainSample], cfg: TrainConfig = TrainConfig()) -> LoraAdaptor:
    """SGD on the low-rank delta, base head frozen.

    A starts from a small seeded Gaussian and B from zero, so the delta (and
    hence the ranking) starts exactly at the unadapted model. Shuffling, the
    per-batch mean loss, and the step-indexed lr drops are all seeded and
    deterministic. epochs=0 returns the zero-delta initial adaptor.
    """
    if not samples:
        raise ValueError("training set is empty")
    d_h = samples[0].hidden.shape[1]
    rng = np.random.default_rng(cfg.seed)
    a = rng.normal(0.0, cfg.init_std, size=(cfg.rank, d_h))
    b = np.zeros((1, cfg.rank))
    total_steps = cfg.epochs * ((len(samples) + cfg.batch - 1) // cfg.batch)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch):
            batch = [samples[i] for i in order[start:start + cfg.batch]]
            step += 1
            lr = _lr_at(step, cfg, total_steps)
            grad_a = np.zeros_like(a)
            grad_b = np.zeros_like(b)
            for s in batch:
                h = s.hidden.astype(np.float64)
                x = s.base_scores + cfg.scale * (h @ a.T @ b.T).ravel()
                g = ranking_loss_grad(x, s.best_index, cfg.margin)
                if not g.any():
                    continue
                gs = cfg.scale * g
                # d loss / dB = sum_i gs_i * (A h_i)^T ; d loss / dA = B^T (sum_i gs_i h_i^T)
                grad_b += (gs @ (h @ a.T))[None, :]
                grad_a += b.T @ (gs @ h)[None, :]
            a -= lr * grad_a / len(batch)
            b -= lr * grad_b / len(batch)
    return LoraAdaptor(a, b, cfg.scale)


def top1_on_samples(samples: Sequence[TrainSample],
                    adaptor: Optional[LoraAdaptor] = None) -> float:
    """Fraction of samples whose (adapted) argmax hits best_index."""
    if not samples:
        raise ValueError("no samples")
    hits = 0
    for s in samples:
        scores = (s.base_scores if adaptor is None
                  else adapted_scores(s.hidden, s.base_scores, adaptor))
        hits += int(np.argmax(scores)) == s.best_index
    return hits / len(samples)
