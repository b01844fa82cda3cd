"""
Linear projection heads trained with a symmetric contrastive loss over the
penultimate-layer features of both modalities.
"""
from dataclasses import dataclass, field
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
import torch
from torch import nn
import torch.nn.functional as F

from src.base import StoreError, TrainingError
from src.store.feature_store import BaseStore, Modality
from src.utils.logger_config import logger

SCORE_CHUNK = 65_536


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    temperature: float = Field(0.1, gt=0, description="Softmax temperature tau")
    batch_size: int = Field(1024, ge=1, description="Clips per mini-batch (N_b)")
    epochs: int = Field(3, ge=0)
    lr: float = Field(2e-4, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    amsgrad: bool = True
    out_dim: int = Field(128, ge=1)
    warmup_epochs: int = Field(0, ge=0, description="Linear warm-up epochs before linear decay")
    stratified: bool = Field(False, description="One clip per class per batch; needs labels")
    seed: int = 0


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int = 128, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, dtype=torch.float64)
        bound = 1.0 / math.sqrt(in_dim)
        with torch.no_grad():
            self.linear.weight.uniform_(-bound, bound, generator=generator)
            self.linear.bias.uniform_(-bound, bound, generator=generator)

    @property
    def in_dim(self) -> int:
        return self.linear.in_features

    @property
    def out_dim(self) -> int:
        return self.linear.out_features

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features)


@dataclass
class ContrastiveHeads:
    audio: ProjectionHead
    visual: ProjectionHead
    config: TrainConfig
    loss_history: List[float] = field(default_factory=list)

    def __iter__(self):
        yield self.audio
        yield self.visual


def _as_tensor(values) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


def _unit_rows(z: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(z, dim=1, keepdim=True)
    if bool((norms.detach() == 0).any()):
        raise TrainingError("zero-norm embedding")
    return z / norms


def contrastive_loss(zv, za, temperature: float = 0.1, reduction: str = "sum") -> torch.Tensor:
    """
    Symmetric contrastive loss with cosine similarity.

    Row i of ``zv`` and ``za`` is a positive pair; every other row of the
    opposite modality is a negative. For each i both l(v_i, a_i) and
    l(a_i, v_i) are computed. ``reduction="sum"`` adds them over the batch,
    ``"mean"`` divides that sum by the batch size.
    """
    zv, za = _as_tensor(zv), _as_tensor(za)
    if zv.ndim != 2 or zv.shape != za.shape or zv.shape[0] < 1:
        raise TrainingError(f"embedding batches must be matching (N, d) arrays, got {tuple(zv.shape)} and {tuple(za.shape)}")
    if temperature <= 0:
        raise TrainingError("temperature must be positive")
    if reduction not in ("sum", "mean"):
        raise TrainingError(f"unknown reduction {reduction!r}")

    logits = _unit_rows(zv) @ _unit_rows(za).T / temperature
    visual_to_audio = -torch.diagonal(F.log_softmax(logits, dim=1))
    audio_to_visual = -torch.diagonal(F.log_softmax(logits.T, dim=1))
    total = (visual_to_audio + audio_to_visual).sum()
    if reduction == "mean":
        total = total / zv.shape[0]
    return total


def _penultimate(store: BaseStore):
    manifest = store.manifest
    try:
        audio_key = manifest.penultimate(Modality.AUDIO)
        visual_key = manifest.penultimate(Modality.VISUAL)
    except StoreError as e:
        raise TrainingError(f"store lacks penultimate features for both modalities: {e}") from e
    return (
        store.layer_matrix(audio_key.modality, audio_key.layer),
        store.layer_matrix(visual_key.modality, visual_key.layer),
    )


def _rows(matrix, idx: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(matrix[idx], dtype=np.float64))


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator, labels: Optional[np.ndarray]) -> List[np.ndarray]:
    if labels is None:
        order = rng.permutation(n)
        return [np.sort(order[i:i + batch_size]) for i in range(0, n, batch_size)]

    # One clip of every class per batch; small classes are cycled.
    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    n_batches = math.ceil(n / len(classes))
    return [np.sort(np.array([m[j % len(m)] for m in members])) for j in range(n_batches)]


def _schedule(config: TrainConfig, steps_per_epoch: int):
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if warmup == 0:
        return lambda step: 1.0

    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total - step) / max(1, total - warmup))

    return factor


def init_heads(audio_dim: int, visual_dim: int, config: TrainConfig) -> ContrastiveHeads:
    generator = torch.Generator().manual_seed(config.seed)
    audio = ProjectionHead(audio_dim, config.out_dim, generator)
    visual = ProjectionHead(visual_dim, config.out_dim, generator)
    return ContrastiveHeads(audio=audio, visual=visual, config=config)


def train_heads(store: BaseStore, config: TrainConfig, labels=None) -> ContrastiveHeads:
    """
    Fit both heads by minimising the mean contrastive loss over mini-batches.
    Zero epochs returns the seeded initialisation.
    """
    audio_feats, visual_feats = _penultimate(store)
    n = len(store)
    heads = init_heads(audio_feats.shape[1], visual_feats.shape[1], config)
    if config.epochs == 0 or n == 0:
        return heads

    if config.stratified:
        if labels is None:
            raise TrainingError("stratified batches need class labels")
        labels = np.asarray(labels)
        if len(labels) != n:
            raise TrainingError(f"{len(labels)} labels for {n} clips")
    else:
        labels = None

    rng = np.random.default_rng(config.seed)
    params = list(heads.audio.parameters()) + list(heads.visual.parameters())
    optimizer = torch.optim.Adam(params, lr=config.lr, betas=config.betas, amsgrad=config.amsgrad)
    steps_per_epoch = len(_epoch_batches(n, config.batch_size, np.random.default_rng(0), labels))
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, _schedule(config, steps_per_epoch))

    for epoch in range(config.epochs):
        losses = []
        for step, idx in enumerate(_epoch_batches(n, config.batch_size, rng, labels)):
            loss = contrastive_loss(
                heads.visual(_rows(visual_feats, idx)),
                heads.audio(_rows(audio_feats, idx)),
                config.temperature,
                reduction="mean",
            )
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {step + 1} (lr={scheduler.get_last_lr()[0]:.3g})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(float(loss.detach()))
        heads.loss_history.append(float(np.mean(losses)))
        logger.info(f"Contrastive epoch {epoch + 1}/{config.epochs}: mean loss {heads.loss_history[-1]:.5f}")

    return heads


def embed(head: ProjectionHead, features) -> np.ndarray:
    with torch.no_grad():
        return head(_as_tensor(features)).numpy()


def score_pairs(heads: ContrastiveHeads, store: BaseStore, chunk: int = SCORE_CHUNK) -> np.ndarray:
    """Cosine similarity between the projected visual and audio features of each clip."""
    audio_feats, visual_feats = _penultimate(store)
    n = len(store)
    scores = np.empty(n, dtype=np.float64)
    with torch.no_grad():
        for start in range(0, n, chunk):
            idx = np.arange(start, min(n, start + chunk))
            zv = _unit_rows(heads.visual(_rows(visual_feats, idx)))
            za = _unit_rows(heads.audio(_rows(audio_feats, idx)))
            scores[start:start + len(idx)] = (zv * za).sum(dim=1).numpy()
    return np.clip(scores, -1.0, 1.0)


def save_heads(heads: ContrastiveHeads, path):
    torch.save(
        {
            "audio": heads.audio.state_dict(),
            "visual": heads.visual.state_dict(),
            "audio_dim": heads.audio.in_dim,
            "visual_dim": heads.visual.in_dim,
            "config": heads.config.model_dump(mode="json"),
            "loss_history": list(heads.loss_history),
        },
        path,
    )
    logger.info(f"Saved projection heads to {path}")


def load_heads(path) -> ContrastiveHeads:
    try:
        payload = torch.load(path, weights_only=True)
    except (OSError, RuntimeError) as e:
        raise TrainingError(f"cannot load heads from {path}: {e}") from e
    config = TrainConfig(**payload["config"])
    heads = init_heads(payload["audio_dim"], payload["visual_dim"], config)
    heads.audio.load_state_dict(payload["audio"])
    heads.visual.load_state_dict(payload["visual"])
    heads.loss_history = list(payload.get("loss_history", []))
    return heads
