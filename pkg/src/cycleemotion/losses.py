"""Adversarial, semantic-consistency, feature-alignment and task losses.

All losses reduce by mean over the batch so the weights stay batch-size invariant.
"""

from __future__ import annotations

from typing import Literal, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from .emotion import NUM_EMOTIONS, MikelsWheel
from .metrics import KL_EPS

# class indices of the feature discriminator's two outputs
TARGET_CLASS = 0
ADAPTED_CLASS = 1


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta: float = Field(10.0, gt=0)
    gamma: float = Field(50.0, ge=0)


class SemanticDistance(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["skl", "mikels"] = "skl"
    wheel_order: Optional[tuple[str, ...]] = None

    @property
    def wheel(self) -> MikelsWheel:
        return MikelsWheel(self.wheel_order) if self.wheel_order else MikelsWheel()


class ConfigurationError(ValueError):
    pass


def _nonempty(t: torch.Tensor, name: str) -> None:
    if t.numel() == 0:
        raise ValueError(f"{name} is empty")


def lsgan_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    _nonempty(fake_scores, "fake_scores")
    return ((fake_scores - 1) ** 2).mean()


def lsgan_discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    _nonempty(real_scores, "real_scores")
    _nonempty(fake_scores, "fake_scores")
    return ((real_scores - 1) ** 2).mean() + (fake_scores**2).mean()


def _smooth(p: torch.Tensor, eps: float) -> torch.Tensor:
    return (p + eps) / (1.0 + p.shape[-1] * eps)


def kl_rows(p: torch.Tensor, q: torch.Tensor, eps: float = KL_EPS) -> torch.Tensor:
    """Row-wise KL(p || q) with the same smoothing as the evaluation metric."""
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    p, q = _smooth(p, eps), _smooth(q, eps)
    return (p * (p.log() - q.log())).sum(-1)


def skl_rows(p: torch.Tensor, q: torch.Tensor, eps: float = KL_EPS) -> torch.Tensor:
    return kl_rows(p, q, eps) + kl_rows(q, p, eps)


def desc_loss(
    distance: SemanticDistance,
    pred_source: torch.Tensor,
    pred_adapted: torch.Tensor,
    task: str = "distribution",
) -> torch.Tensor:
    """Semantic-consistency penalty between two batches of emotion probabilities.

    In ``mikels`` mode only the argmax of each row matters, so the value
    carries no gradient.
    """
    if pred_source.shape != pred_adapted.shape:
        raise ValueError(
            f"batch mismatch: {tuple(pred_source.shape)} vs {tuple(pred_adapted.shape)}"
        )
    if distance.kind == "skl":
        return skl_rows(pred_source, pred_adapted).mean()
    if task == "distribution":
        raise ConfigurationError("the Mikels distance is only defined for the classification task")
    table = pred_source.new_tensor(distance.wheel.dissimilarity_matrix())
    a = pred_source.argmax(-1)
    b = pred_adapted.argmax(-1)
    return table[a, b].mean()


def feature_alignment_losses(
    adapted_features: torch.Tensor, target_features: torch.Tensor, d_feat
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy GAN pair over classifier output vectors.

    Returns ``(disc_loss, gen_side_loss)``. The discriminator learns to tell
    adapted features from target features; the classifier side is rewarded
    when target features are scored as adapted.
    """
    for name, feats in (("adapted_features", adapted_features), ("target_features", target_features)):
        if feats.shape[-1] != NUM_EMOTIONS:
            raise ValueError(f"{name} must be {NUM_EMOTIONS}-dimensional, got {feats.shape[-1]}")
    logits_a = d_feat(adapted_features)
    logits_t = d_feat(target_features)
    ones = torch.full((logits_a.shape[0],), ADAPTED_CLASS, dtype=torch.long)
    zeros = torch.full((logits_t.shape[0],), TARGET_CLASS, dtype=torch.long)
    disc = F.cross_entropy(logits_a, ones) + F.cross_entropy(logits_t, zeros)
    gen = F.cross_entropy(logits_t, torch.full_like(zeros, ADAPTED_CLASS))
    return disc, gen


def feature_discriminator_accuracy(
    adapted_features: torch.Tensor, target_features: torch.Tensor, d_feat
) -> float:
    with torch.no_grad():
        right_a = (d_feat(adapted_features).argmax(-1) == ADAPTED_CLASS).sum()
        right_t = (d_feat(target_features).argmax(-1) == TARGET_CLASS).sum()
    total = adapted_features.shape[0] + target_features.shape[0]
    return float(right_a + right_t) / total


def task_loss_distribution(pred: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Mean KL(label || pred); the label is the reference distribution."""
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(label.shape)}")
    return kl_rows(label, pred).mean()


def task_loss_classification(logits: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    label = torch.as_tensor(label, dtype=torch.long)
    if label.numel() and (label.min() < 0 or label.max() >= logits.shape[-1]):
        raise ValueError(f"label index out of range [0, {logits.shape[-1] - 1}]")
    return F.cross_entropy(logits, label)


def total_stage_one_generator_loss(
    adv_st: torch.Tensor,
    adv_ts: torch.Tensor,
    mixed_cycle: torch.Tensor,
    desc_st: torch.Tensor,
    desc_ts: torch.Tensor,
    weights: LossWeights = LossWeights(),
    gamma: Optional[float] = None,
) -> torch.Tensor:
    """Generator objective of the image-translation stage.

    ``gamma`` overrides ``weights.gamma`` (used by the DESC warm-up ramp).
    """
    gamma = weights.gamma if gamma is None else gamma
    return adv_st + adv_ts + weights.beta * mixed_cycle + gamma * (desc_st + desc_ts)
