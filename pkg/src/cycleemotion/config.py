"""Training and run configuration documents."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .losses import LossWeights, SemanticDistance
from .networks import (
    ClassifierConfig,
    DiscriminatorConfig,
    FeatureDiscriminatorConfig,
    GeneratorConfig,
)
from .perceptual import MixConfig, MsSsimConfig

SCHEMA_VERSION = 1


class TrainingConfig(BaseModel):
    """Hyperparameters of the two-part adversarial training procedure.

    Defaults are the full-scale values; :func:`desk_config` returns the
    small CPU-sized variant used by the synthetic benchmark.
    """

    model_config = ConfigDict(extra="forbid")

    task: Literal["distribution", "classification"] = "distribution"
    image_size: int = 256

    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    feature_discriminator: FeatureDiscriminatorConfig = FeatureDiscriminatorConfig()

    part_one_epochs: int = Field(200, ge=0)
    part_two_epochs: int = Field(200, ge=0)
    part_one_batch_size: int = Field(1, ge=1)
    part_two_batch_size: int = Field(64, ge=1)

    gen_lr: float = Field(2e-4, gt=0)
    disc_lr: float = Field(2e-4, gt=0)
    adam_betas: tuple[float, float] = (0.5, 0.999)
    classifier_optimizer: Literal["sgd", "adam"] = "sgd"
    classifier_lr: float = Field(1e-4, gt=0)
    classifier_momentum: float = Field(0.0, ge=0, lt=1)
    part_two_lr: float = Field(1e-4, gt=0)

    thres: float = Field(0.8, gt=0, le=1)
    weights: LossWeights = LossWeights()
    mix: MixConfig = MixConfig()
    msssim: MsSsimConfig = MsSsimConfig()
    distance: SemanticDistance = SemanticDistance()
    pool_size: int = Field(50, ge=0)

    desc_warmup: float = Field(0.1, ge=0, le=1)
    feature_input: Literal["probs", "logits"] = "probs"
    selection: Literal["source_adapted", "target"] = "source_adapted"
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.distance.kind == "mikels" and self.task == "distribution":
            raise ValueError("the Mikels distance can only be used for the classification task")
        if self.generator.image_size != self.image_size:
            self.generator = self.generator.model_copy(update={"image_size": self.image_size})
        head = "softmax" if self.task == "distribution" else "logits"
        if self.classifier.head != head:
            self.classifier = self.classifier.model_copy(update={"head": head})
        if self.mix.alpha > 0 and self.image_size < self.msssim.min_size:
            raise ValueError(
                f"image_size {self.image_size} is below the MS-SSIM minimum {self.msssim.min_size}; "
                "reduce msssim.scales or msssim.window_size"
            )
        return self


def desk_config(**overrides) -> TrainingConfig:
    """CPU-scale settings for 32x32 synthetic images."""
    base = dict(
        image_size=32,
        generator=GeneratorConfig(resblocks=2, base_channels=8, image_size=32, skip="input"),
        discriminator=DiscriminatorConfig(receptive_field=16, base_channels=16, norm="none"),
        classifier=ClassifierConfig(base_channels=16),
        feature_discriminator=FeatureDiscriminatorConfig(hidden_dim=32),
        part_one_epochs=4,
        part_two_epochs=4,
        part_one_batch_size=16,
        classifier_optimizer="adam",
        classifier_lr=1e-3,
        msssim=MsSsimConfig(scales=3, window_size=7),
        # larger weights let the generators steer the small from-scratch classifiers
        weights=LossWeights(gamma=0.01),
    )
    base.update(overrides)
    return TrainingConfig(**base)


class RunConfig(BaseModel):
    """Document consumed by ``cycleemotion train``."""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    source_manifest: str
    target_manifest: str
    output_dir: str = "runs/default"
    training: TrainingConfig = TrainingConfig()
    seed: Optional[int] = None

    def effective(self) -> "RunConfig":
        """Config with the top-level seed pushed into the training block."""
        if self.seed is None:
            return self
        return self.model_copy(update={"training": self.training.model_copy(update={"seed": self.seed})})


def load_json(path: "str | Path") -> dict:
    with open(path) as fh:
        return json.load(fh)
