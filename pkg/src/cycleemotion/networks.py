"""Generators, patch discriminators, emotion classifiers and the feature discriminator."""

from __future__ import annotations

import contextlib
from typing import Literal, Optional

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field

from .emotion import NUM_EMOTIONS


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    resblocks: int = Field(9, ge=1)
    base_channels: int = Field(64, ge=1)
    norm: Literal["instance"] = "instance"
    image_size: int = 256
    channels: int = 3
    # "input" adds the input in logit space before the sigmoid, so a fresh generator is near identity
    skip: Literal["none", "input"] = "none"


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    receptive_field: int = 70
    base_channels: int = Field(64, ge=1)
    channels: int = 3
    # per-image normalization hides global colour statistics from the discriminator
    norm: Literal["instance", "none"] = "instance"


class ClassifierConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    backbone: Literal["small_cnn", "resnet101"] = "small_cnn"
    num_classes: int = NUM_EMOTIONS
    head: Literal["softmax", "logits"] = "softmax"
    base_channels: int = Field(16, ge=1)
    channels: int = 3
    pretrained_weights: Optional[str] = None


class FeatureDiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = NUM_EMOTIONS
    hidden_dim: int = Field(64, ge=1)
    output_dim: Literal[2] = 2


@contextlib.contextmanager
def _seeded(seed: Optional[int]):
    if seed is None:
        yield
        return
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """c7s1 -> two stride-2 downsamplers -> residual blocks -> two stride-1/2 upsamplers -> c7s1.

    The sigmoid head keeps outputs in [0, 1]. With ``skip="input"`` the network predicts a
    residual in logit space: ``sigmoid(logit(x) + f(x))``.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.channels, c, 7),
            nn.InstanceNorm2d(c),
            nn.ReLU(True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(c * mult, c * mult * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(c * mult * 2),
                nn.ReLU(True),
            ]
        layers += [ResidualBlock(c * 4) for _ in range(cfg.resblocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(c * mult, c * mult // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(c * mult // 2),
                nn.ReLU(True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(c, cfg.channels, 7)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"generator input size must be divisible by 4, got {h}x{w}")
        out = self.model(x)
        if self.cfg.skip == "input":
            out = out + torch.logit(x.clamp(1e-3, 1 - 1e-3))
        return torch.sigmoid(out)


def patch_layers_for(receptive_field: int) -> int:
    """Number of stride-2 stages giving the requested receptive field."""
    for n in range(0, 8):
        if patch_receptive_field(n) == receptive_field:
            return n
    supported = [patch_receptive_field(n) for n in range(1, 6)]
    raise ValueError(f"unsupported receptive field {receptive_field}; choose one of {supported}")


def patch_receptive_field(n_strided: int) -> int:
    # n stride-2 4x4 convs followed by two stride-1 4x4 convs
    rf = 1
    for stride in [1, 1] + [2] * n_strided:
        rf = (rf - 1) * stride + 4
    return rf


class PatchDiscriminator(nn.Module):
    """Fully convolutional discriminator emitting one score per overlapping patch.

    The two stride-1 layers are padded to keep their input size, so a doubled input gives an
    exactly doubled score map.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        n = patch_layers_for(cfg.receptive_field)
        if n < 1:
            raise ValueError("patch discriminator needs at least one downsampling stage")
        c = cfg.base_channels
        norm = nn.InstanceNorm2d if cfg.norm == "instance" else (lambda ch: nn.Identity())
        layers = [nn.Conv2d(cfg.channels, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        ch = c
        for i in range(1, n):
            out = c * min(2**i, 8)
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), norm(out), nn.LeakyReLU(0.2, True)]
            ch = out
        out = c * min(2**n, 8)
        layers += [
            nn.ZeroPad2d((1, 2, 1, 2)),
            nn.Conv2d(ch, out, 4),
            norm(out),
            nn.LeakyReLU(0.2, True),
            nn.ZeroPad2d((1, 2, 1, 2)),
            nn.Conv2d(out, 1, 4),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        h, w = x.shape[-2:]
        rf = self.cfg.receptive_field
        if h < rf or w < rf:
            raise ValueError(f"input {h}x{w} is smaller than the {rf}x{rf} receptive field")
        return self.model(x)


class SmallCNN(nn.Module):
    def __init__(self, channels: int, base: int, num_classes: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(channels, base, 3, padding=1),
            nn.ReLU(True),
            nn.MaxPool2d(2),
            nn.Conv2d(base, base * 2, 3, padding=1),
            nn.ReLU(True),
            nn.MaxPool2d(2),
            nn.Conv2d(base * 2, base * 4, 3, padding=1),
            nn.ReLU(True),
            nn.MaxPool2d(2),
            nn.Conv2d(base * 4, base * 4, 3, padding=1),
            nn.ReLU(True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.fc = nn.Linear(base * 4, num_classes)

    def forward(self, x):
        return self.fc(self.features(x))


def _resnet101(cfg: ClassifierConfig) -> nn.Module:
    import torchvision

    net = torchvision.models.resnet101(weights=None)
    if cfg.pretrained_weights:
        net.load_state_dict(torch.load(cfg.pretrained_weights, map_location="cpu"))
    net.fc = nn.Linear(net.fc.in_features, cfg.num_classes)
    return net


class Classifier(nn.Module):
    """Emotion classifier; ``forward`` returns probabilities or logits per ``cfg.head``."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone == "small_cnn":
            self.backbone = SmallCNN(cfg.channels, cfg.base_channels, cfg.num_classes)
        else:
            self.backbone = _resnet101(cfg)

    def logits(self, x):
        return self.backbone(x)

    def probs(self, x):
        return torch.softmax(self.logits(x), dim=-1)

    def forward(self, x):
        return self.probs(x) if self.cfg.head == "softmax" else self.logits(x)


class FeatureDiscriminator(nn.Module):
    def __init__(self, cfg: FeatureDiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.model = nn.Sequential(
            nn.Linear(cfg.input_dim, h),
            nn.ReLU(True),
            nn.Linear(h, h),
            nn.ReLU(True),
            nn.Linear(h, cfg.output_dim),
        )

    def forward(self, feats):
        if feats.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"expected {self.cfg.input_dim}-dimensional features, got {feats.shape[-1]}")
        return self.model(feats)

    def accuracy(self, feats: torch.Tensor, labels: torch.Tensor) -> float:
        with torch.no_grad():
            return float((self(feats).argmax(-1) == labels).float().mean())


def build_generator(cfg: GeneratorConfig, seed: Optional[int] = None) -> Generator:
    if cfg.image_size % 4:
        raise ValueError(f"image_size must be divisible by 4, got {cfg.image_size}")
    with _seeded(seed):
        net = Generator(cfg)
        init_weights(net)
    return net


def build_patch_discriminator(cfg: DiscriminatorConfig, seed: Optional[int] = None) -> PatchDiscriminator:
    with _seeded(seed):
        net = PatchDiscriminator(cfg)
        init_weights(net)
    return net


def build_classifier(cfg: ClassifierConfig, seed: Optional[int] = None) -> Classifier:
    with _seeded(seed):
        net = Classifier(cfg)
        if cfg.backbone == "small_cnn":
            init_weights(net.backbone.fc)
    return net


def build_feature_discriminator(
    cfg: FeatureDiscriminatorConfig = FeatureDiscriminatorConfig(), seed: Optional[int] = None
) -> FeatureDiscriminator:
    with _seeded(seed):
        net = FeatureDiscriminator(cfg)
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def parameter_checksum(net: nn.Module) -> str:
    """Hash of the raw parameter bytes; equal iff every parameter is bit-identical."""
    import hashlib

    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
