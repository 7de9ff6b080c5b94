"""SSIM components, multi-scale SSIM, and the cycle-reconstruction losses."""

from __future__ import annotations

from typing import Literal, Optional

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# keeps fractional powers differentiable when a comparison term hits zero
_POW_FLOOR = 1e-6


class MsSsimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scales: int = Field(5, ge=1)
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = Field(1.0, gt=0)
    scale_weights: Optional[tuple[float, ...]] = None
    window_size: int = Field(11, ge=1)
    window_sigma: float = Field(1.5, gt=0)
    padding: Literal["symmetric", "valid"] = "symmetric"

    @model_validator(mode="after")
    def _check(self):
        if self.window_size % 2 != 1:
            raise ValueError("window_size must be odd")
        weights = self.weights
        if len(weights) != self.scales:
            raise ValueError(f"{len(weights)} scale weights given for {self.scales} scales")
        if abs(sum(weights) - 1.0) > 1e-6:
            raise ValueError(f"scale weights sum to {sum(weights)}, expected 1")
        return self

    @property
    def weights(self) -> tuple[float, ...]:
        if self.scale_weights is not None:
            return tuple(self.scale_weights)
        # the published profile sums to 1.0001, and fewer scales truncate it; renormalize both
        head = DEFAULT_SCALE_WEIGHTS[: self.scales]
        if len(head) < self.scales:
            raise ValueError("scale_weights must be given for more than 5 scales")
        total = sum(head)
        return tuple(w / total for w in head)

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2

    @property
    def min_size(self) -> int:
        return 2 ** (self.scales - 1) * self.window_size


class MixConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(0.5, ge=0.0, le=1.0)
    msssim_term: Literal["one_minus", "raw"] = "one_minus"


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() != 4:
        raise ValueError(f"expected B x C x H x W images, got shape {tuple(x.shape)}")


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    return (g / g.sum()).to(dtype)


def _blur(x: torch.Tensor, window: torch.Tensor, padding: str) -> torch.Tensor:
    channels = x.shape[1]
    k = window.numel()
    if padding == "symmetric":
        # 'reflect' in torch drops the edge sample; build the edge-inclusive mirror by hand
        r = k // 2
        x = torch.cat([x[..., :, :r].flip(-1), x, x[..., :, -r:].flip(-1)], dim=-1) if r else x
        x = torch.cat([x[..., :r, :].flip(-2), x, x[..., -r:, :].flip(-2)], dim=-2) if r else x
    w = window.to(x.dtype)
    x = F.conv2d(x, w.view(1, 1, 1, k).expand(channels, 1, 1, k), groups=channels)
    return F.conv2d(x, w.view(1, 1, k, 1).expand(channels, 1, k, 1), groups=channels)


def _local_stats(x, y, cfg: MsSsimConfig):
    window = gaussian_window(cfg.window_size, cfg.window_sigma, x.dtype)
    mu_x = _blur(x, window, cfg.padding)
    mu_y = _blur(y, window, cfg.padding)
    var_x = (_blur(x * x, window, cfg.padding) - mu_x**2).clamp_min(0)
    var_y = (_blur(y * y, window, cfg.padding) - mu_y**2).clamp_min(0)
    cov = _blur(x * y, window, cfg.padding) - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim_components(x: torch.Tensor, y: torch.Tensor, cfg: MsSsimConfig = MsSsimConfig()):
    """Per-pixel luminance, contrast and structure maps (l, c, s)."""
    _check_pair(x, y)
    mu_x, mu_y, var_x, var_y, cov = _local_stats(x, y, cfg)
    sd_x, sd_y = var_x.sqrt(), var_y.sqrt()
    c1, c2, c3 = cfg.c1, cfg.c2, cfg.c3
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    con = (2 * sd_x * sd_y + c2) / (var_x + var_y + c2)
    struct = (cov + c3) / (sd_x * sd_y + c3)
    return lum, con, struct


def _scale_terms(x, y, cfg: MsSsimConfig):
    # c * s collapses to (2 cov + C2) / (var_x + var_y + C2) when C3 = C2 / 2,
    # which avoids the sqrt (and its infinite gradient) at zero variance
    mu_x, mu_y, var_x, var_y, cov = _local_stats(x, y, cfg)
    cs = (2 * cov + cfg.c2) / (var_x + var_y + cfg.c2)
    lum = (2 * mu_x * mu_y + cfg.c1) / (mu_x**2 + mu_y**2 + cfg.c1)
    return lum, cs


def ms_ssim(x: torch.Tensor, y: torch.Tensor, cfg: MsSsimConfig = MsSsimConfig()) -> torch.Tensor:
    """Multi-scale SSIM, one value per batch element.

    Scales below the coarsest contribute only contrast x structure; the
    coarsest adds luminance. Each scale's term is a pixel average; the
    weighted product is taken per channel and then averaged over channels.
    """
    _check_pair(x, y)
    h, w = x.shape[-2:]
    if min(h, w) < cfg.min_size:
        raise ValueError(
            f"images of size {h}x{w} are too small for {cfg.scales} scales with window "
            f"{cfg.window_size}; minimum side is {cfg.min_size}"
        )
    weights = cfg.weights
    value = x.new_ones(x.shape[:2])
    for j in range(cfg.scales):
        lum, cs = _scale_terms(x, y, cfg)
        if j < cfg.scales - 1:
            term = cs.flatten(2).mean(-1)
            pad = [x.shape[-2] % 2, x.shape[-1] % 2]
            x = F.avg_pool2d(x, 2, padding=pad)
            y = F.avg_pool2d(y, 2, padding=pad)
        else:
            term = (lum * cs).flatten(2).mean(-1)
        value = value * term.clamp_min(_POW_FLOOR) ** weights[j]
    return value.mean(1)


def l1_cycle_loss(original: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    if original.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch: {tuple(original.shape)} vs {tuple(reconstructed.shape)}")
    return (original - reconstructed).abs().mean()


def mixed_cycle_loss(
    src: torch.Tensor,
    src_recon: torch.Tensor,
    tgt: torch.Tensor,
    tgt_recon: torch.Tensor,
    mix: MixConfig = MixConfig(),
    cfg: MsSsimConfig = MsSsimConfig(),
) -> torch.Tensor:
    """alpha * MS-SSIM terms of both cycles + (1 - alpha) * L1 of both cycles."""
    l1 = l1_cycle_loss(src, src_recon) + l1_cycle_loss(tgt, tgt_recon)
    if mix.alpha == 0:
        return l1
    sim_src = ms_ssim(src_recon, src, cfg).mean()
    sim_tgt = ms_ssim(tgt_recon, tgt, cfg).mean()
    if mix.msssim_term == "one_minus":
        structural = (1 - sim_src) + (1 - sim_tgt)
    else:
        structural = sim_src + sim_tgt
    if mix.alpha == 1:
        return structural
    return mix.alpha * structural + (1 - mix.alpha) * l1
