"""Autograd gradients of every differentiable loss against central finite differences."""

import numpy as np
import pytest
import torch

from cycleemotion.losses import (
    SemanticDistance,
    desc_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    task_loss_classification,
    task_loss_distribution,
)
from cycleemotion.perceptual import MixConfig, MsSsimConfig, mixed_cycle_loss

STEP = 1e-3
TOL = 1e-3


def fd_gradient(fn, inputs, index):
    x = inputs[index]
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + STEP
        plus = fn(*inputs).item()
        flat[i] = orig - STEP
        minus = fn(*inputs).item()
        flat[i] = orig
        grad.view(-1)[i] = (plus - minus) / (2 * STEP)
    return grad


def relative_error(fn, inputs, wrt):
    inputs = [t.detach().clone().double() for t in inputs]
    worst = 0.0
    for index in wrt:
        leaves = [t.clone().requires_grad_(i == index) for i, t in enumerate(inputs)]
        (auto,) = torch.autograd.grad(fn(*leaves), leaves[index])
        numeric = fd_gradient(fn, inputs, index)
        err = (auto - numeric).norm() / max(auto.norm(), numeric.norm(), 1e-12)
        worst = max(worst, err.item())
    return worst


def _dists(g, n=4):
    # entries stay near 1/8 so the step-1e-3 truncation error is well under the tolerance
    p = torch.rand(n, 8, generator=g, dtype=torch.float64) + 1.0
    return p / p.sum(1, keepdim=True)


def test_mixed_cycle_loss_gradient():
    g = torch.Generator().manual_seed(0)
    cfg = MsSsimConfig(scales=2, window_size=5)
    s = torch.rand(1, 3, 12, 12, generator=g, dtype=torch.float64) * 0.6 + 0.2
    t = torch.rand(1, 3, 12, 12, generator=g, dtype=torch.float64) * 0.6 + 0.2
    # keep every residual well away from the L1 kink
    sign = lambda x: torch.where(torch.rand(x.shape, generator=g, dtype=torch.float64) < 0.5, -1.0, 1.0)
    sr = s + sign(s) * (0.05 + 0.1 * torch.rand(s.shape, generator=g, dtype=torch.float64))
    tr = t + sign(t) * (0.05 + 0.1 * torch.rand(t.shape, generator=g, dtype=torch.float64))
    fn = lambda a, b, c, d: mixed_cycle_loss(a, b, c, d, MixConfig(alpha=0.5), cfg)
    assert relative_error(fn, [s, sr, t, tr], wrt=[1, 3]) < TOL


def test_desc_skl_gradient():
    g = torch.Generator().manual_seed(1)
    fn = lambda a, b: desc_loss(SemanticDistance(kind="skl"), a, b)
    assert relative_error(fn, [_dists(g), _dists(g)], wrt=[0, 1]) < TOL


def test_kl_task_loss_gradient():
    g = torch.Generator().manual_seed(2)
    assert relative_error(task_loss_distribution, [_dists(g), _dists(g)], wrt=[0]) < TOL


def test_cross_entropy_gradient():
    g = torch.Generator().manual_seed(3)
    logits = torch.randn(5, 8, generator=g, dtype=torch.float64)
    labels = torch.tensor([0, 3, 7, 1, 1])
    fn = lambda z: task_loss_classification(z, labels)
    assert relative_error(fn, [logits], wrt=[0]) < TOL


def test_lsgan_gradients():
    g = torch.Generator().manual_seed(4)
    fake = torch.randn(2, 1, 4, 4, generator=g, dtype=torch.float64)
    real = torch.randn(2, 1, 4, 4, generator=g, dtype=torch.float64)
    assert relative_error(lsgan_generator_loss, [fake], wrt=[0]) < TOL
    assert relative_error(lsgan_discriminator_loss, [real, fake], wrt=[0, 1]) < TOL
