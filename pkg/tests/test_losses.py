import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cycleemotion.emotion import MikelsWheel
from cycleemotion.losses import (
    ADAPTED_CLASS,
    TARGET_CLASS,
    ConfigurationError,
    LossWeights,
    SemanticDistance,
    desc_loss,
    feature_alignment_losses,
    feature_discriminator_accuracy,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    task_loss_classification,
    task_loss_distribution,
    total_stage_one_generator_loss,
)

P = torch.tensor([[0.5, 0.5, 0, 0, 0, 0, 0, 0]], dtype=torch.float64)
Q = torch.tensor([[0.25, 0.75, 0, 0, 0, 0, 0, 0]], dtype=torch.float64)


class FixedDiscriminator(torch.nn.Module):
    """Scores every feature vector with the same two-class logits."""

    def __init__(self, p_adapted):
        super().__init__()
        self.logit = math.log(p_adapted) - math.log(1 - p_adapted) if 0 < p_adapted < 1 else None
        self.p = p_adapted

    def forward(self, feats):
        n = feats.shape[0]
        if self.logit is None:
            big = 1e4 if self.p == 1 else -1e4
            return feats.new_tensor([[0.0, big]]).expand(n, 2)
        return feats.new_tensor([[0.0, self.logit]]).expand(n, 2)


class OracleDiscriminator(torch.nn.Module):
    """Knows which batch is which via a marker in the first feature."""

    def forward(self, feats):
        adapted = feats[:, 0] > 0.5
        out = torch.zeros(feats.shape[0], 2, dtype=feats.dtype)
        out[adapted, ADAPTED_CLASS] = 1e4
        out[~adapted, TARGET_CLASS] = 1e4
        return out


def test_lsgan_examples():
    assert lsgan_generator_loss(torch.ones(2, 1, 4, 4)).item() == 0
    assert lsgan_generator_loss(torch.zeros(3)).item() == 1
    assert lsgan_generator_loss(torch.tensor([0.5, 1.5])).item() == pytest.approx(0.25)
    assert lsgan_discriminator_loss(torch.ones(4), torch.zeros(4)).item() == 0
    assert lsgan_discriminator_loss(torch.zeros(4), torch.ones(4)).item() == 2
    assert lsgan_discriminator_loss(torch.tensor([0.5]), torch.tensor([0.5])).item() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lsgan_generator_loss(torch.empty(0))
    with pytest.raises(ValueError):
        lsgan_discriminator_loss(torch.ones(1), torch.empty(0))


def test_desc_skl():
    d = SemanticDistance(kind="skl")
    assert desc_loss(d, P, P).item() == 0
    assert round(desc_loss(d, P, Q).item(), 6) == 0.274653
    assert desc_loss(d, P, Q).item() == pytest.approx(float(oracles.skl(P[0].tolist(), Q[0].tolist())), rel=1e-9)


def test_desc_mikels():
    d = SemanticDistance(kind="mikels")
    wheel = d.wheel
    order = wheel.order
    a = torch.zeros(len(order), 8)
    b = torch.zeros(len(order), 8)
    for i in range(len(order)):
        a[i, order[i]] = 0.9
        b[i, order[(i + 1) % 8]] = 0.6
    a += 0.01
    b += 0.01
    assert desc_loss(d, a, b, task="classification").item() == pytest.approx(0.5)
    assert desc_loss(d, a, a, task="classification").item() == 0
    assert desc_loss(d, a, 7 * b, task="classification").item() == pytest.approx(0.5)
    with pytest.raises(ConfigurationError):
        desc_loss(d, a, b, task="distribution")
    with pytest.raises(ValueError):
        desc_loss(d, a, b[:3], task="classification")


def test_desc_mikels_custom_wheel():
    order = ["fear", "anger", "disgust", "sadness", "contentment", "awe", "excitement", "amusement"]
    d = SemanticDistance(kind="mikels", wheel_order=tuple(order))
    assert d.wheel == MikelsWheel(order)
    x = torch.eye(8)[[6]]  # fear
    y = torch.eye(8)[[3]]  # contentment, four steps away
    assert desc_loss(d, x, y, task="classification").item() == pytest.approx(0.8)


dist_batch = st.integers(1, 5).flatmap(
    lambda n: st.lists(st.lists(st.floats(0.01, 1), min_size=8, max_size=8), min_size=n, max_size=n)
)


@settings(max_examples=50, deadline=None)
@given(dist_batch, dist_batch)
def test_desc_skl_symmetric(a, b):
    n = min(len(a), len(b))
    a = torch.tensor(a[:n], dtype=torch.float64)
    b = torch.tensor(b[:n], dtype=torch.float64)
    a, b = a / a.sum(1, keepdim=True), b / b.sum(1, keepdim=True)
    d = SemanticDistance()
    assert desc_loss(d, a, b).item() == pytest.approx(desc_loss(d, b, a).item(), rel=1e-12)
    assert desc_loss(d, a, b).item() >= 0


def test_feature_alignment_closed_forms():
    feats_a = torch.rand(5, 8, dtype=torch.float64)
    feats_t = torch.rand(5, 8, dtype=torch.float64)
    disc, gen = feature_alignment_losses(feats_a, feats_t, FixedDiscriminator(0.5))
    assert disc.item() == pytest.approx(2 * math.log(2), abs=1e-9)
    assert gen.item() == pytest.approx(math.log(2), abs=1e-9)

    feats_a[:, 0] = 1.0
    feats_t[:, 0] = 0.0
    disc, _ = feature_alignment_losses(feats_a, feats_t, OracleDiscriminator())
    assert disc.item() == pytest.approx(0, abs=1e-9)
    assert feature_discriminator_accuracy(feats_a, feats_t, OracleDiscriminator()) == 1.0

    _, gen = feature_alignment_losses(feats_a, feats_t, FixedDiscriminator(1.0))
    assert gen.item() == pytest.approx(0, abs=1e-9)
    with pytest.raises(ValueError):
        feature_alignment_losses(torch.rand(2, 7), torch.rand(2, 7), FixedDiscriminator(0.5))


def test_task_loss_distribution():
    assert task_loss_distribution(P, P).item() == 0
    assert round(task_loss_distribution(Q, P).item(), 6) == 0.143841
    # argument order: label on the left of the KL
    assert task_loss_distribution(Q, P).item() == pytest.approx(float(oracles.kl(P[0].tolist(), Q[0].tolist())))
    assert task_loss_distribution(Q, P).item() != pytest.approx(task_loss_distribution(P, Q).item())
    uniform = torch.full((1, 8), 0.125, dtype=torch.float64)
    peaked = torch.tensor([[0.93] + [0.01] * 7], dtype=torch.float64)
    expected = float(oracles.kl(uniform[0].tolist(), peaked[0].tolist()))
    assert task_loss_distribution(peaked, uniform).item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        task_loss_distribution(P, torch.cat([P, Q]))


def test_task_loss_classification():
    uniform = torch.zeros(4, 8, dtype=torch.float64)
    assert abs(task_loss_classification(uniform, torch.tensor([0, 3, 5, 7])).item() - math.log(8)) < 1e-9
    logits = torch.zeros(1, 8, dtype=torch.float64)
    logits[0, 0] = 1
    expected = -math.log(math.e / (math.e + 7))
    assert task_loss_classification(logits, torch.tensor([0])).item() == pytest.approx(expected, rel=1e-12)
    assert round(expected, 5) == 1.27401
    strong = torch.zeros(1, 8)
    strong[0, 2] = 100
    assert task_loss_classification(strong, torch.tensor([2])).item() < 1e-12
    with pytest.raises(ValueError):
        task_loss_classification(uniform, torch.tensor([0, 1, 2, 8]))
    with pytest.raises(ValueError):
        task_loss_classification(uniform, torch.tensor([-1, 1, 2, 3]))


def test_total_objective():
    z = torch.zeros(())
    one = torch.ones(())
    assert total_stage_one_generator_loss(z, z, z, z, z).item() == 0
    assert total_stage_one_generator_loss(one, one, one, one, one, LossWeights(beta=10, gamma=50)).item() == 112
    w = LossWeights(gamma=0)
    assert total_stage_one_generator_loss(one, one, one, 5 * one, 5 * one, w).item() == 12
    assert total_stage_one_generator_loss(one, one, one, one, one, gamma=1.0).item() == 14


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(beta=0)
    with pytest.raises(ValueError):
        LossWeights(gamma=-1)
