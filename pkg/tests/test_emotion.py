from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cycleemotion.emotion import (
    DEFAULT_WHEEL_ORDER,
    NUM_EMOTIONS,
    Emotion,
    EmotionDistribution,
    MikelsWheel,
    RejectedRecordError,
    argmax_emotion,
    mikels_dissimilarity,
    mikels_distance,
    normalize_votes,
    wheel_steps,
)


def bfs_steps(order):
    """Shortest-path lengths on the cycle graph given by ``order``."""
    n = len(order)
    adj = {order[i]: {order[(i + 1) % n], order[(i - 1) % n]} for i in range(n)}
    table = {}
    for start in order:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        for end, d in dist.items():
            table[start, end] = d
    return table


def test_categories_are_a_bijection():
    assert NUM_EMOTIONS == 8
    names = [e.label for e in Emotion]
    assert len(set(names)) == 8
    assert names == sorted(names)
    for e in Emotion:
        assert Emotion.parse(e.label) is e
        assert Emotion.parse(int(e)) is e
    with pytest.raises(ValueError):
        Emotion.parse("joy")


def test_default_wheel_uses_every_emotion_once():
    assert sorted(DEFAULT_WHEEL_ORDER) == sorted(e.label for e in Emotion)


def test_wheel_rejects_bad_order():
    with pytest.raises(ValueError):
        MikelsWheel(["amusement"] * 8)
    with pytest.raises(ValueError):
        MikelsWheel(list(DEFAULT_WHEEL_ORDER)[:7])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_wheel_tables_match_bfs(seed):
    order = list(Emotion)
    if seed:
        np.random.default_rng(seed).shuffle(order)
    wheel = MikelsWheel(order)
    oracle = bfs_steps([Emotion(o) for o in order])
    for a in Emotion:
        for b in Emotion:
            steps = oracle[a, b]
            assert wheel_steps(wheel, a, b) == steps
            assert mikels_distance(wheel, a, b) == 1 + steps
            assert mikels_dissimilarity(wheel, a, b) == 1 - 1 / (1 + steps)
    table = wheel.dissimilarity_matrix()
    np.testing.assert_array_equal(table, table.T)
    assert np.all(np.diag(table) == 0)
    assert table.max() == 0.8


def test_wheel_examples():
    wheel = MikelsWheel()
    o = wheel.order
    assert wheel.steps(o[0], o[0]) == 0
    assert wheel.steps(o[0], o[1]) == 1
    assert wheel.steps(o[0], o[5]) == 3
    assert wheel.distance(o[2], o[2]) == 1
    assert wheel.distance(o[2], o[3]) == 2
    assert wheel.distance(o[0], o[4]) == 5
    assert wheel.dissimilarity(o[6], o[6]) == 0
    assert wheel.dissimilarity(o[7], o[0]) == 0.5
    assert wheel.dissimilarity(o[1], o[5]) == 0.8


@pytest.mark.parametrize(
    "votes, expected",
    [
        ([8, 0, 0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0, 0, 0]),
        ([1] * 8, [0.125] * 8),
        ([3, 0, 0, 1, 0, 0, 0, 4], [0.375, 0, 0, 0.125, 0, 0, 0, 0.5]),
    ],
)
def test_normalize_votes(votes, expected):
    np.testing.assert_array_equal(normalize_votes(votes).probs, expected)


def test_zero_votes_rejected():
    with pytest.raises(RejectedRecordError):
        normalize_votes([0] * 8)
    with pytest.raises(ValueError):
        normalize_votes([1, -1, 0, 0, 0, 0, 0, 1])
    with pytest.raises(ValueError):
        normalize_votes([1, 2, 3])


@given(st.lists(st.integers(0, 1000), min_size=8, max_size=8).filter(lambda v: sum(v) > 0))
def test_normalized_votes_sum_to_one(votes):
    p = normalize_votes(votes).probs
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p >= 0)


def test_distribution_validation():
    EmotionDistribution(np.full(8, 0.125))
    with pytest.raises(ValueError):
        EmotionDistribution(np.full(7, 1 / 7))
    with pytest.raises(ValueError):
        EmotionDistribution(np.array([0.5, 0.6, 0, 0, 0, 0, 0, -0.1]))
    with pytest.raises(ValueError):
        EmotionDistribution(np.full(8, 0.2))


def test_argmax_examples():
    assert argmax_emotion([1, 0, 0, 0, 0, 0, 0, 0]) == Emotion(0)
    assert argmax_emotion([0.1] * 7 + [0.3]) == Emotion(7)
    assert argmax_emotion([0.5, 0.5, 0, 0, 0, 0, 0, 0]) == Emotion(0)


@given(
    st.lists(st.integers(0, 10**6), min_size=8, max_size=8).filter(lambda v: sum(v) > 0),
    st.integers(1, 10**6),
)
def test_argmax_scale_invariant(weights, scale):
    # integer weights keep the rescaling exact, so ties cannot appear or vanish
    w = np.array(weights, dtype=np.float64)
    assert argmax_emotion(w) == argmax_emotion(w * scale)
