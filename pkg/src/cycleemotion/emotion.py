"""Mikels' eight emotion categories, the emotion wheel, and label helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class Emotion(IntEnum):
    AMUSEMENT = 0
    ANGER = 1
    AWE = 2
    CONTENTMENT = 3
    DISGUST = 4
    EXCITEMENT = 5
    FEAR = 6
    SADNESS = 7

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "int | str | Emotion") -> "Emotion":
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown emotion {value!r}") from None
        return cls(int(value))


NUM_EMOTIONS = len(Emotion)

# Positive emotions on one half of the circle, negative on the other.
DEFAULT_WHEEL_ORDER = (
    "amusement",
    "excitement",
    "awe",
    "contentment",
    "sadness",
    "disgust",
    "anger",
    "fear",
)


class RejectedRecordError(ValueError):
    """A vote record with no votes cannot be turned into a distribution."""


@dataclass(frozen=True)
class MikelsWheel:
    order: tuple[Emotion, ...]

    def __init__(self, order: Sequence["int | str | Emotion"] = DEFAULT_WHEEL_ORDER):
        parsed = tuple(Emotion.parse(o) for o in order)
        if sorted(parsed) != list(Emotion):
            raise ValueError(f"wheel order must contain each emotion exactly once, got {order!r}")
        object.__setattr__(self, "order", parsed)

    def position(self, emotion: "int | str | Emotion") -> int:
        return self.order.index(Emotion.parse(emotion))

    def steps(self, a, b) -> int:
        i, j = self.position(a), self.position(b)
        diff = abs(i - j)
        return min(diff, NUM_EMOTIONS - diff)

    def distance(self, a, b) -> float:
        return 1.0 + self.steps(a, b)

    def dissimilarity(self, a, b) -> float:
        return 1.0 - 1.0 / self.distance(a, b)

    def dissimilarity_matrix(self) -> np.ndarray:
        """8x8 table indexed by category index (not wheel position)."""
        table = np.zeros((NUM_EMOTIONS, NUM_EMOTIONS))
        for a in Emotion:
            for b in Emotion:
                table[a, b] = self.dissimilarity(a, b)
        return table


def wheel_steps(wheel: MikelsWheel, a, b) -> int:
    return wheel.steps(a, b)


def mikels_distance(wheel: MikelsWheel, a, b) -> float:
    return wheel.distance(a, b)


def mikels_dissimilarity(wheel: MikelsWheel, a, b) -> float:
    return wheel.dissimilarity(a, b)


@dataclass(frozen=True)
class EmotionDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (NUM_EMOTIONS,):
            raise ValueError(f"expected {NUM_EMOTIONS} probabilities, got shape {p.shape}")
        if np.any(p < 0) or not np.isfinite(p).all():
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {p.sum():.8f}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)


def normalize_votes(counts: Sequence[int]) -> EmotionDistribution:
    counts = np.asarray(counts)
    if counts.shape != (NUM_EMOTIONS,):
        raise ValueError(f"expected {NUM_EMOTIONS} vote counts, got shape {counts.shape}")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValueError("vote counts must be non-negative integers")
    total = counts.sum()
    if total < 1:
        raise RejectedRecordError("record has zero votes")
    return EmotionDistribution(counts.astype(np.float64) / float(total))


def argmax_emotion(dist) -> Emotion:
    # np.argmax returns the first maximal index, i.e. lowest index wins ties
    return Emotion(int(np.argmax(np.asarray(dist, dtype=np.float64))))
