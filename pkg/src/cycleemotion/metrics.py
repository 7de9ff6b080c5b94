"""Distribution-comparison metrics and classification accuracy used for evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .emotion import NUM_EMOTIONS

KL_EPS = 1e-8


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return p, q


def smooth(p, eps: float = KL_EPS) -> np.ndarray:
    """Additive smoothing that keeps the vector a distribution."""
    p = np.asarray(p, dtype=np.float64)
    return (p + eps) / (1.0 + p.shape[-1] * eps)


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    p, q = _pair(p, q)
    p, q = smooth(p, eps), smooth(q, eps)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def skl_divergence(p, q, eps: float = KL_EPS) -> float:
    # summed in a fixed order so skl(p, q) == skl(q, p) bit for bit
    a, b = kl_divergence(p, q, eps), kl_divergence(q, p, eps)
    return min(a, b) + max(a, b)


def ssd(p, q) -> float:
    p, q = _pair(p, q)
    return float(np.sum((p - q) ** 2))


def bhattacharyya(p, q) -> float:
    p, q = _pair(p, q)
    return float(np.sum(np.sqrt(p * q)))


def canberra(p, q) -> float:
    p, q = _pair(p, q)
    num = np.abs(p - q)
    den = p + q
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(np.sum(terms))


def chebyshev(p, q) -> float:
    p, q = _pair(p, q)
    return float(np.max(np.abs(p - q)))


def cosine_similarity(p, q) -> float:
    p, q = _pair(p, q)
    norm_p, norm_q = np.linalg.norm(p), np.linalg.norm(q)
    if norm_p == 0 or norm_q == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(p, q) / (norm_p * norm_q))


def classification_accuracy(
    predictions: Sequence[int], labels: Sequence[int], num_classes: int = NUM_EMOTIONS
) -> tuple[list[float], float]:
    """Per-class accuracy and its unweighted mean.

    Classes with no ground-truth samples get NaN in ``per_class`` and are left
    out of the average.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.size == 0:
        raise ValueError("cannot compute accuracy of an empty prediction list")
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.size} predictions, {labels.size} labels")
    per_class = []
    for c in range(num_classes):
        mask = labels == c
        per_class.append(float(np.mean(predictions[mask] == c)) if mask.any() else float("nan"))
    present = [a for a in per_class if not np.isnan(a)]
    return per_class, float(np.mean(present))


@dataclass
class MetricsReport:
    ssd: Optional[float] = None
    kl: Optional[float] = None
    skl: Optional[float] = None
    bc: Optional[float] = None
    canberra: Optional[float] = None
    chebyshev: Optional[float] = None
    cosine: Optional[float] = None
    per_class_accuracy: Optional[list[float]] = None
    average_accuracy: Optional[float] = None
    num_samples: int = 0

    def to_dict(self) -> dict:
        """Flat record; fields not computed for the task are omitted."""
        out = {}
        for key, value in asdict(self).items():
            if value is None:
                continue
            if key == "per_class_accuracy":
                value = [None if np.isnan(v) else v for v in value]
            out[key] = value
        return out


DISTRIBUTION_METRICS = {
    "ssd": ssd,
    "kl": kl_divergence,
    "skl": skl_divergence,
    "bc": bhattacharyya,
    "canberra": canberra,
    "chebyshev": chebyshev,
    "cosine": cosine_similarity,
}


def evaluate_distributions(preds, labels, with_accuracy: bool = True) -> MetricsReport:
    """Average every distribution metric over (prediction, label) pairs.

    ``with_accuracy`` also scores the argmax of each prediction against the
    argmax of its label distribution.
    """
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    labels = [np.asarray(y, dtype=np.float64) for y in labels]
    if not preds:
        raise ValueError("cannot evaluate an empty set of predictions")
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(labels)} labels")
    values = {
        name: float(np.mean([fn(y, p) if name in ("kl",) else fn(p, y) for p, y in zip(preds, labels)]))
        for name, fn in DISTRIBUTION_METRICS.items()
    }
    report = MetricsReport(**values, num_samples=len(preds))
    if with_accuracy:
        report.per_class_accuracy, report.average_accuracy = classification_accuracy(
            [int(np.argmax(p)) for p in preds], [int(np.argmax(y)) for y in labels]
        )
    return report
