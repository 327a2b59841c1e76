"""Teacher transform, partial squared-error distance, and loss composition.

The teacher transform clips each channel from below at a per-channel margin
(the mean of that channel's negative activations, so mildly negative values
survive). The partial L2 distance zeroes the error wherever the student is
already below a non-positive target, i.e. s <= t <= 0.
"""

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import reduction
from .matching import Matching, SparseMatching
from .reduction import ReducerKind

# Margin used for channels that never go negative; keeps margins strictly
# negative so the clip never acts as a plain ReLU.
MARGIN_FLOOR = -1e-6


def estimate_margins(feature_maps: Iterable[np.ndarray]) -> np.ndarray:
    """Per-channel mean of negative activations over a stream of (C, N) maps.

    Channels with no negative activations get MARGIN_FLOOR. All returned
    margins are strictly negative.
    """
    neg_sum = None
    neg_count = None
    for fm in feature_maps:
        f = np.asarray(fm, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError(f"feature maps must be 2-D, got shape {f.shape}")
        if neg_sum is None:
            neg_sum = np.zeros(f.shape[0])
            neg_count = np.zeros(f.shape[0], dtype=np.int64)
        elif f.shape[0] != len(neg_sum):
            raise ValueError("all feature maps in the stream must share the channel count")
        neg = f < 0
        neg_sum += np.where(neg, f, 0.0).sum(axis=1)
        neg_count += neg.sum(axis=1)
    if neg_sum is None:
        raise ValueError("margin estimation needs at least one feature map")
    return np.where(neg_count > 0, neg_sum / np.maximum(neg_count, 1), MARGIN_FLOOR)


def marginal_relu(features: np.ndarray, margins: np.ndarray) -> np.ndarray:
    """Element-wise max(x, margin of the channel)."""
    f = np.asarray(features, dtype=np.float64)
    m = np.asarray(margins, dtype=np.float64)
    if f.ndim != 2 or m.ndim != 1 or f.shape[0] != m.shape[0]:
        raise ValueError(f"channel mismatch: features {f.shape}, margins {m.shape}")
    return np.maximum(f, m[:, None])


def _zero_branch(target: np.ndarray, student: np.ndarray) -> np.ndarray:
    return (student <= target) & (target <= 0)


def partial_l2(target: np.ndarray, student: np.ndarray) -> float:
    """Sum of (t - s)^2 over all positions except where s <= t <= 0."""
    t = np.asarray(target, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: target {t.shape}, student {s.shape}")
    return float(np.where(_zero_branch(t, s), 0.0, (t - s) ** 2).sum())


def partial_l2_grad(target: np.ndarray, student: np.ndarray) -> np.ndarray:
    """Gradient of partial_l2 with respect to the student entries."""
    t = np.asarray(target, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: target {t.shape}, student {s.shape}")
    return np.where(_zero_branch(t, s), 0.0, 2.0 * (s - t))


def reduce_margins(
    margins: np.ndarray, kind: ReducerKind, matching: Matching | SparseMatching
) -> np.ndarray:
    """Collapse per-teacher-channel margins alongside the channel reduction.

    Sparse matching keeps the matched channel's margin; grouped reducers use
    the minimum (most permissive) margin of the owned teacher channels.
    """
    m = np.asarray(margins, dtype=np.float64)
    if ReducerKind(kind) is ReducerKind.SM:
        if not isinstance(matching, SparseMatching):
            raise TypeError("SM margin reduction needs a SparseMatching")
        return m[matching.pairs]
    if not isinstance(matching, Matching):
        raise TypeError("grouped margin reduction needs a balanced Matching")
    if len(m) != matching.c_t:
        raise ValueError(f"margins cover {len(m)} channels, matching expects {matching.c_t}")
    return m[matching.groups()].min(axis=1)


def reduced_target(
    teacher: np.ndarray,
    margins: np.ndarray,
    kind: ReducerKind,
    matching: Matching | SparseMatching,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Margin-clipped reduced teacher features: the distillation target."""
    red = reduction.reduce(teacher, kind, matching, rng=rng)
    return marginal_relu(red, reduce_margins(margins, kind, matching))


def distill_loss(
    teacher: np.ndarray,
    student: np.ndarray,
    margins: np.ndarray,
    kind: ReducerKind,
    matching: Matching | SparseMatching,
    rng: np.random.Generator | None = None,
) -> float:
    """Partial L2 between the reduced, margin-clipped teacher and the raw student.

    Normalized by the student feature size C_S * N so the trade-off weight is
    comparable across positions and spatial sizes.
    """
    s = np.asarray(student, dtype=np.float64)
    target = reduced_target(teacher, margins, kind, matching, rng=rng)
    return partial_l2(target, s) / s.size


def distill_loss_and_grad(
    teacher: np.ndarray,
    student: np.ndarray,
    margins: np.ndarray,
    kind: ReducerKind,
    matching: Matching | SparseMatching,
    rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """distill_loss plus its gradient with respect to the student features."""
    s = np.asarray(student, dtype=np.float64)
    target = reduced_target(teacher, margins, kind, matching, rng=rng)
    loss = partial_l2(target, s) / s.size
    grad = partial_l2_grad(target, s) / s.size
    return loss, grad


@dataclass
class LossBreakdown:
    task_loss: float
    distill_loss: float
    gamma: float
    total: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        expected = self.task_loss + self.gamma * self.distill_loss
        if abs(self.total - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} != task + gamma*distill = {expected}")

    @classmethod
    def compose(cls, task_loss: float, distill_loss: float, gamma: float) -> "LossBreakdown":
        return cls(task_loss, distill_loss, gamma, task_loss + gamma * distill_loss)
