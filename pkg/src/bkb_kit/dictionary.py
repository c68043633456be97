"""Ridge-leverage-score resampling of the inducing-point dictionary.

Every pulled position ``i`` is kept independently with probability
``min(1, qbar * sigma~^2(x_i))``.  Uniforms are drawn in ascending history
order, one per position, so a dictionary is a pure function of the
variances, ``qbar`` and the generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SamplingParams",
    "Dictionary",
    "qbar_floor",
    "inclusion_probs",
    "resample",
    "expected_size",
    "make_rng",
]


def qbar_floor(eps: float, delta: float, T: int) -> float:
    """Smallest oversampling factor ``6 alpha log(4T/delta) / eps^2``."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    alpha = (1 + eps) / (1 - eps)
    return 6.0 * alpha * math.log(4.0 * T / delta) / eps**2


@dataclass(frozen=True)
class SamplingParams:
    """Accuracy target and oversampling factor.

    ``qbar=None`` selects the accuracy floor for ``(eps, delta, horizon)``;
    ``math.inf`` keeps every pulled arm.  ``enforce_floor`` rejects an explicit
    ``qbar`` below the floor (the accuracy guarantee needs it); practical runs
    leave it off.
    """

    eps: float = 0.5
    delta: float = 0.1
    horizon: int = 100
    qbar: float | None = None
    enforce_floor: bool = False

    def __post_init__(self) -> None:
        floor = qbar_floor(self.eps, self.delta, self.horizon)
        if self.qbar is None:
            object.__setattr__(self, "qbar", floor)
        elif not self.qbar > 0:
            raise ValueError(f"qbar must be positive, got {self.qbar}")
        elif self.enforce_floor and self.qbar < floor:
            raise ValueError(f"qbar={self.qbar} is below the accuracy floor {floor:.4g}")

    @property
    def alpha(self) -> float:
        return (1 + self.eps) / (1 - self.eps)


@dataclass(frozen=True)
class Dictionary:
    indices: np.ndarray
    probs: np.ndarray
    fallback: bool = False

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; reproducible across platforms."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def inclusion_probs(variances, qbar: float) -> np.ndarray:
    v = np.asarray(variances, dtype=float)
    if np.any(v < 0):
        raise ValueError("variances must be nonnegative")
    if math.isinf(qbar):
        return np.ones_like(v)
    return np.minimum(1.0, qbar * v)


def resample(
    variances, qbar: float, rng: np.random.Generator, n_history: int | None = None
) -> Dictionary:
    """Draw ``q_i ~ Bernoulli(min(1, qbar * variances[i]))`` for each position.

    If nothing is drawn the most recent position is kept so the embedding
    always has at least one inducing point.
    """
    p = inclusion_probs(variances, qbar)
    if p.size == 0:
        raise ValueError("need at least one pulled arm to resample")
    if n_history is not None and n_history != p.size:
        raise ValueError(f"got {p.size} variances for a history of {n_history} pulls")
    u = rng.random(p.size)
    idx = np.flatnonzero(u < p)
    if idx.size == 0:
        return Dictionary(np.array([p.size - 1]), p, fallback=True)
    return Dictionary(idx, p)


def expected_size(variances, qbar: float) -> float:
    return float(np.sum(inclusion_probs(variances, qbar)))
