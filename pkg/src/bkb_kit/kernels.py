"""Covariance functions and Gram matrices.

Three families are supported: the Gaussian kernel ``exp(-gamma * ||x - y||^2)``,
the linear kernel ``x . y`` and the Matern kernel for ``nu`` in
``{1/2, 3/2, 5/2}`` (closed forms only).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "Family",
    "KernelSpec",
    "as_arms",
    "evaluate",
    "gram",
    "diag",
    "kappa_sq",
]

#: Relative tolerance below which a negative Gram eigenvalue is a bug, not noise.
TOL_PSD = 1e-8

_MATERN_NUS = (0.5, 1.5, 2.5)


class Family(str, Enum):
    GAUSSIAN = "gaussian"
    LINEAR = "linear"
    MATERN = "matern"


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description.

    ``gamma`` only matters for the Gaussian family, ``nu`` and ``lengthscale``
    only for Matern.
    """

    family: Family = Family.GAUSSIAN
    gamma: float = 1.0
    nu: float = 2.5
    lengthscale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError(f"gamma must be a positive finite number, got {self.gamma}")
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.family is Family.MATERN and float(self.nu) not in _MATERN_NUS:
            raise ValueError(
                f"Matern kernel supports nu in {{1/2, 3/2, 5/2}} only, got {self.nu}"
            )

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "gamma": self.gamma,
            "nu": self.nu,
            "lengthscale": self.lengthscale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        known = {"family", "gamma", "nu", "lengthscale"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown kernel keys: {sorted(unknown)}")
        return cls(**{k: (v if k == "family" else float(v)) for k, v in d.items()})


def as_arms(X, name: str = "arms") -> np.ndarray:
    """Validate and return a finite ``(n, d)`` float array (1-D input is one row)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one row")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def _check_pair(X: np.ndarray, Y: np.ndarray) -> None:
    if X.shape[1] != Y.shape[1]:
        raise ValueError(
            f"dimension mismatch: {X.shape[1]} columns vs {Y.shape[1]} columns"
        )


def _matern(r: np.ndarray, nu: float) -> np.ndarray:
    if nu == 0.5:
        return np.exp(-r)
    if nu == 1.5:
        s = np.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    s = np.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Return the ``(n, m)`` matrix ``k(X_i, Y_j)``; ``Y=None`` means ``Y = X``."""
    X = as_arms(X, "X")
    same = Y is None
    Y = X if same else as_arms(Y, "Y")
    _check_pair(X, Y)

    if spec.family is Family.LINEAR:
        K = X @ Y.T
        if same:
            K = 0.5 * (K + K.T)
        return K
    # cdist accumulates (x_i - y_i)^2 pairwise, which keeps k(x, y) == k(y, x) exact
    sq = cdist(X, Y, "sqeuclidean")
    if spec.family is Family.GAUSSIAN:
        return np.exp(-spec.gamma * sq)
    return _matern(np.sqrt(sq) / spec.lengthscale, float(spec.nu))


def evaluate(spec: KernelSpec, x, y) -> float:
    """Single kernel evaluation ``k(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("evaluate expects two 1-D vectors")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(gram(spec, x[None, :], y[None, :])[0, 0])


def diag(spec: KernelSpec, X) -> np.ndarray:
    """``k(x, x)`` for every row of ``X``."""
    X = as_arms(X, "X")
    if spec.family is Family.LINEAR:
        return np.einsum("ij,ij->i", X, X)
    return np.ones(X.shape[0])


def kappa_sq(spec: KernelSpec, arms) -> float:
    """Largest prior variance ``max_x k(x, x)`` over the arm set."""
    return float(np.max(diag(spec, arms)))
