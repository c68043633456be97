"""Exact GP posterior used by GP-UCB and as the reference for the sketch.

Variances are reported on the ridge-leverage-score scale,

    sigma_t^2(x) = (k(x, x) - k_t(x)^T (K_t + lam I)^{-1} k_t(x)) / lam,

which is ``phi(x)^T A_t^{-1} phi(x)`` in feature space.  The approximate
variances in :mod:`bkb_kit.sketch` use the same scale, so the two can be
compared directly.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import KernelSpec, as_arms, diag, gram

__all__ = ["ExactPosterior", "exact_beta"]

REBUILD_EVERY = 256


class ExactPosterior:
    """Posterior of a zero-mean GP after ``t`` noisy observations.

    The factor ``chol`` is extended by one row per update and recomputed from
    scratch every ``REBUILD_EVERY`` updates to stop round-off from drifting.
    """

    def __init__(self, spec: KernelSpec, lam: float, dim: int | None = None):
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.spec = spec
        self.lam = float(lam)
        self._dim = dim
        self.X = np.empty((0, dim if dim is not None else 0))
        self.y = np.empty(0)
        self.arm_indices: list[int | None] = []
        self.chol = np.empty((0, 0))
        self.clamp_events = 0
        self._white_y: np.ndarray | None = None

    @property
    def t(self) -> int:
        return self.y.shape[0]

    def update(self, x, y: float, arm: int | None = None) -> "ExactPosterior":
        """Append observation ``(x, y)`` and extend the factor in place."""
        x = as_arms(x, "x")[0]
        if not np.isfinite(y):
            raise ValueError(f"reward must be finite, got {y}")
        if self.t and x.shape[0] != self.X.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[0]} vs {self.X.shape[1]}")
        t = self.t
        X_new = np.vstack([self.X.reshape(t, x.shape[0]), x[None, :]])
        self.X = X_new
        self.y = np.append(self.y, float(y))
        self.arm_indices.append(arm)
        self._white_y = None

        if (t + 1) % REBUILD_EVERY == 0:
            self._rebuild()
            return self
        kxx = diag(self.spec, x[None, :])[0]
        L = np.zeros((t + 1, t + 1))
        L[:t, :t] = self.chol
        if t:
            k_new = gram(self.spec, self.X[:t], x[None, :])[:, 0]
            row = solve_triangular(self.chol, k_new, lower=True)
            L[t, :t] = row
            pivot = kxx + self.lam - row @ row
        else:
            pivot = kxx + self.lam
        if pivot <= 0:
            # lam > 0 makes this impossible in exact arithmetic
            self._rebuild()
            return self
        L[t, t] = math.sqrt(pivot)
        self.chol = L
        return self

    def _rebuild(self) -> None:
        K = gram(self.spec, self.X)
        K[np.diag_indices_from(K)] += self.lam
        self.chol = np.linalg.cholesky(K)

    def _whitened_y(self) -> np.ndarray:
        if self._white_y is None:
            self._white_y = solve_triangular(self.chol, self.y, lower=True)
        return self._white_y

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (scaled, clamped) variance at each row of ``Xq``."""
        Xq = as_arms(Xq, "Xq")
        kdiag = diag(self.spec, Xq)
        if self.t == 0:
            return np.zeros(Xq.shape[0]), kdiag / self.lam
        W = solve_triangular(self.chol, gram(self.spec, self.X, Xq), lower=True)
        mean = W.T @ self._whitened_y()
        raw = (kdiag - np.einsum("ij,ij->j", W, W)) / self.lam
        self.clamp_events += int(np.count_nonzero(raw < 0))
        return mean, np.clip(raw, 0.0, kdiag / self.lam)

    def posterior_mean(self, x):
        mean, _ = self.predict(x)
        return float(mean[0]) if np.ndim(x) == 1 else mean

    def posterior_variance(self, x):
        _, var = self.predict(x)
        return float(var[0]) if np.ndim(x) == 1 else var

    def ucb_score(self, x, beta: float):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        mean, var = self.predict(x)
        score = mean + beta * np.sqrt(var)
        return float(score[0]) if np.ndim(x) == 1 else score

    def alpha_vec(self) -> np.ndarray:
        """``(K_t + lam I)^{-1} y_t``."""
        if self.t == 0:
            return np.empty(0)
        return cho_solve((self.chol, True), self.y)

    def logdet_ratio(self) -> float:
        """``logdet(K_t / lam + I)`` from the Cholesky diagonal."""
        if self.t == 0:
            return 0.0
        return float(2.0 * np.sum(np.log(np.diag(self.chol))) - self.t * math.log(self.lam))

    def exact_beta(self, F: float, xi: float, delta: float) -> float:
        return exact_beta(self.logdet_ratio(), self.lam, F, xi, delta)


def exact_beta(logdet: float, lam: float, F: float, xi: float, delta: float) -> float:
    """Confidence radius ``sqrt(lam) F + xi sqrt(2 (logdet + log(1/delta)))``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(lam) * F + xi * math.sqrt(2.0 * (logdet + math.log(1.0 / delta)))
