"""Nystrom embedding and the DTC approximate posterior.

With dictionary ``S`` the embedding is ``z(x) = (K_S^{1/2})^+ k_S(x)`` and,
writing ``V = Z^T Z + lam I`` for the embedded design,

    mu~(x)      = z(x)^T V^{-1} Z^T y
    sigma~^2(x) = (k(x, x) - z(x)^T Z^T Z V^{-1} z(x)) / lam
                = (k(x, x) - z(x)^T z(x)) / lam + z(x)^T V^{-1} z(x)

Keeping the exact prior term ``k(x, x)`` is what separates DTC from the
subset-of-regressors (SoR) estimate ``z(x)^T V^{-1} z(x)``, which collapses
to zero far away from the dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import KernelSpec, as_arms, diag, gram

__all__ = [
    "EmbeddingMap",
    "SketchState",
    "build_embedding",
    "embed",
    "rebuild_sketch",
    "approx_mean",
    "approx_variance",
    "approx_ucb",
    "sor_variance",
]

TRUNC_TOL = 1e-12


@dataclass(frozen=True)
class EmbeddingMap:
    spec: KernelSpec
    dict_arms: np.ndarray
    proj_factor: np.ndarray
    rank: int

    @property
    def m(self) -> int:
        return self.dict_arms.shape[0]

    def project(self, k_cross: np.ndarray) -> np.ndarray:
        """Map precomputed ``k_S(x)`` rows (shape ``(n, m)``) to embeddings."""
        return k_cross @ self.proj_factor


def build_embedding(
    spec: KernelSpec, dict_arms, K_S: np.ndarray | None = None, trunc_tol: float = TRUNC_TOL
) -> EmbeddingMap:
    """Eigendecompose ``K_S`` and keep eigenvalues above ``trunc_tol * max``.

    Duplicated dictionary rows make ``K_S`` exactly singular; the truncated
    pseudo-inverse square root handles that.
    """
    dict_arms = np.asarray(dict_arms, dtype=float)
    if dict_arms.ndim != 2 or dict_arms.shape[0] == 0:
        raise ValueError("dictionary must hold at least one arm; seed it first")
    if K_S is None:
        K_S = gram(spec, dict_arms)
    evals, evecs = np.linalg.eigh(K_S)
    top = evals[-1]
    keep = evals > trunc_tol * top if top > 0 else np.zeros_like(evals, dtype=bool)
    U = evecs[:, keep]
    proj = (U / np.sqrt(evals[keep])) @ U.T
    return EmbeddingMap(spec, dict_arms, proj, int(keep.sum()))


def embed(emb: EmbeddingMap, x) -> np.ndarray:
    """``z(x)``; a 1-D input gives an ``m``-vector, a 2-D input an ``(n, m)`` array."""
    Z = emb.project(gram(emb.spec, x, emb.dict_arms))
    return Z[0] if np.ndim(x) == 1 else Z


@dataclass
class SketchState:
    emb: EmbeddingMap
    V_chol: np.ndarray
    zty: np.ndarray
    zz: np.ndarray
    lam: float
    pull_counts: np.ndarray
    clamp_events: int = field(default=0)

    def logdet_ratio(self) -> float:
        """``logdet(V / lam)``, equal to ``logdet(K~_t / lam + I)`` by Sylvester."""
        m = self.V_chol.shape[0]
        return float(2.0 * np.sum(np.log(np.diag(self.V_chol))) - m * np.log(self.lam))

    def predict_embedded(
        self, Z: np.ndarray, kdiag: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean, DTC variance and SoR variance from precomputed embeddings ``Z``."""
        W = solve_triangular(self.V_chol, Z.T, lower=True)
        mean = W.T @ solve_triangular(self.V_chol, self.zty, lower=True)
        quad = np.einsum("ij,ij->j", W, W)
        zz = np.einsum("ij,ij->i", Z, Z)
        raw = (kdiag - zz) / self.lam + quad
        upper = kdiag / self.lam
        self.clamp_events += int(np.count_nonzero((raw < 0) | (raw > upper)))
        return mean, np.clip(raw, 0.0, upper), quad


def rebuild_sketch(
    emb: EmbeddingMap,
    arms,
    counts,
    reward_sums,
    lam: float,
    Z: np.ndarray | None = None,
) -> SketchState:
    """Rebuild ``V`` from per-arm pull counts and reward sums.

    ``arms`` holds one row per distinct pulled arm; ``counts[i]`` pulls of
    ``arms[i]`` contribute ``counts[i] * z z^T`` to ``Z^T Z`` and their summed
    rewards to ``Z^T y``.
    """
    counts = np.asarray(counts, dtype=float)
    reward_sums = np.asarray(reward_sums, dtype=float)
    if counts.sum() <= 0:
        raise ValueError("history must contain at least one pull")
    if Z is None:
        Z = embed(emb, as_arms(arms))
    zz = (Z.T * counts) @ Z
    zz = 0.5 * (zz + zz.T)
    zty = Z.T @ reward_sums
    V = zz.copy()
    V[np.diag_indices_from(V)] += lam
    return SketchState(emb, np.linalg.cholesky(V), zty, zz, float(lam), counts)


def _predict(st: SketchState, x):
    X = as_arms(x)
    return st.predict_embedded(embed(st.emb, X), diag(st.emb.spec, X))


def _out(v: np.ndarray, x):
    return float(v[0]) if np.ndim(x) == 1 else v


def approx_mean(st: SketchState, x):
    return _out(_predict(st, x)[0], x)


def approx_variance(st: SketchState, x):
    return _out(_predict(st, x)[1], x)


def sor_variance(st: SketchState, x):
    """Subset-of-regressors variance ``z^T V^{-1} z`` (starves far from ``S``)."""
    return _out(_predict(st, x)[2], x)


def approx_ucb(st: SketchState, x, beta_tilde: float):
    if beta_tilde < 0:
        raise ValueError("beta_tilde must be nonnegative")
    mean, var, _ = _predict(st, x)
    return _out(mean + beta_tilde * np.sqrt(var), x)
