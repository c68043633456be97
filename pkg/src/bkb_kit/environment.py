"""Synthetic reward environments over a finite arm set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import Family, KernelSpec, as_arms, gram, kappa_sq

__all__ = [
    "Environment",
    "Fig1Design",
    "sample_gp_function",
    "gp_environment",
    "fig1_environment",
]


def sample_gp_function(
    spec: KernelSpec,
    arms,
    jitter: float,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw ``f ~ N(0, K_A + jitter I)`` on the arm set.

    When the Cholesky factorization fails the jitter is raised, starting at
    ``1e-10 kappa^2`` and multiplying by 10 up to ``1e-4 kappa^2``.
    """
    arms = as_arms(arms)
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    K = gram(spec, arms)
    scale = kappa_sq(spec, arms)
    A = K.shape[0]
    candidates = [jitter] + [
        j for j in scale * 10.0 ** np.arange(-10, -3) if j > jitter
    ]
    for j in candidates:
        try:
            L = np.linalg.cholesky(K + j * np.eye(A))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise np.linalg.LinAlgError(
            f"Gram matrix not factorizable even with jitter {candidates[-1]:.1e}"
        )
    if size is None:
        return L @ rng.standard_normal(A)
    return rng.standard_normal((size, A)) @ L.T


@dataclass
class Environment:
    """Fixed reward vector plus Gaussian observation noise of scale ``noise_xi``."""

    arms: np.ndarray
    f_values: np.ndarray
    noise_xi: float = 0.0
    best_index: int = field(init=False)

    def __post_init__(self) -> None:
        self.arms = as_arms(self.arms)
        self.f_values = np.asarray(self.f_values, dtype=float)
        if self.f_values.shape != (self.arms.shape[0],):
            raise ValueError("need exactly one reward per arm")
        if not np.all(np.isfinite(self.f_values)):
            raise ValueError("rewards must be finite")
        if self.noise_xi < 0:
            raise ValueError("noise_xi must be nonnegative")
        self.best_index = int(np.argmax(self.f_values))

    @property
    def n_arms(self) -> int:
        return self.arms.shape[0]

    @property
    def best_value(self) -> float:
        return float(self.f_values[self.best_index])

    def observe(self, arm_index: int, rng: np.random.Generator) -> float:
        if not 0 <= arm_index < self.n_arms:
            raise IndexError(f"arm index {arm_index} out of range [0, {self.n_arms})")
        noise = rng.standard_normal()
        return float(self.f_values[arm_index] + self.noise_xi * noise)

    def gaps(self) -> np.ndarray:
        return self.best_value - self.f_values


def gp_environment(
    spec: KernelSpec,
    arms,
    noise_xi: float,
    rng: np.random.Generator,
    jitter: float = 1e-10,
) -> Environment:
    arms = as_arms(arms)
    f = sample_gp_function(spec, arms, jitter, rng)
    return Environment(arms, f, noise_xi)


@dataclass(frozen=True)
class Fig1Design:
    kernel: KernelSpec
    grid: np.ndarray
    pool: np.ndarray
    checkpoints: tuple[int, ...]

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])


def fig1_environment(
    rng: np.random.Generator,
    grid_size: int = 512,
    noise_xi: float = 0.1,
    gamma: float = 100.0,
    pool_max: float = 0.5,
    checkpoints: tuple[int, ...] = (6, 63, 215),
) -> tuple[Environment, Fig1Design]:
    """Variance-starvation benchmark: a GP draw on an even grid over ``[0, 1]``.

    Evaluations are later drawn from the pool of grid points in ``[0, pool_max]``.
    """
    spec = KernelSpec(Family.GAUSSIAN, gamma=gamma)
    grid = np.linspace(0.0, 1.0, grid_size)
    env = gp_environment(spec, grid[:, None], noise_xi, rng)
    pool = np.flatnonzero(grid <= pool_max)
    return env, Fig1Design(spec, grid, pool, tuple(checkpoints))
