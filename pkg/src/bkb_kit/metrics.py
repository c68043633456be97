"""Verification utilities: effective dimension, the logdet chain, variance
monotonicity, the sketch accuracy/size audit and the linear-kernel oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, orth

from .bkb import BkbParams, StepView, Trace, run_bkb
from .dictionary import Dictionary
from .environment import Environment
from .gp_exact import ExactPosterior
from .kernels import TOL_PSD, Family, KernelSpec, as_arms, diag

__all__ = [
    "effective_dimension",
    "ChainReport",
    "logdet_deff_chain",
    "MonotonicityReport",
    "monotonicity_check",
    "SandwichReport",
    "linear_oracle_sandwich",
    "cumulative_regret",
    "AccuracyReport",
    "audit_bkb_run",
]

CHAIN_TOL = 1e-10


def _square(K, name: str = "K") -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"{name} must be square, got shape {K.shape}")
    return K


def _psd_eigvals(K: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvalsh(0.5 * (K + K.T))
    scale = max(1.0, float(np.abs(ev).max(initial=0.0)))
    if ev.size and ev[0] < -TOL_PSD * scale:
        raise ValueError(f"K is not PSD (smallest eigenvalue {ev[0]:.3e})")
    return np.clip(ev, 0.0, None)


def effective_dimension(K, lam: float) -> float:
    """``Tr(K (K + lam I)^{-1}) = sum_i ev_i / (ev_i + lam)``."""
    K = _square(K)
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    ev = _psd_eigvals(K)
    return float(np.sum(ev / (ev + lam)))


@dataclass(frozen=True)
class ChainReport:
    """``d_eff <= sum_var <= logdet <= upper``; ``slack[i]`` is right minus left."""

    t: int
    d_eff: float
    sum_var: float
    logdet: float
    upper: float
    slack: tuple[float, float, float]
    holds: tuple[bool, bool, bool]
    tol: float

    @property
    def all_hold(self) -> bool:
        return all(self.holds)


def logdet_deff_chain(K, lam: float, per_step_variances, tol: float = CHAIN_TOL) -> ChainReport:
    """Evaluate the chain for Gram ``K`` of the first ``t`` pulls.

    ``per_step_variances[s]`` must be the exact variance at the ``s``-th
    pulled arm once that pull's own observation is included.
    """
    K = _square(K)
    v = np.asarray(per_step_variances, dtype=float)
    t = K.shape[0]
    if v.shape != (t,):
        raise ValueError(f"need {t} per-step variances, got shape {v.shape}")
    ev = _psd_eigvals(K)
    d_eff = float(np.sum(ev / (ev + lam)))
    s = float(v.sum())
    logdet = float(np.sum(np.log1p(ev / lam)))
    upper = d_eff * (1.0 + math.log(ev.max(initial=0.0) / lam + 1.0))
    slack = (s - d_eff, logdet - s, upper - logdet)
    return ChainReport(t, d_eff, s, logdet, upper, slack, tuple(x >= -tol for x in slack), tol)


@dataclass(frozen=True)
class MonotonicityReport:
    steps: int
    decrease_violations: int
    floor_violations: int
    worst_slack: float

    @property
    def violations(self) -> int:
        return self.decrease_violations + self.floor_violations


def monotonicity_check(prior_var, post_var, kappa_sq: float, lam: float, tol: float = CHAIN_TOL) -> MonotonicityReport:
    """Check ``post <= prior`` and ``prior / (kappa^2/lam + 1) <= post`` stepwise.

    ``prior_var[s]`` and ``post_var[s]`` are the exact variance at the arm
    pulled at step ``s`` just before and just after its observation.
    """
    prior = np.asarray(prior_var, dtype=float)
    post = np.asarray(post_var, dtype=float)
    if prior.shape != post.shape:
        raise ValueError("prior and posterior variance series differ in length")
    dec = prior - post
    floor = post - prior / (kappa_sq / lam + 1.0)
    worst = float(min(dec.min(initial=np.inf), floor.min(initial=np.inf)))
    return MonotonicityReport(
        prior.size,
        int(np.count_nonzero(dec < -tol)),
        int(np.count_nonzero(floor < -tol)),
        worst,
    )


@dataclass(frozen=True)
class SandwichReport:
    eig_min: float
    eig_max: float
    alpha: float
    within: bool
    eps_accurate: bool
    eps_slack: tuple[float, float]


def linear_oracle_sandwich(
    spec: KernelSpec,
    history,
    dictionary: Dictionary,
    lam: float,
    eps: float,
    weighted: bool = True,
    tol: float = 1e-10,
) -> SandwichReport:
    """Compare ``A = X^T X + lam I`` with ``A~ = P X^T X P + lam I`` explicitly.

    ``P`` projects onto the span of the dictionary rows.  The generalized
    eigenvalues of ``(A, A~)`` lie in ``[1/alpha, alpha]`` exactly when
    ``A / alpha <= A~ <= alpha A``.  The eps-accuracy check compares
    ``sum_i w_i x_i x_i^T`` over the dictionary with ``X^T X``, where
    ``w_i = 1 / p_i`` (or 1 with ``weighted=False``).
    """
    if spec.family is not Family.LINEAR:
        raise ValueError("the explicit sandwich oracle needs a linear kernel")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    X = as_arms(history, "history")
    t, d = X.shape
    idx = np.asarray(dictionary.indices, dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= t:
        raise ValueError("dictionary positions must index the history")
    alpha = (1 + eps) / (1 - eps)

    G = X.T @ X
    B = orth(X[idx].T)
    P = B @ B.T
    A = G + lam * np.eye(d)
    A_t = P @ G @ P + lam * np.eye(d)
    ev = eigh(A, 0.5 * (A_t + A_t.T), eigvals_only=True)
    lo, hi = float(ev.min()), float(ev.max())
    within = lo >= (1 / alpha) * (1 - tol) and hi <= alpha * (1 + tol)

    probs = np.asarray(dictionary.probs, dtype=float)[idx]
    w = 1.0 / probs if weighted else np.ones(idx.size)
    Xs = X[idx]
    H = (Xs.T * w) @ Xs
    lower = np.linalg.eigvalsh(H - (1 - eps) * G + eps * lam * np.eye(d)).min()
    upper = np.linalg.eigvalsh((1 + eps) * G + eps * lam * np.eye(d) - H).min()
    scale = max(1.0, float(np.linalg.norm(G, 2)))
    ok = lower >= -tol * scale and upper >= -tol * scale
    return SandwichReport(lo, hi, alpha, bool(within), bool(ok), (float(lower), float(upper)))


def cumulative_regret(trace: Trace, env: Environment) -> np.ndarray:
    """Prefix sums of ``f(x*) - f(x_t)`` recomputed from the pulled arms."""
    arms = np.asarray(trace.arm)
    if trace.inst_regret.shape != arms.shape:
        raise ValueError("trace columns have mismatched lengths")
    if arms.size and (arms.min() < 0 or arms.max() >= env.n_arms):
        raise ValueError("trace pulls arms outside the environment")
    return np.cumsum(env.best_value - env.f_values[arms])


@dataclass
class AccuracyReport:
    """Sketch-vs-exact comparison of one BKB run; row ``t - 1`` describes time ``t``.

    ``ratios[t - 1, x]`` is ``sigma~_t^2(x) / sigma_t^2(x)`` with the sketch
    and the exact posterior both built on the first ``t`` pulls.
    """

    alpha: float
    ratios: np.ndarray
    violations: int
    m: np.ndarray
    d_eff: np.ndarray
    logdet: np.ndarray
    size_bound: np.ndarray
    size_violations: int

    @property
    def failed(self) -> bool:
        return self.violations > 0


def audit_bkb_run(
    arms,
    env: Environment,
    params: BkbParams,
    T: int,
    rng: np.random.Generator,
    rel_tol: float = 1e-9,
) -> tuple[Trace, AccuracyReport]:
    """Run BKB while tracking the exact posterior on the same pulls.

    At every ``t in [1, T]`` the sketch variance of every arm is compared
    with the exact one, and the dictionary size with
    ``3 (1 + kappa^2/lam) alpha qbar d_eff(lam, X_t)``.  The exact variances
    do not depend on rewards, so the shadow posterior is fed zeros.
    """
    arms = as_arms(arms)
    spec, lam = params.kernel, params.lam
    alpha = params.sampling.alpha
    qbar = params.sampling.qbar
    A = arms.shape[0]
    kappa_sq = float(diag(spec, arms).max())
    shadow = ExactPosterior(spec, lam, dim=arms.shape[1])
    ratios = np.full((T, A), np.nan)
    m = np.zeros(T, dtype=np.int64)
    d_eff = np.full(T, np.nan)
    logdet = np.full(T, np.nan)

    def observe(view: StepView) -> None:
        t = view.t
        for a in view.history[shadow.t :]:
            shadow.update(arms[a], 0.0, int(a))
        _, exact = shadow.predict(arms)
        ratios[t - 1] = view.var / exact
        m[t - 1] = view.dictionary_arms.size
        counts = np.bincount(view.history, minlength=A)
        d_eff[t - 1] = float(counts @ exact)
        logdet[t - 1] = shadow.logdet_ratio()

    trace = run_bkb(arms, env, params, T, rng, observer=observe)
    lo, hi = (1 / alpha) * (1 - rel_tol), alpha * (1 + rel_tol)
    violations = int(np.count_nonzero((ratios < lo) | (ratios > hi)))
    bound = 3.0 * (1.0 + kappa_sq / lam) * alpha * qbar * d_eff
    size_violations = int(np.count_nonzero(m > bound))
    report = AccuracyReport(alpha, ratios, violations, m, d_eff, logdet, bound, size_violations)
    return trace, report
