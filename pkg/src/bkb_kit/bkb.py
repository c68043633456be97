"""The BKB bandit loop, its adaptive confidence radius, and exact GP-UCB."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

import numpy as np

from .dictionary import Dictionary, SamplingParams, resample
from .environment import Environment
from .gp_exact import ExactPosterior, exact_beta
from .kernels import KernelSpec, as_arms, diag, gram
from .sketch import SketchState, build_embedding, rebuild_sketch

__all__ = [
    "BetaMode",
    "VarSum",
    "BkbParams",
    "Trace",
    "StepView",
    "beta_tilde",
    "select_arm",
    "run_bkb",
    "run_gpucb",
    "sequential_dictionaries",
    "sequential_dictionary",
]


class BetaMode(str, Enum):
    ADAPTIVE = "adaptive"  # beta~_t from the sampled variances
    FIXED = "fixed"  # constant override
    EXACT = "exact"  # radius from logdet(K_t/lam + I)


class VarSum(str, Enum):
    CACHED = "cached"  # variances stored when each arm was chosen
    STRICT = "strict"  # all pulls re-evaluated under the current sketch


@dataclass(frozen=True)
class BkbParams:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    xi: float = 0.1
    lam: float | None = None
    F: float = 1.0
    beta_mode: BetaMode = BetaMode.ADAPTIVE
    beta_value: float | None = None
    var_sum: VarSum = VarSum.STRICT

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta_mode", BetaMode(self.beta_mode))
        object.__setattr__(self, "var_sum", VarSum(self.var_sum))
        if self.lam is None:
            object.__setattr__(self, "lam", self.xi**2)
        for name in ("xi", "lam", "F"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.beta_mode is BetaMode.FIXED:
            if self.beta_value is None or not self.beta_value >= 0:
                raise ValueError("fixed beta mode needs a nonnegative beta_value")


def beta_tilde(t: int, sum_var: float, kappa_sq: float, params: BkbParams) -> float:
    """Adaptive radius ``2 xi sqrt(alpha L_t S + log(1/delta)) + c sqrt(lam) F``.

    ``L_t = log(kappa^2 t)`` once ``2 log(kappa^2 t) >= 1 + log(kappa^2 t + 1)``;
    before that (including ``kappa^2 t < 1`` where the log is negative) it is
    ``(1 + log(kappa^2 t + 1)) / 2``, the quantity the looser form stands in for.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if sum_var < 0:
        raise ValueError("sum_var must be nonnegative")
    s = params.sampling
    kt = kappa_sq * t
    safe = 0.5 * (1.0 + math.log(kt + 1.0))
    log_term = math.log(kt) if kt > 0 else -math.inf
    L = log_term if log_term >= safe else safe
    radicand = s.alpha * L * sum_var + math.log(1.0 / s.delta)
    bias = (1.0 + 1.0 / math.sqrt(1.0 - s.eps)) * math.sqrt(params.lam) * params.F
    return 2.0 * params.xi * math.sqrt(radicand) + bias


def select_arm(scores) -> int:
    """Index of the largest score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty vector")
    bad = np.flatnonzero(~np.isfinite(scores))
    if bad.size:
        raise ValueError(f"non-finite score at arm {int(bad[0])}")
    return int(np.argmax(scores))


TRACE_COLUMNS = (
    "t",
    "arm_index",
    "reward",
    "inst_regret",
    "cum_regret",
    "m_t",
    "beta",
    "sum_var",
    "step_ms",
    "clamp_events",
    "fallback_events",
)
TIMING_COLUMNS = ("step_ms",)


@dataclass
class Trace:
    """Per-step record of one run; row ``i`` describes pull ``t = i + 1``.

    ``beta`` and ``sum_var`` are the values used to choose that pull (``nan``
    for the uniformly random first pull).  ``m`` is the dictionary size after
    the pull (``t`` for GP-UCB).  ``chosen_var`` is the variance of the chosen
    arm when it was scored; ``post_var`` is the exact variance at that arm once
    its reward is included (GP-UCB only).
    """

    algorithm: str
    arm: np.ndarray
    reward: np.ndarray
    inst_regret: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    sum_var: np.ndarray
    sum_var_strict: np.ndarray
    chosen_var: np.ndarray
    post_var: np.ndarray
    step_ms: np.ndarray
    clamp_events: np.ndarray
    fallback_events: np.ndarray

    @classmethod
    def empty(cls, T: int, algorithm: str) -> "Trace":
        def nan():
            return np.full(T, np.nan)

        def zeros():
            return np.zeros(T, dtype=np.int64)

        return cls(
            algorithm, zeros(), nan(), nan(), zeros(), nan(), nan(), nan(),
            nan(), nan(), nan(), zeros(), zeros(),
        )

    def __len__(self) -> int:
        return self.arm.shape[0]

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    def rows(self):
        cum = self.cum_regret
        for i in range(len(self)):
            yield (
                i + 1,
                int(self.arm[i]),
                float(self.reward[i]),
                float(self.inst_regret[i]),
                float(cum[i]),
                int(self.m[i]),
                float(self.beta[i]),
                float(self.sum_var[i]),
                float(self.step_ms[i]),
                int(self.clamp_events[i]),
                int(self.fallback_events[i]),
            )


@dataclass
class StepView:
    """What an observer sees right before an arm is chosen (``t`` pulls done)."""

    t: int
    history: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    beta: float
    sketch: SketchState | None = None
    dictionary_arms: np.ndarray | None = None
    sor_var: np.ndarray | None = None


Observer = Callable[[StepView], None]


def _check_inputs(arms, env: Environment, T: int) -> np.ndarray:
    arms = as_arms(arms)
    if arms.shape != env.arms.shape or not np.array_equal(arms, env.arms):
        raise ValueError("arm set does not match the environment's arm set")
    if T < 1:
        raise ValueError("T must be >= 1")
    return arms


def _observe(env: Environment, arm: int, rng: np.random.Generator, t: int) -> float:
    try:
        return env.observe(arm, rng)
    except Exception as exc:
        raise RuntimeError(f"environment failed at step {t} (arm {arm}): {exc}") from exc


def run_bkb(
    arms,
    env: Environment,
    params: BkbParams,
    T: int,
    rng: np.random.Generator,
    *,
    variance: str = "dtc",
    fixed_dictionary: int | None = None,
    observer: Observer | None = None,
    name: str | None = None,
) -> Trace:
    """Run BKB for ``T`` pulls.

    ``variance="sor"`` swaps the DTC variance for the subset-of-regressors one
    (starvation ablation).  ``fixed_dictionary=m`` freezes the dictionary to
    ``m`` distinct arms drawn uniformly once, instead of resampling.

    ``rng`` is split into an algorithm stream (first pull, dictionary draws)
    and a reward-noise stream, so runs sharing a seed see the same noise.
    """
    arms = _check_inputs(arms, env, T)
    if variance not in ("dtc", "sor"):
        raise ValueError(f"variance must be 'dtc' or 'sor', got {variance!r}")
    spec, lam = params.kernel, params.lam
    qbar = params.sampling.qbar
    A = arms.shape[0]
    K_AA = gram(spec, arms)
    kdiag = diag(spec, arms)
    ksq = float(kdiag.max())
    alg_rng, noise_rng = rng.spawn(2)
    if name is None:
        name = "bkb" if variance == "dtc" else "sor_ablation"
        if fixed_dictionary is not None:
            name = f"fixed_dict({fixed_dictionary})"
    trace = Trace.empty(T, name)

    counts = np.zeros(A)
    reward_sums = np.zeros(A)
    hist = np.zeros(T, dtype=np.int64)

    def record(i: int, a: int, y: float, m: int, started: float) -> None:
        hist[i] = a
        counts[a] += 1
        reward_sums[a] += y
        trace.arm[i] = a
        trace.reward[i] = y
        trace.inst_regret[i] = env.best_value - env.f_values[a]
        trace.m[i] = m
        trace.step_ms[i] = (time.perf_counter() - started) * 1e3

    started = time.perf_counter()
    a = int(alg_rng.integers(A))
    y = _observe(env, a, noise_rng, 1)
    trace.chosen_var[0] = kdiag[a] / lam
    if fixed_dictionary is not None:
        if not 1 <= fixed_dictionary <= A:
            raise ValueError(f"fixed dictionary size must lie in [1, {A}]")
        fixed_arms = np.sort(alg_rng.choice(A, size=fixed_dictionary, replace=False))
        positions = None
        m0 = fixed_dictionary
    else:
        fixed_arms = None
        positions = np.array([0])
        m0 = 1
    record(0, a, y, m0, started)

    cache: dict = {}

    def score(t: int, d_arms: np.ndarray):
        key = tuple(d_arms.tolist())
        if cache.get("key") != key:
            emb = build_embedding(spec, arms[d_arms], K_S=K_AA[np.ix_(d_arms, d_arms)])
            cache.update(key=key, emb=emb, Z=emb.project(K_AA[:, d_arms]))
        Z_A = cache["Z"]
        pulled = np.flatnonzero(counts)
        st = rebuild_sketch(
            cache["emb"], arms[pulled], counts[pulled], reward_sums[pulled], lam, Z=Z_A[pulled]
        )
        mean, dtc, sor = st.predict_embedded(Z_A, kdiag)
        var = dtc if variance == "dtc" else sor
        s_strict = float(counts @ var)
        s = float(np.sum(trace.chosen_var[:t])) if params.var_sum is VarSum.CACHED else s_strict
        if params.beta_mode is BetaMode.ADAPTIVE:
            beta = beta_tilde(t, s, ksq, params)
        elif params.beta_mode is BetaMode.FIXED:
            beta = float(params.beta_value)
        else:
            beta = exact_beta(st.logdet_ratio(), lam, params.F, params.xi, params.sampling.delta)
        if observer is not None:
            observer(StepView(t, hist[:t].copy(), mean, var, beta, st, d_arms.copy(), sor))
        return st, mean, var, beta, s, s_strict

    def current_dictionary() -> np.ndarray:
        return fixed_arms if fixed_arms is not None else hist[positions]

    for i in range(1, T):
        started = time.perf_counter()
        t = i  # pulls so far
        st, mean, var, beta, s, s_strict = score(t, current_dictionary())
        clamps = st.clamp_events
        a = select_arm(mean + beta * np.sqrt(var))
        y = _observe(env, a, noise_rng, t + 1)

        trace.beta[i] = beta
        trace.sum_var[i] = s
        trace.sum_var_strict[i] = s_strict
        trace.chosen_var[i] = var[a]
        trace.clamp_events[i] = clamps
        if fixed_arms is None:
            hist[i] = a
            d = resample(var[hist[: t + 1]], qbar, alg_rng)
            positions = d.indices
            trace.fallback_events[i] = int(d.fallback)
            m = d.size
        else:
            m = fixed_arms.size
        record(i, a, y, m, started)
    if observer is not None:
        # final state (t = T) is scored for observers only; no arm is chosen
        score(T, current_dictionary())
    return trace


def run_gpucb(
    arms,
    env: Environment,
    params: BkbParams,
    T: int,
    rng: np.random.Generator,
    *,
    observer: Observer | None = None,
) -> Trace:
    """Exact GP-UCB with the ``logdet`` confidence radius (or a fixed beta).

    Uses the same stream split as :func:`run_bkb`, so the first pull and the
    reward noise coincide for a shared seed.
    """
    arms = _check_inputs(arms, env, T)
    spec, lam = params.kernel, params.lam
    A = arms.shape[0]
    kdiag = diag(spec, arms)
    alg_rng, noise_rng = rng.spawn(2)
    trace = Trace.empty(T, "gpucb")
    post = ExactPosterior(spec, lam, dim=arms.shape[1])

    started = time.perf_counter()
    a = int(alg_rng.integers(A))
    var_a = kdiag[a] / lam
    for i in range(T):
        if i:
            started = time.perf_counter()
            clamps_before = post.clamp_events
            mean, var = post.predict(arms)
            if params.beta_mode is BetaMode.FIXED:
                beta = float(params.beta_value)
            else:
                beta = post.exact_beta(params.F, params.xi, params.sampling.delta)
            if observer is not None:
                observer(StepView(i, np.asarray(trace.arm[:i]).copy(), mean, var, beta))
            a = select_arm(mean + beta * np.sqrt(var))
            var_a = var[a]
            trace.beta[i] = beta
            trace.sum_var[i] = float(np.sum(trace.chosen_var[:i]))
            trace.clamp_events[i] = post.clamp_events - clamps_before
        y = _observe(env, a, noise_rng, i + 1)
        post.update(arms[a], y, a)
        trace.arm[i] = a
        trace.reward[i] = y
        trace.inst_regret[i] = env.best_value - env.f_values[a]
        trace.m[i] = i + 1
        trace.chosen_var[i] = var_a
        trace.step_ms[i] = (time.perf_counter() - started) * 1e3
        trace.post_var[i] = post.posterior_variance(arms[a])
    return trace


def sequential_dictionaries(
    spec: KernelSpec,
    history,
    lam: float,
    qbar: float,
    rng: np.random.Generator,
    *,
    variance: str = "dtc",
) -> Iterator[Dictionary]:
    """Replay BKB's dictionary updates over a fixed sequence of evaluations.

    No arm is chosen: row ``s`` of ``history`` is simply the ``s``-th pull.
    Yields the dictionary in force after each pull (so the ``t``-th item,
    counting from 1, is ``S_t``).  The first pull seeds the dictionary; after
    each later pull every position is resampled with the variances of the
    sketch built before that pull, as in :func:`run_bkb`.  Dictionaries index
    rows of ``history``.
    """
    X = as_arms(history, "history")
    if variance not in ("dtc", "sor"):
        raise ValueError(f"variance must be 'dtc' or 'sor', got {variance!r}")
    K = gram(spec, X)
    kdiag = diag(spec, X)
    d = Dictionary(np.array([0]), np.ones(1))
    yield d
    for s in range(1, X.shape[0]):
        pos = d.indices
        emb = build_embedding(spec, X[pos], K_S=K[np.ix_(pos, pos)])
        Z = emb.project(K[: s + 1, pos])
        st = rebuild_sketch(emb, X[:s], np.ones(s), np.zeros(s), lam, Z=Z[:s])
        _, dtc, sor = st.predict_embedded(Z, kdiag[: s + 1])
        d = resample(dtc if variance == "dtc" else sor, qbar, rng)
        yield d


def sequential_dictionary(spec: KernelSpec, history, lam: float, qbar: float, rng, **kw) -> Dictionary:
    """Final dictionary of :func:`sequential_dictionaries`."""
    for d in sequential_dictionaries(spec, history, lam, qbar, rng, **kw):
        pass
    return d
