"""Experiment execution and CSV output for the four CLI commands."""

from __future__ import annotations

import csv
import gc
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .bkb import (
    TIMING_COLUMNS,
    TRACE_COLUMNS,
    Trace,
    run_bkb,
    run_gpucb,
    sequential_dictionaries,
    sequential_dictionary,
)
from .config import ALGORITHM, ConfigError, ExperimentConfig
from .dictionary import make_rng
from .environment import Environment, fig1_environment, gp_environment
from .gp_exact import ExactPosterior
from .kernels import Family, gram, kappa_sq
from .metrics import (
    AccuracyReport,
    ChainReport,
    MonotonicityReport,
    SandwichReport,
    audit_bkb_run,
    linear_oracle_sandwich,
    logdet_deff_chain,
    monotonicity_check,
)
from .sketch import build_embedding, rebuild_sketch

__all__ = [
    "TRACE_HEADER",
    "CellError",
    "build_environment",
    "run_cell",
    "write_trace_csv",
    "read_trace_body",
    "cmd_run",
    "cmd_starvation",
    "cmd_verify",
    "cmd_bench",
]

log = logging.getLogger("bkb_kit")

TRACE_HEADER = "# bkb-kit trace v1"
SUMMARY_COLUMNS = (
    "algorithm", "seed", "T", "A", "cum_regret", "final_m", "total_ms",
    "clamp_events", "fallback_events",
)
STARVATION_COLUMNS = ("x", "f", "mu_tilde", "sigma_tilde", "sigma_exact", "sigma_sor")


class CellError(RuntimeError):
    """A single (algorithm, seed) cell failed."""

    def __init__(self, algorithm: str, seed: int, cause: BaseException):
        super().__init__(f"cell ({algorithm}, seed {seed}) failed: {cause}")
        self.algorithm = algorithm
        self.seed = seed


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Environment and run generators for one seed; shared by all algorithms."""
    return make_rng([seed, 0]), make_rng([seed, 1])


def build_environment(cfg: ExperimentConfig, seed: int) -> Environment:
    env_rng, _ = _rngs(seed)
    return gp_environment(cfg.kernel, cfg.arms, cfg.noise, env_rng, jitter=cfg.jitter)


def run_cell(cfg: ExperimentConfig, algorithm: str, seed: int) -> Trace:
    match = ALGORITHM.match(algorithm)
    if match is None:
        raise ConfigError("algorithms", f"unknown algorithm {algorithm!r}")
    try:
        env = build_environment(cfg, seed)
        _, rng = _rngs(seed)
        params = cfg.params()
        if algorithm == "gpucb":
            return run_gpucb(cfg.arms, env, params, cfg.T, rng)
        if algorithm == "bkb":
            return run_bkb(cfg.arms, env, params, cfg.T, rng)
        if algorithm == "sor_ablation":
            return run_bkb(cfg.arms, env, params, cfg.T, rng, variance="sor")
        m = int(match.group(2))
        return run_bkb(cfg.arms, env, params, cfg.T, rng, fixed_dictionary=m, name=algorithm)
    except Exception as exc:
        raise CellError(algorithm, seed, exc) from exc


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; results are always gathered in the caller."""
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable, header: str | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if header is not None:
            fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_trace_csv(path, trace: Trace) -> Path:
    return _write_csv(Path(path), TRACE_COLUMNS, trace.rows(), header=TRACE_HEADER)


def read_trace_body(path, drop_timing: bool = True) -> list[list[str]]:
    """Header and rows of a trace CSV, optionally without timing columns."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_HEADER:
            raise ValueError(f"{path}: unsupported trace version line {first!r}")
        rows = list(csv.reader(fh))
    keep = [i for i, c in enumerate(rows[0]) if not (drop_timing and c in TIMING_COLUMNS)]
    return [[r[i] for i in keep] for r in rows]


def _trace_name(algorithm: str) -> str:
    return algorithm.replace("(", "").replace(")", "")


@dataclass
class RunResult:
    traces: dict[tuple[str, int], Trace]
    trace_paths: list[Path]
    summary_path: Path


def cmd_run(
    cfg: ExperimentConfig, output=None, workers: int = 1, seed_offset: int = 0
) -> RunResult:
    """Run every (algorithm, seed) cell and write one trace CSV per cell plus a summary."""
    out = Path(output) if output is not None else cfg.output_dir
    cells = [(cfg, a, s + seed_offset) for a in cfg.algorithms for s in cfg.seeds]
    log.info("running %d cells with %d worker(s)", len(cells), workers)
    traces = _pool_map(run_cell, cells, workers)
    result: dict[tuple[str, int], Trace] = {}
    paths, summary = [], []
    A = cfg.arms.shape[0]
    for (_, alg, seed), tr in zip(cells, traces):
        result[(alg, seed)] = tr
        paths.append(write_trace_csv(out / f"trace_{_trace_name(alg)}_seed{seed}.csv", tr))
        summary.append((
            alg, seed, cfg.T, A, float(tr.cum_regret[-1]), int(tr.m[-1]),
            float(np.sum(tr.step_ms)), int(tr.clamp_events.sum()), int(tr.fallback_events.sum()),
        ))
        log.debug("cell %s seed %d: R_T=%.4g m_T=%d", alg, seed, tr.cum_regret[-1], tr.m[-1])
    summary_path = _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    return RunResult(result, paths, summary_path)


# -- variance starvation ---------------------------------------------------


@dataclass
class StarvationSnapshot:
    """Posterior estimates on the grid after ``t`` evaluations (variances as std devs)."""

    seed: int
    t: int
    x: np.ndarray
    f: np.ndarray
    mu_tilde: np.ndarray
    sigma_tilde: np.ndarray
    sigma_exact: np.ndarray
    sigma_sor: np.ndarray
    dictionary_x: np.ndarray
    lam: float
    alpha: float

    def coverage(self, width: float = 3.0) -> float:
        """Fraction of grid points with ``|f - mu~| <= width * sqrt(lam) * sigma~``."""
        band = width * math.sqrt(self.lam) * self.sigma_tilde
        return float(np.mean(np.abs(self.f - self.mu_tilde) <= band))


def starvation_snapshots(
    seed: int = 0,
    checkpoints: Sequence[int] = (6, 63, 215),
    qbar: float = 4.0,
    grid_size: int = 512,
    xi: float = 0.1,
    gamma: float = 100.0,
    eps: float = 0.5,
) -> list[StarvationSnapshot]:
    """Fit the sketch on uniform draws from the left half of the grid.

    Evaluations are drawn with replacement from the grid points in
    ``[0, 0.5]``; the dictionary evolves exactly as in BKB, driven by DTC
    variances, and the SoR column reuses that dictionary.
    """
    env_rng, run_rng = _rngs(seed)
    env, design = fig1_environment(env_rng, grid_size=grid_size, noise_xi=xi, gamma=gamma,
                                   checkpoints=tuple(checkpoints))
    draw_rng, noise_rng, dict_rng = run_rng.spawn(3)
    lam = xi**2
    alpha = (1 + eps) / (1 - eps)
    spec = design.kernel
    n = max(design.checkpoints)
    picks = draw_rng.choice(design.pool, size=n, replace=True)
    X = env.arms[picks]
    y = np.array([env.observe(int(a), noise_rng) for a in picks])
    grid = env.arms
    kgrid = np.ones(grid.shape[0])

    wanted = set(design.checkpoints)
    snaps = []
    exact = ExactPosterior(spec, lam, dim=1)
    for t, d in enumerate(sequential_dictionaries(spec, X, lam, qbar, dict_rng), start=1):
        exact.update(X[t - 1], y[t - 1], int(picks[t - 1]))
        if t not in wanted:
            continue
        pos = d.indices
        emb = build_embedding(spec, X[pos])
        st = rebuild_sketch(emb, X[:t], np.ones(t), y[:t], lam)
        mean, dtc, sor = st.predict_embedded(emb.project(gram(spec, grid, X[pos])), kgrid)
        _, ex = exact.predict(grid)
        snaps.append(StarvationSnapshot(
            seed, t, grid[:, 0], env.f_values, mean, np.sqrt(dtc), np.sqrt(ex), np.sqrt(sor),
            X[pos, 0], lam, alpha,
        ))
    return snaps


def cmd_starvation(output="out/starvation", seeds: Sequence[int] = (0,), **kw) -> list[StarvationSnapshot]:
    """Write ``starvation_seed{s}_t{t}.csv`` for each seed and checkpoint."""
    out = Path(output)
    snaps = []
    for seed in seeds:
        for s in starvation_snapshots(seed, **kw):
            rows = zip(s.x, s.f, s.mu_tilde, s.sigma_tilde, s.sigma_exact, s.sigma_sor)
            _write_csv(out / f"starvation_seed{seed}_t{s.t}.csv", STARVATION_COLUMNS, rows)
            log.info("seed %d t=%d: m=%d coverage=%.3f", seed, s.t, s.dictionary_x.size, s.coverage())
            snaps.append(s)
    return snaps


# -- verification ----------------------------------------------------------


@dataclass
class SeedVerification:
    seed: int
    accuracy: AccuracyReport
    monotonicity: MonotonicityReport
    chains: list[ChainReport]
    sandwich: SandwichReport | None = None


def _verify_seed(cfg: ExperimentConfig, seed: int) -> SeedVerification:
    try:
        env = build_environment(cfg, seed)
        params = cfg.params()
        _, rng = _rngs(seed)
        bkb_trace, acc = audit_bkb_run(cfg.arms, env, params, cfg.T, rng)
        _, rng = _rngs(seed)
        exact = run_gpucb(cfg.arms, env, params, cfg.T, rng)
    except Exception as exc:
        raise CellError("verify", seed, exc) from exc
    ksq = kappa_sq(cfg.kernel, cfg.arms)
    mono = monotonicity_check(exact.chosen_var, exact.post_var, ksq, cfg.lam)
    chains = []
    for t in cfg.checkpoints:
        if t > cfg.T:
            continue
        X = cfg.arms[exact.arm[:t]]
        chains.append(logdet_deff_chain(gram(cfg.kernel, X), cfg.lam, exact.post_var[:t]))
    sandwich = None
    if cfg.kernel.family is Family.LINEAR:
        X = cfg.arms[bkb_trace.arm]
        d = sequential_dictionary(cfg.kernel, X, cfg.lam, cfg.qbar, make_rng([seed, 2]))
        sandwich = linear_oracle_sandwich(cfg.kernel, X, d, cfg.lam, cfg.eps)
    return SeedVerification(seed, acc, mono, chains, sandwich)


@dataclass
class VerifyResult:
    seeds: list[SeedVerification]
    paths: list[Path] = field(default_factory=list)

    @property
    def failure_fraction(self) -> float:
        return float(np.mean([s.accuracy.failed for s in self.seeds]))


def cmd_verify(
    cfg: ExperimentConfig, output=None, workers: int = 1, seed_offset: int = 0
) -> VerifyResult:
    """Accuracy, size, monotonicity and logdet-chain reports over seeded replicas."""
    if cfg.qbar_mode != "theorem":
        raise ConfigError("sampling.qbar_mode", "verify needs the accuracy-floor qbar (mode 'theorem')")
    out = Path(output) if output is not None else cfg.output_dir
    items = [(cfg, s + seed_offset) for s in cfg.seeds]
    res = VerifyResult(_pool_map(_verify_seed, items, workers))

    acc_rows, mono_rows, chain_rows, sw_rows = [], [], [], []
    for sv in res.seeds:
        a = sv.accuracy
        acc_rows.append((
            sv.seed, a.violations, float(np.min(a.ratios)), float(np.max(a.ratios)), a.failed,
            int(a.m.max()), float(np.min(a.size_bound - a.m)), a.size_violations,
        ))
        p = sv.monotonicity
        mono_rows.append((sv.seed, p.steps, p.decrease_violations, p.floor_violations, p.worst_slack))
        for c in sv.chains:
            chain_rows.append((sv.seed, c.t, c.d_eff, c.sum_var, c.logdet, c.upper, *c.slack, c.all_hold))
        if sv.sandwich is not None:
            s = sv.sandwich
            sw_rows.append((sv.seed, s.eig_min, s.eig_max, s.alpha, s.within, s.eps_accurate))
    res.paths.append(_write_csv(out / "accuracy.csv", (
        "seed", "violations", "ratio_min", "ratio_max", "failed", "max_m", "min_size_slack",
        "size_violations"), acc_rows))
    res.paths.append(_write_csv(out / "monotonicity.csv", (
        "seed", "steps", "decrease_violations", "floor_violations", "worst_slack"), mono_rows))
    res.paths.append(_write_csv(out / "chain.csv", (
        "seed", "t", "d_eff", "sum_var", "logdet", "upper", "slack_1", "slack_2", "slack_3",
        "holds"), chain_rows))
    if sw_rows:
        res.paths.append(_write_csv(out / "sandwich.csv", (
            "seed", "eig_min", "eig_max", "alpha", "within", "eps_accurate"), sw_rows))
    log.info("verify: %d seeds, run-level failure fraction %.3f", len(res.seeds), res.failure_fraction)
    return res


# -- timing ----------------------------------------------------------------


@dataclass
class BenchResult:
    A: int
    T: int
    step_ms: dict[str, np.ndarray]
    m: np.ndarray
    exponents: dict[str, float]
    burn_in: int
    bkb_median_ms: float
    bkb_max_over_median: float
    bkb_median_over_min: float
    paths: list[Path] = field(default_factory=list)

    @property
    def bkb_flat(self) -> bool:
        return self.bkb_max_over_median <= 3.0 and self.bkb_median_over_min <= 3.0


def fit_exponent(t: np.ndarray, ms: np.ndarray) -> float:
    """Least-squares slope of ``log ms`` against ``log t``."""
    return float(np.polyfit(np.log(t), np.log(ms), 1)[0])


def cmd_bench(cfg: ExperimentConfig, output=None, seed_offset: int = 0) -> BenchResult:
    """Per-step wall time of GP-UCB and BKB on one seed.

    Each algorithm runs ``bench.repeats`` times on identical inputs and the
    per-step minimum is kept, which filters scheduler noise.  BLAS is held to
    one thread and the garbage collector is paused while timing.
    """
    if cfg.qbar_mode == "theorem":
        raise ConfigError("sampling.qbar_mode", "bench needs a practical (override) qbar")
    seed = cfg.seeds[0] + seed_offset
    env = build_environment(cfg, seed)
    params = cfg.params()
    times: dict[str, np.ndarray] = {}
    m = None
    gc_was_enabled = gc.isenabled()
    try:
        with threadpool_limits(limits=1):
            gc.disable()
            for name, runner in (("gpucb", run_gpucb), ("bkb", run_bkb)):
                runs = []
                for _ in range(cfg.bench_repeats):
                    _, rng = _rngs(seed)
                    tr = runner(cfg.arms, env, params, cfg.T, rng)
                    runs.append(tr.step_ms)
                    gc.collect()
                times[name] = np.min(runs, axis=0)
                if name == "bkb":
                    m = tr.m
    finally:
        if gc_was_enabled:
            gc.enable()

    t = np.arange(1, cfg.T + 1)
    fit = t >= cfg.bench_fit_start
    exponents = {k: fit_exponent(t[fit], v[fit]) for k, v in times.items()}
    burn_in = 4 * int(m[-1])
    tail = times["bkb"][burn_in:]
    if tail.size == 0:
        raise RuntimeError(f"burn-in 4*m_T = {burn_in} leaves no steps; raise T")
    med = float(np.median(tail))
    res = BenchResult(
        cfg.arms.shape[0], cfg.T, times, m, exponents, burn_in, med,
        float(tail.max() / med), float(med / tail.min()),
    )
    out = Path(output) if output is not None else cfg.output_dir
    res.paths.append(_write_csv(
        out / "bench.csv", ("t", "gpucb_ms", "bkb_ms", "bkb_m"),
        zip(t, times["gpucb"], times["bkb"], m),
    ))
    res.paths.append(_write_csv(
        out / "bench_summary.csv",
        ("algorithm", "A", "T", "exponent", "median_ms_after_burn_in", "max_over_median",
         "median_over_min", "m_T", "burn_in"),
        [
            ("gpucb", res.A, res.T, exponents["gpucb"], float(np.median(times["gpucb"][fit])),
             math.nan, math.nan, cfg.T, 0),
            ("bkb", res.A, res.T, exponents["bkb"], med, res.bkb_max_over_median,
             res.bkb_median_over_min, int(m[-1]), burn_in),
        ],
    ))
    log.info("bench: exponents %s, bkb max/median %.2f", exponents, res.bkb_max_over_median)
    return res
