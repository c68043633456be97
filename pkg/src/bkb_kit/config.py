"""Experiment configuration: a flat TOML file with dotted keys.

Example::

    kernel.family = "gaussian"
    kernel.gamma = 100.0
    arms.kind = "grid"
    arms.count = 100
    T = 500
    model.xi = 0.1
    sampling.qbar_mode = "override"
    sampling.qbar = 4.0
    algorithms = ["bkb", "gpucb"]
    seeds = [0, 1, 2]

Every key is optional except ``T``; see ``DEFAULTS`` for the rest.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bkb import BetaMode, BkbParams, VarSum
from .dictionary import SamplingParams, make_rng
from .kernels import Family, KernelSpec

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "DEFAULTS"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS: dict[str, object] = {
    "kernel.family": "gaussian",
    "kernel.gamma": 1.0,
    "kernel.nu": 2.5,
    "kernel.lengthscale": 1.0,
    "arms.kind": "grid",  # grid | uniform | file
    "arms.count": 20,
    "arms.dim": 1,
    "arms.low": 0.0,
    "arms.high": 1.0,
    "arms.file": None,
    "arms.seed": 0,
    "env.noise": None,  # defaults to model.xi
    "env.jitter": 1e-10,
    "model.lambda": None,  # defaults to model.xi ** 2
    "model.xi": 0.1,
    "model.F": 1.0,
    "sampling.eps": 0.5,
    "sampling.delta": 0.1,
    "sampling.qbar_mode": "theorem",  # theorem | override | infinite
    "sampling.qbar": None,
    "beta.mode": "adaptive",
    "beta.value": None,
    "beta.var_sum": "strict",
    "verify.checkpoints": [10, 50, 100, 200],
    "bench.fit_start": 100,
    "bench.repeats": 3,
    "algorithms": ["bkb", "gpucb"],
    "seeds": [0],
    "output_dir": "out",
}
REQUIRED = ("T",)
ALGORITHM = re.compile(r"^(bkb|gpucb|sor_ablation|fixed_dict\((\d+)\))$")


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _num(raw: dict, key: str, *, positive=False, unit=False, integer=False, allow_none=False):
    v = raw[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if integer and not float(v).is_integer():
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(key, f"must be finite, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(key, f"must be positive, got {v!r}")
    if unit and not 0 < v < 1:
        raise ConfigError(key, f"must lie in (0, 1), got {v!r}")
    return int(v) if integer else float(v)


def _choice(raw: dict, key: str, options) -> str:
    v = raw[key]
    if v not in options:
        raise ConfigError(key, f"expected one of {sorted(options)}, got {v!r}")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    kernel: KernelSpec
    arms: np.ndarray
    T: int
    lam: float
    xi: float
    F: float
    noise: float
    jitter: float
    eps: float
    delta: float
    qbar_mode: str
    qbar: float
    beta_mode: BetaMode
    beta_value: float | None
    var_sum: VarSum
    algorithms: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: Path
    checkpoints: tuple[int, ...] = (10, 50, 100, 200)
    bench_fit_start: int = 100
    bench_repeats: int = 3
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def params(self) -> BkbParams:
        sampling = SamplingParams(self.eps, self.delta, self.T, qbar=self.qbar)
        return BkbParams(
            self.kernel, sampling, self.xi, self.lam, self.F,
            self.beta_mode, self.beta_value, self.var_sum,
        )


def _arms(raw: dict, base: Path | None) -> np.ndarray:
    kind = _choice(raw, "arms.kind", {"grid", "uniform", "file"})
    if kind == "file":
        name = raw["arms.file"]
        if not isinstance(name, str):
            raise ConfigError("arms.file", "a path is required when arms.kind = 'file'")
        path = Path(name)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            X = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError("arms.file", f"cannot read {path}: {exc}") from exc
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0 or not np.all(np.isfinite(X)):
            raise ConfigError("arms.file", "must hold a non-empty finite 2-D matrix")
        return X
    n = _num(raw, "arms.count", positive=True, integer=True)
    dim = _num(raw, "arms.dim", positive=True, integer=True)
    lo, hi = _num(raw, "arms.low"), _num(raw, "arms.high")
    if not lo < hi:
        raise ConfigError("arms.high", f"must exceed arms.low ({lo})")
    if kind == "grid":
        if dim != 1:
            raise ConfigError("arms.dim", "grid arms are one-dimensional; use 'uniform' or 'file'")
        return np.linspace(lo, hi, n)[:, None]
    seed = _num(raw, "arms.seed", integer=True)
    return make_rng(seed).uniform(lo, hi, size=(n, dim))


def parse_config(data: dict, base: Path | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document; every error names its key."""
    flat = _flatten(data)
    unknown = sorted(set(flat) - set(DEFAULTS) - set(REQUIRED))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in REQUIRED:
        if key not in flat:
            raise ConfigError(key, "missing required key")
    raw = {**DEFAULTS, **flat}

    family = _choice(raw, "kernel.family", {f.value for f in Family})
    try:
        kernel = KernelSpec(
            Family(family),
            gamma=_num(raw, "kernel.gamma", positive=True),
            nu=_num(raw, "kernel.nu", positive=True),
            lengthscale=_num(raw, "kernel.lengthscale", positive=True),
        )
    except ValueError as exc:
        raise ConfigError("kernel.nu", str(exc)) from exc

    T = _num(raw, "T", positive=True, integer=True)
    xi = _num(raw, "model.xi", positive=True)
    lam = _num(raw, "model.lambda", positive=True, allow_none=True)
    lam = xi**2 if lam is None else lam
    F = _num(raw, "model.F", positive=True)
    noise = _num(raw, "env.noise", allow_none=True)
    noise = xi if noise is None else noise
    if noise < 0:
        raise ConfigError("env.noise", f"must be nonnegative, got {noise}")
    jitter = _num(raw, "env.jitter")
    if jitter < 0:
        raise ConfigError("env.jitter", f"must be nonnegative, got {jitter}")

    eps = _num(raw, "sampling.eps", unit=True)
    delta = _num(raw, "sampling.delta", unit=True)
    mode = _choice(raw, "sampling.qbar_mode", {"theorem", "override", "infinite"})
    if mode == "override":
        qbar = _num(raw, "sampling.qbar", positive=True)
    elif mode == "infinite":
        qbar = math.inf
    else:
        qbar = SamplingParams(eps, delta, T).qbar

    beta_mode = BetaMode(_choice(raw, "beta.mode", {b.value for b in BetaMode}))
    beta_value = _num(raw, "beta.value", allow_none=True)
    if beta_mode is BetaMode.FIXED and (beta_value is None or beta_value < 0):
        raise ConfigError("beta.value", "fixed beta mode needs a nonnegative value")
    var_sum = VarSum(_choice(raw, "beta.var_sum", {v.value for v in VarSum}))

    arms = _arms(raw, base)
    algos = raw["algorithms"]
    if not isinstance(algos, list) or not algos:
        raise ConfigError("algorithms", "expected a non-empty list")
    for a in algos:
        match = ALGORITHM.match(str(a))
        if match is None:
            raise ConfigError("algorithms", f"unknown algorithm {a!r}")
        if match.group(2) is not None and not 1 <= int(match.group(2)) <= arms.shape[0]:
            raise ConfigError("algorithms", f"{a}: size must lie in [1, {arms.shape[0]}]")
    seeds = raw["seeds"]
    if (
        not isinstance(seeds, list)
        or not seeds
        or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)
    ):
        raise ConfigError("seeds", "expected a non-empty list of nonnegative integers")
    checkpoints = raw["verify.checkpoints"]
    if not isinstance(checkpoints, list) or not all(isinstance(c, int) and c >= 1 for c in checkpoints):
        raise ConfigError("verify.checkpoints", "expected a list of positive integers")

    return ExperimentConfig(
        kernel=kernel,
        arms=arms,
        T=T,
        lam=lam,
        xi=xi,
        F=F,
        noise=noise,
        jitter=jitter,
        eps=eps,
        delta=delta,
        qbar_mode=mode,
        qbar=qbar,
        beta_mode=beta_mode,
        beta_value=beta_value,
        var_sum=var_sum,
        algorithms=tuple(str(a) for a in algos),
        seeds=tuple(seeds),
        output_dir=Path(str(raw["output_dir"])),
        checkpoints=tuple(checkpoints),
        bench_fit_start=_num(raw, "bench.fit_start", positive=True, integer=True),
        bench_repeats=_num(raw, "bench.repeats", positive=True, integer=True),
        source=flat,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from exc
    return parse_config(data, base=path.parent)
