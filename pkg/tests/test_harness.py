import math
import textwrap

import numpy as np
import pytest

from bkb_kit import cli
from bkb_kit.config import ConfigError, load_config, parse_config
from bkb_kit.harness import (
    STARVATION_COLUMNS,
    TRACE_HEADER,
    cmd_bench,
    cmd_run,
    cmd_starvation,
    cmd_verify,
    read_trace_body,
    run_cell,
)

MINIMAL = """
T = 20
arms.count = 5
kernel.gamma = 10.0
sampling.qbar_mode = "override"
sampling.qbar = 4.0
algorithms = ["bkb"]
seeds = [0]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_minimal_config_writes_two_files(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    res = cmd_run(cfg, tmp_path / "out")
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["summary.csv", "trace_bkb_seed0.csv"]
    body = read_trace_body(res.trace_paths[0])
    assert len(body) == 21
    assert (tmp_path / "out/trace_bkb_seed0.csv").read_text().splitlines()[0] == TRACE_HEADER
    assert len(res.summary_path.read_text().splitlines()) == 2


def test_trace_schema_order(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    res = cmd_run(cfg, tmp_path / "out")
    header = read_trace_body(res.trace_paths[0], drop_timing=False)[0]
    assert header == [
        "t", "arm_index", "reward", "inst_regret", "cum_regret", "m_t", "beta", "sum_var",
        "step_ms", "clamp_events", "fallback_events",
    ]


def test_rerun_and_workers_give_identical_bodies(tmp_path):
    text = MINIMAL.replace('["bkb"]', '["bkb", "gpucb", "sor_ablation", "fixed_dict(3)"]').replace(
        "seeds = [0]", "seeds = [0, 1]"
    )
    cfg = load_config(write(tmp_path, text))
    a = cmd_run(cfg, tmp_path / "a")
    b = cmd_run(cfg, tmp_path / "b", workers=3)
    assert len(a.trace_paths) == 8
    for pa, pb in zip(a.trace_paths, b.trace_paths):
        assert pa.name == pb.name
        assert read_trace_body(pa) == read_trace_body(pb)


def test_seed_offset_shifts_seeds(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    res = cmd_run(cfg, tmp_path / "o", seed_offset=5)
    assert res.trace_paths[0].name == "trace_bkb_seed5.csv"


@pytest.mark.parametrize(
    "line,field",
    [
        ("sampling.eps = 1.5", "sampling.eps"),
        ("sampling.delta = 0.0", "sampling.delta"),
        ('kernel.family = "poly"', "kernel.family"),
        ("kernel.nu = 1.0\nkernel.family = 'matern'", "kernel.nu"),
        ("model.xi = -1.0", "model.xi"),
        ('algorithms = ["ucbv"]', "algorithms"),
        ('algorithms = ["fixed_dict(99)"]', "algorithms"),
        ("seeds = []", "seeds"),
        ("bogus.key = 1", "bogus.key"),
        ('beta.mode = "fixed"', "beta.value"),
        ('arms.kind = "file"', "arms.file"),
        ("arms.high = -1.0", "arms.high"),
    ],
)
def test_validation_names_field(tmp_path, line, field):
    text = "\n".join(l for l in MINIMAL.splitlines() if not l.startswith(line.split(" ")[0]))
    with pytest.raises(ConfigError) as info:
        load_config(write(tmp_path, text + "\n" + line + "\n"))
    assert info.value.field == field


def test_missing_horizon_rejected():
    with pytest.raises(ConfigError, match="T"):
        parse_config({"seeds": [0]})


def test_qbar_modes():
    assert parse_config({"T": 200}).qbar == pytest.approx(72 * math.log(8000))
    assert parse_config({"T": 5, "sampling": {"qbar_mode": "infinite"}}).qbar == math.inf
    assert parse_config({"T": 5, "model": {"xi": 0.5}}).lam == 0.25


def test_arms_from_file(tmp_path):
    np.savetxt(tmp_path / "arms.csv", np.arange(6.0).reshape(3, 2), delimiter=",")
    cfg = load_config(write(tmp_path, 'T = 3\narms.kind = "file"\narms.file = "arms.csv"\n'))
    assert cfg.arms.shape == (3, 2)
    cfg = parse_config({"T": 3, "arms": {"kind": "uniform", "count": 4, "dim": 3}})
    assert cfg.arms.shape == (4, 3)


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, MINIMAL)
    assert cli.main(["run", "--config", str(good), "--output", str(tmp_path / "o")]) == 0
    bad = write(tmp_path, MINIMAL + "sampling.eps = 1.5\n", "bad.toml")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "eps" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exits_one(tmp_path, capsys):
    # a Gram matrix this large in magnitude cannot be sampled even with maximal jitter
    text = MINIMAL.replace("kernel.gamma = 10.0", 'kernel.family = "linear"') + (
        "arms.low = 0.0\narms.high = 1e200\n"
    )
    assert cli.main(["run", "--config", str(write(tmp_path, text))]) == 1
    assert "seed 0" in capsys.readouterr().err


def test_run_cell_identifies_failure(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    with pytest.raises(ConfigError):
        run_cell(cfg, "nope", 0)


def test_starvation_outputs(tmp_path):
    snaps = cmd_starvation(tmp_path, seeds=(0,))
    assert [s.t for s in snaps] == [6, 63, 215]
    for t in (6, 63, 215):
        lines = (tmp_path / f"starvation_seed0_t{t}.csv").read_text().splitlines()
        assert lines[0].split(",") == list(STARVATION_COLUMNS)
        assert len(lines) == 513
    last = snaps[-1]
    assert np.all(last.dictionary_x <= 0.5)
    i = int(np.argmin(np.abs(last.x - 0.95)))
    assert last.sigma_sor[i] < 0.1 * last.sigma_exact[i]
    assert last.sigma_tilde[i] >= last.sigma_exact[i] / last.alpha


VERIFY = """
T = 40
arms.kind = "uniform"
arms.count = 12
arms.dim = 2
kernel.gamma = 2.0
seeds = [0, 1]
verify.checkpoints = [10, 40, 100]
"""


def test_verify_reports(tmp_path):
    cfg = load_config(write(tmp_path, VERIFY))
    res = cmd_verify(cfg, tmp_path / "v")
    assert res.failure_fraction == 0.0
    names = sorted(p.name for p in res.paths)
    assert names == ["accuracy.csv", "chain.csv", "monotonicity.csv"]
    for sv in res.seeds:
        assert sv.monotonicity.violations == 0
        assert [c.t for c in sv.chains] == [10, 40]
        assert all(c.all_hold for c in sv.chains)


def test_verify_linear_kernel_adds_sandwich(tmp_path):
    cfg = load_config(write(tmp_path, VERIFY.replace("kernel.gamma = 2.0", 'kernel.family = "linear"')))
    res = cmd_verify(cfg, tmp_path / "v")
    assert (tmp_path / "v/sandwich.csv").exists()
    assert all(sv.sandwich.within for sv in res.seeds)


def test_verify_needs_floor_qbar(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    with pytest.raises(ConfigError) as info:
        cmd_verify(cfg, tmp_path)
    assert info.value.field == "sampling.qbar_mode"


def test_bench_small(tmp_path):
    text = MINIMAL.replace("T = 20", "T = 120").replace("arms.count = 5", "arms.count = 30")
    cfg = load_config(write(tmp_path, text + "bench.fit_start = 20\nbench.repeats = 1\n"))
    res = cmd_bench(cfg, tmp_path / "b")
    assert set(res.exponents) == {"gpucb", "bkb"}
    assert res.m.shape == (120,) and res.A == 30
    lines = (tmp_path / "b/bench.csv").read_text().splitlines()
    assert lines[0] == "t,gpucb_ms,bkb_ms,bkb_m" and len(lines) == 121
