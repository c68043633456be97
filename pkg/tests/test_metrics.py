import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bkb_kit.bkb import BkbParams, Trace, run_gpucb, sequential_dictionary
from bkb_kit.dictionary import Dictionary, SamplingParams, make_rng, qbar_floor
from bkb_kit.environment import Environment, gp_environment
from bkb_kit.gp_exact import ExactPosterior
from bkb_kit.kernels import Family, KernelSpec, gram
from bkb_kit.metrics import (
    audit_bkb_run,
    cumulative_regret,
    effective_dimension,
    linear_oracle_sandwich,
    logdet_deff_chain,
    monotonicity_check,
)

G = KernelSpec(Family.GAUSSIAN, gamma=5.0)
LIN = KernelSpec(Family.LINEAR)


def test_deff_orthonormal():
    assert effective_dimension(np.eye(5), 1.0) == pytest.approx(2.5)


def test_deff_identical_arms():
    assert effective_dimension(np.ones((4, 4)), 1.0) == pytest.approx(0.8, rel=1e-12)


def test_deff_matches_independent_eigensolver():
    A = np.random.default_rng(0).normal(size=(9, 4))
    K = A @ A.T
    ev = np.linalg.svd(A, compute_uv=False) ** 2
    assert effective_dimension(K, 0.7) == pytest.approx(np.sum(ev / (ev + 0.7)), rel=1e-10)
    assert effective_dimension(K, 0.7) == pytest.approx(np.trace(K @ np.linalg.inv(K + 0.7 * np.eye(9))), rel=1e-10)


def test_deff_validation():
    with pytest.raises(ValueError, match="square"):
        effective_dimension(np.ones((2, 3)), 1.0)
    with pytest.raises(ValueError, match="PSD"):
        effective_dimension(-np.eye(3), 1.0)
    with pytest.raises(ValueError):
        effective_dimension(np.eye(2), 0.0)


def test_deff_monotone_when_rows_are_appended():
    X = make_rng(1).uniform(size=(30, 2))
    vals = [effective_dimension(gram(G, X[:t]), 0.1) for t in range(1, 31)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_chain_single_point():
    c = logdet_deff_chain(np.ones((1, 1)), 1.0, [0.5])
    assert (c.d_eff, c.sum_var) == (0.5, 0.5)
    assert c.logdet == pytest.approx(math.log(2))
    assert c.upper == pytest.approx(0.5 * (1 + math.log(2)))
    assert c.all_hold


def test_chain_orthonormal_arms():
    c = logdet_deff_chain(np.eye(4), 1.0, np.full(4, 0.5))
    assert c.d_eff == pytest.approx(2.0) and c.sum_var == pytest.approx(2.0)
    assert c.logdet == pytest.approx(4 * math.log(2))
    assert c.all_hold


def test_chain_rejects_length_mismatch():
    with pytest.raises(ValueError):
        logdet_deff_chain(np.eye(3), 1.0, [0.5, 0.5])


@pytest.mark.parametrize("seed", range(4))
def test_chain_on_exact_runs(seed):
    arms = make_rng(seed).uniform(size=(15, 1))
    lam = 0.05
    post = ExactPosterior(G, lam)
    rng = make_rng(seed + 100)
    picks, post_var = [], []
    for _ in range(10):
        a = int(rng.integers(15))
        post.update(arms[a], rng.normal())
        picks.append(a)
        post_var.append(post.posterior_variance(arms[a]))
    c = logdet_deff_chain(gram(G, arms[picks]), lam, post_var)
    assert c.all_hold, c
    assert c.logdet == pytest.approx(post.logdet_ratio(), rel=1e-10)


def test_chain_detects_broken_input():
    c = logdet_deff_chain(np.eye(3), 1.0, np.zeros(3))
    assert not c.holds[0]


def test_monotonicity_counts_violations():
    r = monotonicity_check([1.0, 1.0, 1.0], [0.5, 1.2, 0.01], kappa_sq=1.0, lam=1.0)
    assert (r.decrease_violations, r.floor_violations) == (1, 1)
    assert r.violations == 2
    ok = monotonicity_check([1.0], [0.5], 1.0, 1.0)
    assert ok.violations == 0 and ok.worst_slack == pytest.approx(0.0)


def test_monotonicity_on_gpucb_trace():
    arms = np.linspace(0, 1, 20)[:, None]
    env = gp_environment(G, arms, 0.1, make_rng(2))
    tr = run_gpucb(arms, env, BkbParams(kernel=G), 60, make_rng(3))
    assert monotonicity_check(tr.chosen_var, tr.post_var, 1.0, 0.01).violations == 0


def test_sandwich_full_unweighted_dictionary_is_exact():
    X = make_rng(3).normal(size=(12, 4))
    d = Dictionary(np.arange(12), np.ones(12))
    r = linear_oracle_sandwich(LIN, X, d, 0.5, 0.5)
    assert abs(r.eig_min - 1) <= 1e-10 and abs(r.eig_max - 1) <= 1e-10
    assert r.within and r.eps_accurate


def test_sandwich_single_repeated_arm():
    X = np.tile([[1.0, 2.0, 0.5]], (6, 1))
    d = Dictionary(np.array([5]), np.ones(6))
    r = linear_oracle_sandwich(LIN, X, d, 1.0, 0.5, weighted=False)
    assert r.eig_min == pytest.approx(1.0, abs=1e-10) and r.eig_max == pytest.approx(1.0, abs=1e-10)


def test_sandwich_detects_missing_direction():
    X = np.diag([10.0, 10.0, 10.0])
    d = Dictionary(np.array([0]), np.array([1.0, 0.01, 0.01]))
    r = linear_oracle_sandwich(LIN, X, d, 0.01, 0.5)
    assert not r.within
    assert r.eig_max == pytest.approx(100.01 / 0.01, rel=1e-8)


def test_sandwich_with_floor_qbar_holds():
    X = make_rng(4).normal(size=(40, 5))
    qbar = qbar_floor(0.5, 0.1, 40)
    hits = [
        linear_oracle_sandwich(LIN, X, sequential_dictionary(LIN, X, 1.0, qbar, make_rng(s)), 1.0, 0.5).within
        for s in range(20)
    ]
    assert np.mean(hits) >= 0.9


def test_sandwich_rejects_nonlinear_kernel():
    with pytest.raises(ValueError, match="linear"):
        linear_oracle_sandwich(G, np.eye(2), Dictionary(np.array([0]), np.ones(2)), 1.0, 0.5)


def test_regret_examples():
    env = Environment(np.eye(3), [0.2, 1.0, 0.5])
    tr = Trace.empty(5, "x")
    tr.arm[:] = 1
    tr.inst_regret[:] = 0.0
    np.testing.assert_array_equal(cumulative_regret(tr, env), np.zeros(5))
    tr.arm[2] = 0
    np.testing.assert_allclose(cumulative_regret(tr, env), [0, 0, 0.8, 0.8, 0.8])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 40))
def test_regret_matches_double_loop(seed, T):
    rng = np.random.default_rng(seed)
    env = Environment(rng.normal(size=(6, 1)), rng.normal(size=6))
    tr = Trace.empty(T, "x")
    tr.arm[:] = rng.integers(6, size=T)
    naive = [sum(env.best_value - env.f_values[tr.arm[s]] for s in range(t + 1)) for t in range(T)]
    np.testing.assert_allclose(cumulative_regret(tr, env), naive, rtol=1e-12, atol=1e-12)


def test_regret_rejects_foreign_arms():
    env = Environment(np.eye(2), [0.0, 1.0])
    tr = Trace.empty(3, "x")
    tr.arm[:] = 5
    with pytest.raises(ValueError):
        cumulative_regret(tr, env)


def test_audit_full_dictionary_has_unit_ratios():
    arms = np.linspace(0, 1, 15)[:, None]
    env = gp_environment(G, arms, 0.1, make_rng(5))
    params = BkbParams(kernel=G, sampling=SamplingParams(0.5, 0.1, 30, qbar=math.inf))
    tr, rep = audit_bkb_run(arms, env, params, 30, make_rng(6))
    assert rep.ratios.shape == (30, 15)
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-7)
    np.testing.assert_array_equal(rep.m, np.arange(1, 31))
    assert rep.violations == 0 and not rep.failed


def test_audit_small_dictionary_reports():
    arms = np.linspace(0, 1, 25)[:, None]
    env = gp_environment(G, arms, 0.1, make_rng(7))
    params = BkbParams(kernel=G, sampling=SamplingParams(0.5, 0.1, 60, qbar=1.0))
    tr, rep = audit_bkb_run(arms, env, params, 60, make_rng(8))
    assert np.all(rep.ratios > 0)
    np.testing.assert_array_equal(rep.m[:-1], tr.m[:-1])
    assert np.all(np.diff(rep.logdet) >= -1e-10)
    assert rep.size_violations == 0
