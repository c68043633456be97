import numpy as np
import pytest

from bkb_kit.dictionary import make_rng
from bkb_kit.environment import Environment, fig1_environment, gp_environment, sample_gp_function
from bkb_kit.kernels import Family, KernelSpec, gram

G = KernelSpec(Family.GAUSSIAN, gamma=10.0)


def test_single_arm_draw_has_unit_variance():
    f = sample_gp_function(G, [[0.0]], 0.0, make_rng(0), size=100_000)
    assert 0.97 <= f[:, 0].var() <= 1.03


def test_identical_arms_are_perfectly_correlated():
    f = sample_gp_function(G, [[0.3], [0.3]], 1e-10, make_rng(1), size=100)
    assert np.abs(f[:, 0] - f[:, 1]).max() < 1e-3


def test_empirical_covariance_matches_gram():
    arms = np.linspace(0, 1, 5)[:, None]
    f = sample_gp_function(G, arms, 1e-10, make_rng(2), size=100_000)
    np.testing.assert_allclose(np.cov(f, rowvar=False), gram(G, arms), atol=0.02)


@pytest.mark.parametrize(
    "spec",
    [G, KernelSpec(Family.LINEAR), KernelSpec(Family.MATERN, nu=1.5)],
)
def test_sampling_succeeds_for_all_families(spec):
    arms = make_rng(3).uniform(-1, 1, size=(200, 2))
    f = sample_gp_function(spec, arms, 1e-10, make_rng(4))
    assert f.shape == (200,) and np.all(np.isfinite(f))


def test_jitter_escalates_on_duplicate_arms():
    arms = np.zeros((30, 1))
    f = sample_gp_function(G, arms, 0.0, make_rng(5))
    assert np.ptp(f) < 1e-2


def test_negative_jitter_rejected():
    with pytest.raises(ValueError):
        sample_gp_function(G, [[0.0]], -1.0, make_rng(0))


def test_noiseless_observation_is_exact():
    env = Environment(np.eye(3), [0.1, -0.4, 0.9], noise_xi=0.0)
    assert env.observe(2, make_rng(0)) == 0.9
    assert env.best_index == 2 and env.best_value == 0.9


def test_observation_mean():
    env = Environment([[0.0]], [0.25], noise_xi=0.5)
    rng = make_rng(6)
    obs = np.array([env.observe(0, rng) for _ in range(100_000)])
    assert abs(obs.mean() - 0.25) <= 0.01 * 0.5


def test_observations_reproducible():
    env = Environment([[0.0], [1.0]], [0.0, 1.0], noise_xi=0.3)
    a = [env.observe(1, make_rng(9)) for _ in range(3)]
    b = [env.observe(1, make_rng(9)) for _ in range(3)]
    assert a == b


def test_environment_validation():
    with pytest.raises(ValueError):
        Environment([[0.0], [1.0]], [0.0])
    with pytest.raises(ValueError):
        Environment([[0.0]], [np.nan])
    with pytest.raises(ValueError):
        Environment([[0.0]], [0.0], noise_xi=-1.0)
    env = Environment([[0.0]], [0.0])
    with pytest.raises(IndexError):
        env.observe(1, make_rng(0))


def test_gaps_are_nonnegative_and_additive():
    env = gp_environment(G, np.linspace(0, 1, 20)[:, None], 0.1, make_rng(7))
    gaps = env.gaps()
    assert np.all(gaps >= 0) and gaps[env.best_index] == 0
    pulls = make_rng(8).integers(20, size=30)
    total = gaps[pulls].sum()
    assert total == pytest.approx(gaps[pulls[:11]].sum() + gaps[pulls[11:]].sum(), rel=1e-12)


def test_fig1_design():
    env, design = fig1_environment(make_rng(0))
    assert design.kernel.gamma == 100.0
    assert design.checkpoints == (6, 63, 215)
    assert np.all(env.arms[design.pool, 0] <= 0.5)
    assert design.spacing == pytest.approx(1 / 511, rel=1e-12)
    assert env.n_arms == 512 and env.noise_xi == 0.1
