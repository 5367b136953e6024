import numpy as np
import pytest

from grapplesim import harness, records
from grapplesim.config import Config
from grapplesim.env import GraspEnv, Observation
from grapplesim.harness import (
    NOISE_LEVELS,
    action_sensitivity,
    bootstrap_ci,
    evaluate,
    observation_sigmas,
    perturbation_heatmap,
)
from grapplesim.policies import ConstantPolicy, RandomPolicy, ScriptedGraspPolicy


@pytest.fixture(scope="module")
def env():
    return GraspEnv(Config())


@pytest.fixture(scope="module")
def small_records(env):
    pol = ScriptedGraspPolicy()
    return [records.record_episode(env, pol, s, 0.0, "evaluation-2log") for s in range(3)]


class LinearPolicy:
    """a_k = w * o_i for every action component (sensitivity oracle)."""

    def __init__(self, channel: int, weight: float):
        self.channel = channel
        self.weight = weight

    def reset(self):
        pass

    def __call__(self, obs, info):
        v = float(obs.scalars[self.channel]) * self.weight
        return np.full(5, v)


def test_noise_grid_is_eight_powers_of_two():
    assert len(NOISE_LEVELS) == 8
    assert NOISE_LEVELS[0] == 2.0**-4
    assert NOISE_LEVELS[-1] == 2.0**3
    ratios = np.diff(np.log2(NOISE_LEVELS))
    np.testing.assert_allclose(ratios, 1.0)


def test_evaluate_aggregates_per_pile_size(env):
    pol = ScriptedGraspPolicy()
    stats = evaluate(env, pol, 8, preset="evaluation", difficulty=0.0, base_seed=100)
    total = sum(s for s, _ in stats.per_pile_size.values())
    counts = sum(n for _, n in stats.per_pile_size.values())
    assert counts == stats.n_episodes
    assert total / counts == pytest.approx(stats.success_rate)


def test_evaluate_deterministic(env):
    pol = RandomPolicy(7)
    a = evaluate(env, pol, 3, preset="evaluation-2log", base_seed=0)
    pol2 = RandomPolicy(7)
    b = evaluate(env, pol2, 3, preset="evaluation-2log", base_seed=0)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_policy_fault_marks_invalid(env):
    class Faulty:
        def reset(self):
            pass

        def __call__(self, obs, info):
            raise RuntimeError("boom")

    stats = evaluate(env, Faulty(), 2, preset="evaluation-2log", base_seed=0)
    assert stats.n_invalid == 2
    assert stats.n_episodes == 0


def test_observation_sigmas_shape(small_records):
    sig = observation_sigmas(small_records)
    assert sig.shape == (18,)
    assert np.all(sig >= 0.0)
    assert sig[2] > 0.0   # vertical relative position varies within episodes


def test_zero_noise_equals_baseline(env):
    pol = ScriptedGraspPolicy()
    base = evaluate(env, pol, 2, preset="evaluation-2log", base_seed=3)
    injector = harness._NoiseInjector(0, 0.0, env.cfg, seed=0)
    noisy = evaluate(env, pol, 2, preset="evaluation-2log", base_seed=3, obs_noise=injector)
    np.testing.assert_array_equal(base.rewards, noisy.rewards)


def test_action_sensitivity_closed_form(small_records):
    channel, weight = 2, 0.37
    pol = LinearPolicy(channel, weight)
    vals = np.array([s.scalars[channel] for r in small_records for s in r.steps])
    scale = 0.2 * (vals.max() - vals.min())
    deltas = action_sensitivity(small_records, pol, channel, n_samples=10_000, seed=1)
    expected = abs(weight) * scale * np.sqrt(2.0 / np.pi)
    np.testing.assert_allclose(deltas, expected, rtol=0.03)


def test_action_sensitivity_constant_policy(small_records):
    deltas = action_sensitivity(small_records, ConstantPolicy(np.zeros(5)), 0)
    np.testing.assert_array_equal(deltas, np.zeros(5))


def test_action_sensitivity_ignored_channel(small_records):
    # a policy reading only channel 2 is unaffected by noise on channel 9
    pol = LinearPolicy(2, 0.5)
    deltas = action_sensitivity(small_records, pol, 9, n_samples=500, seed=0)
    np.testing.assert_array_equal(deltas, np.zeros(5))


def test_heatmap_attempt_count(env):
    pol = ScriptedGraspPolicy()
    result = perturbation_heatmap(env, pol, scene_seed=0, grid=3, region=0.4,
                                  preset="evaluation-2log")
    assert len(result.offsets) == 9
    assert len(result.grasp_points) == 9
    assert result.successes.dtype == bool
    # successful grasp points land near the fixed pile regardless of offset
    ok = ~np.isnan(result.grasp_points[:, 0])
    assert ok.sum() >= 6
    spread = result.grasp_points[ok].std(axis=0)
    assert np.all(spread < 0.5)


def test_bootstrap_ci_contains_mean():
    rng = np.random.default_rng(0)
    vals = rng.normal(5.0, 1.0, 200)
    lo, hi = bootstrap_ci(vals)
    assert lo < vals.mean() < hi
    assert hi - lo < 1.0


def test_reports_written(tmp_path, env):
    pol = ScriptedGraspPolicy()
    stats = evaluate(env, pol, 3, preset="evaluation-2log", base_seed=0)
    harness.render_eval_report(stats, tmp_path)
    assert (tmp_path / "evaluate_episodes.csv").exists()
    assert (tmp_path / "evaluate_summary.csv").exists()
    assert (tmp_path / "evaluate_summary.png").exists()
    rows = harness.noise_sweep(env, pol, 15, 0.05, levels=(0.25, 1.0),
                               n_episodes=2, preset="evaluation-2log")
    harness.render_noise_report(rows, tmp_path)
    assert (tmp_path / "noise_sweep.csv").exists()
    assert (tmp_path / "noise_sweep.png").exists()
