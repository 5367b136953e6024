import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from grapplesim import rewards
from grapplesim.config import Config
from grapplesim.env import OBS_SCALARS, EpisodeError, GraspEnv, draw_placement
from grapplesim.policies import ScriptedGraspPolicy
from grapplesim.rewards import (
    CurriculumState,
    curriculum_update,
    gaussian,
    success_height,
    target_payout,
)


def scripted_info(env):
    return {
        "grapple_heading": 0.0,
        "target_axis": env.target_axis,
        "target_position": env.target_position,
        "n_logs_held": 0,
        "stage": 1,
        "log_positions": env.world.x[env.world.log_ids].copy(),
    }


# ----------------------------------------------------------------- rewards

def test_gaussian_unit_values():
    assert gaussian(0.0, 0.5) == 1.0
    assert abs(gaussian(0.5, 0.5) - math.exp(-0.5)) < 1e-12
    assert abs(gaussian(2.0, 2.0) - 0.6065306597126334) < 1e-12


@given(st.floats(-50, 50), st.floats(0.01, 10))
def test_gaussian_even_and_bounded(x, sigma):
    assert gaussian(x, sigma) == gaussian(-x, sigma)
    # mathematically (0, 1]; extreme ratios underflow to +0.0 in doubles
    assert 0.0 <= gaussian(x, sigma) <= 1.0


def test_gaussian_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian(1.0, 0.0)
    with pytest.raises(ValueError):
        gaussian(1.0, -2.0)


def test_target_payout_unit_vectors():
    assert target_payout(0.0, 1) == pytest.approx(26.12, abs=1e-12)
    expected = 25.0 * math.exp(-0.5) + 2.24
    assert target_payout(0.5, 2) == pytest.approx(expected, abs=1e-9)
    assert target_payout(1e9, 0) == pytest.approx(0.0, abs=1e-6)


def test_success_height_endpoints():
    assert success_height(0.0) == pytest.approx(0.25)
    assert success_height(1.0) == pytest.approx(1.1)
    assert success_height(0.5) == pytest.approx(0.675)


def test_curriculum_advancement():
    st_ = CurriculumState()
    for _ in range(10):
        st_ = curriculum_update(st_, [22.0] * 20)
    assert st_.lesson == 1 and st_.difficulty == pytest.approx(0.1)


def test_curriculum_strict_threshold():
    st_ = CurriculumState()
    for _ in range(10):
        st_ = curriculum_update(st_, [21.0] * 20)
    assert st_.lesson == 0


def test_curriculum_window_precondition():
    st_ = CurriculumState()
    for _ in range(9):
        st_ = curriculum_update(st_, [30.0] * 20)
    assert st_.lesson == 0
    st_ = curriculum_update(st_, [30.0] * 20)
    assert st_.lesson == 1


def test_curriculum_sliding_window_and_final_lesson_repeats():
    st_ = CurriculumState()
    for _ in range(10):
        st_ = curriculum_update(st_, [30.0] * 20)
    assert st_.lesson == 1
    # the window keeps sliding: the next high batch advances again
    st_ = curriculum_update(st_, [30.0] * 20)
    assert st_.lesson == 2
    for _ in range(20):
        st_ = curriculum_update(st_, [30.0] * 20)
    assert st_.difficulty == 1.0              # capped
    assert st_.lessons_passed == 22           # keeps counting repeats


def test_curriculum_batch_size_checked():
    with pytest.raises(ValueError):
        curriculum_update(CurriculumState(), [22.0] * 19)


def test_difficulty_mapping():
    st_ = CurriculumState()
    st_.lesson = 7
    assert st_.difficulty == pytest.approx(0.7)
    st_.lesson = 15
    assert st_.difficulty == 1.0


# ------------------------------------------------------------------- env

@pytest.fixture(scope="module")
def env():
    return GraspEnv(Config())


def test_observation_layout(env):
    obs = env.reset(difficulty=0.0, seed=2, preset="evaluation-2log")
    assert obs.scalars.shape == (OBS_SCALARS,)
    assert obs.scalars.dtype == np.float32
    assert obs.frame.grey.shape == (64, 64)
    assert obs.frame.depth.shape == (64, 64)
    clip = env.cfg.env.obs_clip
    assert np.all(np.abs(obs.scalars[:7]) <= clip)
    assert np.all(np.abs(obs.scalars[7:15]) <= 1.0)
    # a few steps in, the invariants still hold
    for _ in range(5):
        obs, _, _, _ = env.step([0.2, 0.1, -0.4, 0.3, -0.5])
    assert np.all(np.abs(obs.scalars[7:15]) <= 1.0)
    assert np.all(obs.frame.depth >= 0.0)


def test_reset_d0_places_pile_below_start(env):
    env.reset(difficulty=0.0, seed=5, preset="evaluation-2log")
    com = env.world.x[env.world.log_ids].mean(axis=0)
    np.testing.assert_allclose(com[:2], env._start_ref[:2], atol=0.05)
    assert env.placement.yaw == 0.0
    assert env.placement.z_offset == 0.0


def test_placement_interpolates_draws(env):
    cfg = env.cfg
    preset = cfg.preset("default")
    rng0 = np.random.default_rng(99)
    p0 = draw_placement(0.0, rng0, cfg, preset, env._start_ref)
    rng1 = np.random.default_rng(99)
    p1 = draw_placement(1.0, rng1, cfg, preset, env._start_ref)
    rng5 = np.random.default_rng(99)
    p5 = draw_placement(0.5, rng5, cfg, preset, env._start_ref)
    np.testing.assert_allclose(p5.position, (p0.position + p1.position) / 2.0, atol=1e-12)
    assert p5.z_offset == pytest.approx((p0.z_offset + p1.z_offset) / 2.0)
    assert p5.yaw == pytest.approx((p0.yaw + p1.yaw) / 2.0)
    # d=1 ranges
    pc = cfg.placement
    r = np.linalg.norm(p1.position)
    assert pc.radius_min - 0.01 <= r <= pc.radius_max + 0.01
    assert pc.z_min <= p1.z_offset <= pc.z_max
    assert -np.pi <= p1.yaw <= np.pi


def test_restricted_radius_preset(env):
    cfg = env.cfg
    preset = cfg.preset("initial-training")
    for s in range(20):
        p1 = draw_placement(1.0, np.random.default_rng(s), cfg, preset, env._start_ref)
        r = np.linalg.norm(p1.position)
        assert cfg.placement.restricted_radius_min - 1e-9 <= r <= cfg.placement.restricted_radius_max + 1e-9


def test_zero_action_drift(env):
    env.reset(difficulty=0.0, seed=1, preset="evaluation-2log")
    ref0 = env.world.grapple_reference().copy()
    for _ in range(20):
        env.step(np.zeros(5))
    drift = np.linalg.norm(env.world.grapple_reference() - ref0)
    assert drift < 0.05


def test_step_after_done_raises(env):
    env.reset(difficulty=0.0, seed=3, preset="evaluation-2log")
    done = False
    while not done:
        _, _, done, _ = env.step(np.zeros(5))
    with pytest.raises(EpisodeError):
        env.step(np.zeros(5))


def test_non_finite_action_faults(env):
    env.reset(difficulty=0.0, seed=3, preset="evaluation-2log")
    with pytest.raises(EpisodeError):
        env.step([np.nan, 0, 0, 0, 0])
    with pytest.raises(EpisodeError):   # episode is faulted afterwards
        env.step(np.zeros(5))


def test_wrong_action_size(env):
    env.reset(difficulty=0.0, seed=3, preset="evaluation-2log")
    with pytest.raises(ValueError):
        env.step([0.0, 0.0, 0.0])


def test_reward_breakdown_structure(env):
    obs = env.reset(difficulty=0.0, seed=4, preset="evaluation-2log")
    _, bd, _, info = env.step([0.1, 0.0, -0.3, 0.0, 0.5])
    assert bd.total == pytest.approx(bd.r_target + bd.r_guide + bd.r_energy)
    assert bd.r_energy <= 0.0
    assert bd.r_target >= 0.0
    assert bd.r_guide >= 0.0
    assert bd.r_guide <= 8.0 / env.cfg.env.max_steps + 1e-9
    assert bd.stage in (1, 2, 3)


def test_zero_energy_coefficient_leaves_guide_only():
    cfg = Config()
    cfg.reward.energy_coeff = 0.0
    env2 = GraspEnv(cfg)
    env2.reset(difficulty=0.0, seed=6, preset="evaluation-2log")
    for _ in range(10):
        _, bd, done, _ = env2.step([0.2, -0.1, -0.5, 0.1, 0.3])
        if not done:
            assert bd.total == pytest.approx(bd.r_guide)


def test_stage_monotone_with_hold_rule(env):
    obs = env.reset(difficulty=0.0, seed=7, preset="evaluation-2log")
    pol = ScriptedGraspPolicy()
    pol.reset()
    info = scripted_info(env)
    prev_stage = 1
    held_prev = 0
    done = False
    while not done:
        obs, bd, done, info = env.step(pol(obs, info))
        if bd.stage < prev_stage:
            # the only allowed decrease is losing a hold: 3 -> 2
            assert prev_stage == 3 and bd.stage == 2 and held_prev > 0
        prev_stage = bd.stage
        held_prev = info["n_logs_held"]


def test_scripted_episode_clears_curriculum_threshold(env):
    obs = env.reset(difficulty=0.0, seed=0, preset="evaluation-2log")
    pol = ScriptedGraspPolicy()
    pol.reset()
    info = scripted_info(env)
    done = False
    while not done:
        obs, bd, done, info = env.step(pol(obs, info))
    assert info["success"]
    assert info["accumulated_reward"] > 21.0
    # the sparse payout dominates shaping and energy on a success
    assert bd.r_target > abs(info["accumulated_reward"] - bd.r_target)


def test_success_latches_done(env):
    obs = env.reset(difficulty=0.0, seed=0, preset="evaluation-2log")
    pol = ScriptedGraspPolicy()
    pol.reset()
    info = scripted_info(env)
    done = False
    steps = 0
    while not done:
        obs, bd, done, info = env.step(pol(obs, info))
        steps += 1
    assert info["success"] and steps < env.cfg.env.max_steps
    assert env.done
