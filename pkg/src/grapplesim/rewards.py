"""Reward shaping, success criteria, and the lesson curriculum."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import CurriculumConfig, PlacementConfig, RewardConfig


def gaussian(x: float, sigma: float) -> float:
    """Zero-centred Gaussian falloff used for all reward scalings."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return math.exp(-0.5 * (x / sigma) ** 2)


def success_height(d: float, cfg: PlacementConfig | None = None) -> float:
    """Required lift height: linear in difficulty between the published
    endpoints."""
    cfg = cfg or PlacementConfig()
    return cfg.success_height_d0 + (cfg.success_height_d1 - cfg.success_height_d0) * d


@dataclass
class RewardBreakdown:
    r_target: float
    r_guide: float
    r_energy: float
    stage: int
    n_steps: int

    @property
    def total(self) -> float:
        return self.r_target + self.r_guide + self.r_energy


def target_payout(x_dgrasp: float, n_logs: int, cfg: RewardConfig | None = None) -> float:
    """Sparse success payout: proximity-scaled base plus a per-log bonus."""
    cfg = cfg or RewardConfig()
    return cfg.success_base * gaussian(x_dgrasp, cfg.success_sigma) + cfg.per_log * n_logs


def stage_reward(
    stage: int,
    dist: float,
    angle_err: float,
    opening_frac: float,
    lift_frac: float,
    cfg: RewardConfig | None = None,
) -> float:
    """Stage shaping value:
    stage 1 rewards approaching, aligning, and opening;
    stage 2 rewards closing; stage 3 rewards lifting a held load."""
    cfg = cfg or RewardConfig()
    if stage == 1:
        return 2.0 * (
            gaussian(dist, cfg.stage1_dist_sigma)
            + gaussian(angle_err, cfg.stage1_angle_sigma)
            + opening_frac
        ) / 3.0
    if stage == 2:
        return 2.0 + 2.0 * (1.0 - opening_frac)
    return 4.0 + 4.0 * float(np.clip(lift_frac, 0.0, 1.0))


def guide_reward(stage_value: float, tilt: float, n_steps: int,
                 cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    return stage_value * gaussian(tilt, cfg.tilt_sigma) / n_steps


@dataclass
class CurriculumState:
    """Lesson ladder driven by a sliding window of evaluation batches."""

    lesson: int = 0
    lessons_passed: int = 0
    history: deque = field(default_factory=deque)  # rolling eval batches
    cfg: CurriculumConfig = field(default_factory=CurriculumConfig)

    @property
    def difficulty(self) -> float:
        return min(1.0, self.lesson * self.cfg.increment)

    def window_mean(self) -> float | None:
        if len(self.history) < self.cfg.window:
            return None
        return float(np.mean([np.mean(b) for b in self.history]))


def curriculum_update(state: CurriculumState, batch) -> CurriculumState:
    """Push one evaluation batch; advance the lesson when the window mean
    strictly exceeds the threshold.  The window keeps sliding across lesson
    boundaries."""
    batch = list(batch)
    if len(batch) != state.cfg.eval_episodes:
        raise ValueError(
            f"batch size {len(batch)} != configured {state.cfg.eval_episodes}"
        )
    state.history.append(batch)
    while len(state.history) > state.cfg.window:
        state.history.popleft()
    mean = state.window_mean()
    if mean is not None and mean > state.cfg.threshold:
        state.lesson += 1
        state.lessons_passed += 1
    return state
