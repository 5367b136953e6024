"""Action sources for evaluation: scripted grasp cycle, random, and replay.

A policy is any callable mapping (Observation, info) -> action[5].  The
scripted policy implements the descend-align / close / lift cycle used as
the end-to-end oracle; it reads the target pose from the episode info, the
same privileged data the reward uses.
"""

from __future__ import annotations

import numpy as np

from .env import ACTION_SIZE, Observation
from .maths import axis_angle_distance


class ScriptedGraspPolicy:
    """Deterministic grasp cycle with pendulum damping.

    travel: hover towards a point above the target, damping grapple sway
    descend: come down keeping the sway damped and the grapple open
    close: press gently and close until a hold is detected
    lift: raise the load; retry from above when the claws come up empty.
    """

    def __init__(self, close_height: float = 0.10, press_speed: float = 0.12,
                 lift_speed: float = 1.0, hover_speed: float = 0.8):
        self.close_height = close_height
        self.press_speed = press_speed
        self.lift_speed = lift_speed
        self.hover_speed = hover_speed
        self.reset()

    def reset(self):
        self.phase = "travel"
        self._hold_steps = 0
        self._smooth = np.zeros(3)
        self._aim_offset = None

    def _damped_xy(self, rel, vel, gain=1.2, damp=0.9, cap=0.6):
        cmd = -gain * rel[0:2] - damp * vel[0:2]
        return np.clip(cmd, -cap, cap)

    def __call__(self, obs: Observation, info: dict) -> np.ndarray:
        rel = obs.scalars[0:3].astype(np.float64)
        vel = obs.scalars[3:6].astype(np.float64)
        opening = float(obs.scalars[13])          # [-1, 1], 1 = fully open
        heading = info.get("grapple_heading", 0.0)
        target_axis = info.get("target_axis", 0.0)
        held = info.get("n_logs_held", 0)

        # aim at the centroid of the graspable cluster around the target:
        # enclosing an adjacent log along with the target closes the claws
        # symmetrically (one claw shoving off a neighbour is the main failure
        # mode) and yields more logs
        if self.phase == "travel" and "log_positions" in info and "target_position" in info:
            tp = np.asarray(info["target_position"], dtype=np.float64)
            ax2 = np.array([np.cos(target_axis), np.sin(target_axis)])
            perp = np.array([-ax2[1], ax2[0]])
            cluster = []
            for lp in np.asarray(info["log_positions"], dtype=np.float64):
                d = lp[:2] - tp[:2]
                if abs(d @ perp) < 0.95 and abs(d @ ax2) < 0.9 and abs(lp[2] - tp[2]) < 0.4:
                    cluster.append(lp)
            self._aim_offset = (np.mean(cluster, axis=0) - tp) if cluster else np.zeros(3)
            self._aim_offset[2] = 0.0
        if self._aim_offset is not None:
            rel = rel - self._aim_offset

        a = np.zeros(ACTION_SIZE)
        err = (target_axis - heading + np.pi / 2.0) % np.pi - np.pi / 2.0
        a[3] = float(np.clip(3.0 * err, -1.0, 1.0))
        swing_speed = float(np.hypot(obs.scalars[11], obs.scalars[12]))
        xy_dist = float(np.hypot(rel[0], rel[1]))

        if self.phase == "travel":
            a[0:2] = self._damped_xy(rel, vel, cap=self.hover_speed)
            a[2] = float(np.clip(-0.8 * (rel[2] - 1.05), -0.6, 0.3))
            a[4] = 1.0 if opening < 0.95 else 0.1
            if xy_dist < 0.18 and swing_speed < 0.12 and rel[2] < 1.2:
                self.phase = "descend"
        elif self.phase == "descend":
            a[0:2] = self._damped_xy(rel, vel, cap=0.3)
            a[2] = -0.7 if rel[2] > 0.45 else -0.4
            a[4] = 1.0 if opening < 0.95 else 0.1
            aligned = axis_angle_distance(heading, target_axis) < 0.15
            if xy_dist > 0.45:
                self.phase = "travel"
            elif rel[2] < self.close_height and aligned:
                self.phase = "close"
        elif self.phase == "close":
            a[0:2] = self._damped_xy(rel, vel, gain=0.6, damp=0.8, cap=0.2)
            a[2] = -self.press_speed
            a[4] = -1.0
            if held > 0 and opening < -0.35:
                self._hold_steps += 1
                if self._hold_steps >= 3:
                    self.phase = "lift"
            else:
                self._hold_steps = 0
            if (opening < -0.6 and held == 0) or xy_dist > 0.5:
                self.phase = "retry"
        elif self.phase == "retry":
            a[0:2] = self._damped_xy(rel, vel, cap=0.3)
            a[2] = 0.9
            a[4] = 1.0
            if rel[2] > 0.65 and opening > 0.8:
                self.phase = "descend" if xy_dist < 0.18 else "travel"
        else:  # lift
            a[0:2] = np.clip(-0.5 * vel[0:2], -0.3, 0.3)
            a[2] = self.lift_speed
            a[4] = -0.4
            if held == 0 and info.get("stage", 1) < 3:
                self.phase = "retry"
        # slew-rate limit the tip commands so control jerk does not pump the
        # passive swing
        self._smooth = 0.7 * self._smooth + 0.3 * a[0:3]
        a[0:3] = self._smooth
        return a


class RandomPolicy:
    """Seeded uniform actions in [-1, 1]^5."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def reset(self):
        pass

    def __call__(self, obs: Observation, info: dict) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, ACTION_SIZE)


class ReplayPolicy:
    """Replays a recorded action sequence step-for-step."""

    def __init__(self, actions: np.ndarray):
        self.actions = np.asarray(actions, dtype=np.float64)
        self._i = 0

    def reset(self):
        self._i = 0

    def __call__(self, obs: Observation, info: dict) -> np.ndarray:
        if self._i >= len(self.actions):
            return np.zeros(ACTION_SIZE)
        a = self.actions[self._i]
        self._i += 1
        return a


class ConstantPolicy:
    def __init__(self, action):
        self.action = np.asarray(action, dtype=np.float64)

    def reset(self):
        pass

    def __call__(self, obs: Observation, info: dict) -> np.ndarray:
        return self.action.copy()
