"""The episodic grasping environment.

Each episode places a settled pile scene relative to the static vehicle,
parks the crane at its start articulation, and runs Cartesian velocity
control at 20 Hz over a 60 Hz dynamics world.  Observations combine 16
crane/grapple scalars with a 64x64 greyscale+depth frame rendered from the
scene's frozen reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import camera, crane, ik, rewards, scenes
from .config import Config, Preset
from .crane import BOOM_JOINTS, JOINT_ORDER
from .dynamics import World
from .maths import axis_angle_distance, quat_from_axis_angle, quat_mul, quat_rotate, wrap_axis_angle
from .scenes import PileScene
from .terrain import Heightfield

OBS_SCALARS = 16
ACTION_SIZE = 5

# observation vector layout (all float32):
#  0: 2  relative grapple position (grapple reference - target), m, clip +-10
#  3: 5  grapple reference world velocity, m/s, clip +-10
#  6     grapple speed |v|, clip +-10
#  7     rotator angle / limit            -> [-1, 1]
#  8     rotator speed / velocity limit   -> [-1, 1]
#  9,10  swing angles / limit             -> [-1, 1]
# 11,12  swing speeds / scale             -> [-1, 1]
# 13     opening angle mapped over range  -> [-1, 1]
# 14     opening speed / velocity limit   -> [-1, 1]
# 15     load cell (carried mass over empty grapple mass), clip +-10


@dataclass
class Observation:
    scalars: np.ndarray           # (16,) float32
    frame: camera.CameraFrame     # grey + depth, 64x64 each

    def flat_image(self) -> np.ndarray:
        return np.stack([self.frame.grey, self.frame.depth])


@dataclass
class PlacementDraw:
    position: np.ndarray          # (2,) world xy of the pile centre
    z_offset: float
    yaw: float


class SceneSource:
    """Provides deterministic scenes keyed by (seed, n_logs)."""

    def get(self, seed: int, n_logs: int) -> PileScene:
        raise NotImplementedError


class GeneratedScenes(SceneSource):
    def __init__(self, cfg: Config):
        self.cfg = cfg
        self._cache: dict[tuple[int, int], PileScene] = {}

    def get(self, seed: int, n_logs: int) -> PileScene:
        key = (seed, n_logs)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = scenes.gen_scene(seed, n_logs, self.cfg)
        return self._cache[key]


class SceneLibrary(SceneSource):
    """Scenes loaded from a directory of scene files, selected by seed."""

    def __init__(self, paths):
        self.paths = sorted(paths)
        if not self.paths:
            raise ValueError("scene library is empty")
        self._cache: dict[int, PileScene] = {}

    def get(self, seed: int, n_logs: int) -> PileScene:
        idx = seed % len(self.paths)
        if idx not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[idx] = scenes.load_scene(self.paths[idx])
        return self._cache[idx]


class EpisodeError(RuntimeError):
    pass


def draw_placement(d: float, rng: np.random.Generator, cfg: Config,
                   preset: Preset, d0_point: np.ndarray) -> PlacementDraw:
    """Pile placement: at d=0 directly below the grapple start with no
    rotation; at d=1 a random yaw at a random radius/side/height; linear
    interpolation of the two draws in between."""
    pc = cfg.placement
    if preset.restricted_radius:
        r = rng.uniform(pc.restricted_radius_min, pc.restricted_radius_max)
    else:
        r = rng.uniform(pc.radius_min, pc.radius_max)
    side = 1.0 if rng.random() < 0.5 else -1.0
    azimuth = side * rng.uniform(0.0, pc.azimuth_max)
    xy1 = np.array([r * np.cos(azimuth), r * np.sin(azimuth)])
    z1 = rng.uniform(pc.z_min, pc.z_max)
    yaw1 = rng.uniform(-np.pi, np.pi)
    return PlacementDraw(
        position=(1.0 - d) * d0_point[:2] + d * xy1,
        z_offset=d * z1,
        yaw=d * yaw1,
    )


def _fast_axis_angle(q) -> float:
    qw, qx, qy, qz = q
    ax = 1.0 - 2.0 * (qy * qy + qz * qz)
    ay = 2.0 * (qx * qy + qw * qz)
    return wrap_axis_angle(np.arctan2(ay, ax))


class GraspEnv:
    """Single-instance episodic environment (one dynamics world per episode)."""

    def __init__(self, cfg: Config | None = None, scene_source: SceneSource | None = None):
        self.cfg = cfg or Config()
        self.desc = crane.load_description(self.cfg.crane_file)
        self.scene_source = scene_source or GeneratedScenes(self.cfg)
        self.world: World | None = None
        self.scene: PileScene | None = None
        self._done = True
        self._step_count = 0
        self._rng = np.random.default_rng(0)

        # fixed grapple start pose (plumb swing) defines the d=0 drop point
        q0 = dict(self.desc.start_articulation)
        q0["g"], q0["h"] = crane.plumb_swing_angles(self.desc, q0)
        self._start_articulation = q0
        frames = crane.forward_kinematics(self.desc, q0, validate_limits=False)
        self._start_ref = frames["grapple_reference"].p.copy()

    # ----------------------------------------------------------------- reset
    def reset(self, difficulty: float = 0.0, seed: int = 0,
              preset: str | Preset = "default") -> Observation:
        if not 0.0 <= difficulty <= 1.0:
            raise ValueError(f"difficulty must be in [0, 1], got {difficulty}")
        if isinstance(preset, str):
            preset = self.cfg.preset(preset)
        self.preset = preset
        self.difficulty = float(difficulty)
        self._rng = np.random.default_rng(np.random.SeedSequence([0xE9150DE, seed & 0xFFFFFFFF]))

        n_logs = int(self._rng.integers(preset.n_logs_min, preset.n_logs_max + 1))
        scene = None
        for attempt in range(self.cfg.env.reset_retries):
            try:
                scene = self.scene_source.get(seed + attempt * 104729, n_logs)
                break
            except scenes.PileRejected:
                continue
        if scene is None:
            raise EpisodeError(f"no usable scene for seed={seed}")
        self.scene = scene

        self.placement = draw_placement(difficulty, self._rng, self.cfg, preset, self._start_ref)
        self._scene_yaw = self.placement.yaw
        com = scene.combined_com()
        yaw_q = quat_from_axis_angle((0, 0, 1), self.placement.yaw)
        c, s = np.cos(self.placement.yaw), np.sin(self.placement.yaw)
        R = np.array([[c, -s], [s, c]])
        # translate so the rotated pile CoM lands on the drawn position
        t_xy = self.placement.position - R @ com[:2]
        self._scene_t = np.array([t_xy[0], t_xy[1], self.placement.z_offset])

        w = World(self.cfg.dynamics)
        w.set_terrain(scene.terrain, position=self._scene_t, yaw=self.placement.yaw)
        w.add_crane(self.desc, self._start_articulation)
        for log in scene.logs:
            pos = self._to_world(log.position)
            quat = quat_mul(yaw_q, log.quat)
            w.add_log(pos, quat, log_cfg=self.cfg.logs)
        w.finalize()
        self.world = w

        self.target_position = self._to_world(scene.target.position)
        self.target_axis = wrap_axis_angle(scene.target.axis_angle + self.placement.yaw)
        self._log_z0 = w.x[w.log_ids, 2].copy()
        self.success_height = (
            self.preset.success_height
            if self.preset.success_height is not None
            else rewards.success_height(difficulty, self.cfg.placement)
        )

        self._done = False
        self._step_count = 0
        self._stage = 1
        self._accumulated = 0.0
        self._last_breakdown = None
        return self._observe()

    def _to_world(self, p_scene: np.ndarray) -> np.ndarray:
        c, s = np.cos(self._scene_yaw), np.sin(self._scene_yaw)
        return np.array(
            [
                c * p_scene[0] - s * p_scene[1] + self._scene_t[0],
                s * p_scene[0] + c * p_scene[1] + self._scene_t[1],
                p_scene[2] + self._scene_t[2],
            ]
        )

    def _to_scene(self, p_world: np.ndarray) -> np.ndarray:
        c, s = np.cos(self._scene_yaw), np.sin(self._scene_yaw)
        d = p_world - self._scene_t
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]])

    # ------------------------------------------------------------------ step
    def step(self, action) -> tuple[Observation, rewards.RewardBreakdown, bool, dict]:
        if self._done:
            raise EpisodeError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != ACTION_SIZE:
            raise ValueError(f"action must have {ACTION_SIZE} scalars")
        if not np.all(np.isfinite(action)):
            self._done = True
            raise EpisodeError("non-finite action")
        action = np.clip(action, -1.0, 1.0)

        w = self.world
        v_des = action[:3] * self.cfg.env.tip_speed_scale
        qnow = {n: w.joint_state(n)[0] for n in JOINT_ORDER}
        J, _ = w.boom_jacobian()
        sol = ik.solve(self.desc, qnow, v_des, self.cfg.ik, jacobian=J)
        for i, name in enumerate(BOOM_JOINTS):
            w.set_motor_target(name, sol.qdot[i])
        e_lim = self.desc.joint("e").velocity_limit or 1.0
        f_lim = self.desc.joint("f").velocity_limit or 1.0
        w.set_motor_target("e", action[3] * e_lim)
        w.set_motor_target("f", action[4] * f_lim)

        power = 0.0
        for _ in range(self.cfg.env.control_substeps):
            w.step()
            power += w.actuator_power()
        power /= self.cfg.env.control_substeps

        self._step_count += 1
        self._grapple_cache = None
        breakdown, done, info = self._reward_and_termination(power)
        self._accumulated += breakdown.total
        info["accumulated_reward"] = self._accumulated
        self._done = done
        self._last_breakdown = breakdown
        return self._observe(), breakdown, done, info

    # ------------------------------------------------------------- internals
    def _grapple_state(self):
        cached = getattr(self, "_grapple_cache", None)
        if cached is not None:
            return cached
        w = self.world
        ref = w.grapple_reference()
        gb = w.crane_bodies["grapple_body"]
        r = ref - w.x[gb]
        wx, wy, wz = w.w[gb]
        vel = w.v[gb] + np.array(
            [wy * r[2] - wz * r[1], wz * r[0] - wx * r[2], wx * r[1] - wy * r[0]]
        )
        qw, qx, qy, qz = w.q[gb]
        # x-axis and z-axis of the grapple rotation, scalarized
        ex_x = 1.0 - 2.0 * (qy * qy + qz * qz)
        ex_y = 2.0 * (qx * qy + qw * qz)
        ez_z = 1.0 - 2.0 * (qx * qx + qy * qy)
        heading = wrap_axis_angle(np.arctan2(ex_y, ex_x))
        ez_z = min(1.0, max(-1.0, ez_z))
        tilt = float(np.arccos(ez_z))
        self._grapple_cache = (ref, vel, heading, tilt)
        return self._grapple_cache

    def _held_lift_fraction(self, grasp) -> float:
        if grasp.n_logs_held == 0:
            return 0.0
        w = self.world
        gains = [
            w.x[li, 2] - self._log_z0[w.log_ids.index(li)] for li in grasp.held_log_ids
        ]
        return float(min(gains) / self.success_height)

    def _reward_and_termination(self, power: float):
        w = self.world
        cfg = self.cfg.reward
        grasp = w.grasp_info()
        ref, vel, heading, tilt = self._grapple_state()
        dist = float(np.linalg.norm(ref - self.target_position))
        angle_err = axis_angle_distance(heading, self.target_axis)
        lift_frac = self._held_lift_fraction(grasp)

        # stage transitions: 1 -> 2 once positioned and open, 2 <-> 3 with hold
        if self._stage == 1 and dist <= cfg.stage2_dist and grasp.opening_fraction >= cfg.stage2_open:
            self._stage = 2
        if self._stage == 2 and grasp.n_logs_held > 0:
            self._stage = 3
        elif self._stage == 3 and grasp.n_logs_held == 0:
            self._stage = 2

        sv = rewards.stage_reward(self._stage, dist, angle_err,
                                  grasp.opening_fraction, lift_frac, cfg)
        r_guide = rewards.guide_reward(sv, tilt, self.cfg.env.max_steps, cfg)
        r_energy = -cfg.energy_coeff * power * (
            self.cfg.env.control_substeps * self.cfg.dynamics.timestep
        )

        success = grasp.n_logs_held >= 1 and lift_frac >= 1.0
        r_target = rewards.target_payout(grasp.x_dgrasp, grasp.n_logs_held, cfg) if success else 0.0

        done = success or self._step_count >= self.cfg.env.max_steps
        breakdown = rewards.RewardBreakdown(
            r_target=r_target, r_guide=r_guide, r_energy=r_energy,
            stage=self._stage, n_steps=self._step_count,
        )
        w_ids = w.log_ids
        info = {
            "stage": self._stage,
            "n_logs_held": grasp.n_logs_held,
            "log_positions": w.x[w_ids].copy(),
            "log_axis_angles": np.array([
                _fast_axis_angle(w.q[i]) for i in w_ids
            ]),
            "x_dgrasp": grasp.x_dgrasp,
            "actuator_power": power,
            "success": success,
            "target_position": self.target_position.copy(),
            "target_axis": self.target_axis,
            "grapple_position": ref,
            "grapple_heading": heading,
            "distance": dist,
            "opening_fraction": grasp.opening_fraction,
            "snapshot_hash": w.snapshot_hash(),
        }
        return breakdown, done, info

    def _observe(self) -> Observation:
        w = self.world
        clip = self.cfg.env.obs_clip
        ref, vel, heading, tilt = self._grapple_state()
        rel = ref - self.target_position
        speed = float(np.linalg.norm(vel))

        e_q, e_v = w.joint_state("e")
        g_q, g_v = w.joint_state("g")
        h_q, h_v = w.joint_state("h")
        f_q, f_v = w.joint_state("f")
        sc = self.desc.obs_scales
        rot_scale = float(sc["rotator_angle"])
        swing_scale = float(sc["swing_angle"])
        f_lo, f_hi = sc["opening"]
        e_vlim = self.desc.joint("e").velocity_limit or 1.0
        f_vlim = self.desc.joint("f").velocity_limit or 1.0
        sw_vscale = self.cfg.env.swing_speed_scale

        if w.step_count == 0:
            load = 0.0  # nothing carried at reset; impulses exist only after a step
        else:
            load = (
                w.load_cell_force() / self.cfg.dynamics.gravity - self.desc.empty_grapple_mass
            ) / self.desc.empty_grapple_mass

    # scalar clamps (np.clip has per-call overhead at 20 Hz x 16 values)
        def cl(v, lim):
            return -lim if v < -lim else (lim if v > lim else v)

        scalars = np.empty(OBS_SCALARS, dtype=np.float32)
        scalars[0] = cl(rel[0], clip)
        scalars[1] = cl(rel[1], clip)
        scalars[2] = cl(rel[2], clip)
        scalars[3] = cl(vel[0], clip)
        scalars[4] = cl(vel[1], clip)
        scalars[5] = cl(vel[2], clip)
        scalars[6] = cl(speed, clip)
        scalars[7] = cl(e_q / rot_scale, 1.0)
        scalars[8] = cl(e_v / e_vlim, 1.0)
        scalars[9] = cl(g_q / swing_scale, 1.0)
        scalars[10] = cl(h_q / swing_scale, 1.0)
        scalars[11] = cl(g_v / sw_vscale, 1.0)
        scalars[12] = cl(h_v / sw_vscale, 1.0)
        scalars[13] = cl(2.0 * (f_q - f_lo) / (f_hi - f_lo) - 1.0, 1.0)
        scalars[14] = cl(f_v / f_vlim, 1.0)
        scalars[15] = cl(load, clip)

        cam_pos_scene = self._to_scene(ref)
        recon = self.scene.reconstruction
        r_rel = np.array(
            [
                cam_pos_scene[0] - recon.centre[0],
                cam_pos_scene[1] - recon.centre[1],
                cam_pos_scene[2] - recon.reference_z,
            ]
        )
        phi_rel = heading - self._scene_yaw
        frame = camera.render(recon, r_rel, phi_rel, self.cfg.camera)
        return Observation(scalars=scalars, frame=frame)

    @property
    def done(self) -> bool:
        return self._done

    @property
    def step_count(self) -> int:
        return self._step_count

    @property
    def accumulated_reward(self) -> float:
        return self._accumulated
