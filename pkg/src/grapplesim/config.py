"""Runtime configuration.

Every tunable constant that is not part of the crane description file lives
here, grouped by subsystem.  A YAML file can override any field; the file is
found via an explicit path argument or the GRAPPLESIM_CONFIG environment
variable.  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

GRAPPLESIM_CONFIG_ENV = "GRAPPLESIM_CONFIG"


@dataclass
class TerrainConfig:
    patch_size: float = 5.0        # guaranteed rough patch side, m
    padded_size: float = 7.0       # generated grid side, m
    cell_size: float = 0.05        # m per grid cell
    octaves: int = 3
    lacunarity: float = 2.0
    persistence: float = 0.5
    base_wavelength: float = 2.5   # m, wavelength of the first octave
    span_min: float = 0.2          # m, population lower bound on max-min
    span_max: float = 0.8          # m, population upper bound
    span_beta_a: float = 2.0       # Beta(a,b) draw for the per-seed span
    span_beta_b: float = 4.0       # mean span = min + (max-min)*a/(a+b) = 0.4


@dataclass
class LogConfig:
    length: float = 3.5
    thickness: float = math.sqrt(2.0) / 10.0
    mass: float = 112.0


@dataclass
class PileConfig:
    sigma_pos: float = 0.5         # m, per-component horizontal displacement
    sigma_rot: float = 0.25        # rad, yaw
    stack_gap: float = 0.25        # m between consecutive log centres pre-drop
    drop_clearance: float = 0.15   # m from terrain to lowest log centre
    settle_timeout: float = 10.0   # s, reject afterwards
    settle_min_time: float = 1.0   # s before the speed test may accept
    relax_speed: float = 5.0e-3    # m/s mean log speed threshold
    check_interval: float = 0.25   # s between relaxation checks
    max_retries: int = 25          # reseed attempts before giving up
    occlusion_overlap: float = 0.10  # footprint overlap fraction


@dataclass
class CameraConfig:
    capture_extent: float = 16.0   # m, captured square side
    capture_resolution: int = 512
    resolution: int = 64
    s_near: float = 3.0            # m view side at z_rel = near_z
    near_z: float = 0.0
    s_far: float = 15.0            # m view side at z_rel = far_z
    far_z: float = 5.0
    ground_color: tuple[float, float, float] = (0.9, 0.9, 0.8)
    log_grey: float = 0.5
    log_grey_sigma: float = 0.05   # 10% of mid-grey, per channel
    luminance: tuple[float, float, float] = (0.299, 0.587, 0.114)


@dataclass
class IkConfig:
    damping: float = 1.0e-6
    edge_zone: float = 0.15        # articulation fraction where weights roll off
    edge_weight: float = 0.1
    plateau_weight: float = 1.0
    degenerate_cond: float = 1.0e6


@dataclass
class DynamicsConfig:
    timestep: float = 1.0 / 60.0
    gravity: float = 9.81
    velocity_iterations: int = 24
    position_iterations: int = 4
    baumgarte: float = 0.2
    slop: float = 0.005            # m allowed penetration
    friction: float = 0.5
    restitution: float = 0.0
    sleep_speed: float = 5.0e-4    # m/s (and rad/s) body sleep threshold
    sleep_steps: int = 60          # consecutive slow steps before sleeping
    max_contacts: int = 1024


@dataclass
class RewardConfig:
    success_base: float = 25.0
    success_sigma: float = 0.5     # m, grasp-proximity falloff
    per_log: float = 1.12
    tilt_sigma: float = 0.2        # rad
    stage1_dist_sigma: float = 1.0
    stage1_angle_sigma: float = 0.3
    stage2_dist: float = 0.6       # m, stage-2 entry distance
    stage2_open: float = 0.6       # opening fraction for stage-2 entry
    energy_coeff: float = 2.0e-5   # reward per watt per control step


@dataclass
class CurriculumConfig:
    increment: float = 0.1
    threshold: float = 21.0
    window: int = 10               # evaluation batches kept
    eval_episodes: int = 20        # episodes per batch
    eval_every_steps: int = 50_000


@dataclass
class PlacementConfig:
    radius_min: float = 3.5
    radius_max: float = 7.0
    azimuth_max: float = 2.0943951023931953   # rad, 120 degrees to either side
    z_min: float = -0.5
    z_max: float = 1.0
    restricted_radius_min: float = 4.5
    restricted_radius_max: float = 5.5
    success_height_d0: float = 0.25
    success_height_d1: float = 1.1


@dataclass
class EnvConfig:
    control_substeps: int = 3      # 60 Hz sim / 20 Hz control
    max_steps: int = 200
    tip_speed_scale: float = 1.0   # m/s at action = 1
    obs_clip: float = 10.0
    swing_speed_scale: float = 2.0  # rad/s mapped to [-1, 1]
    reset_retries: int = 8


@dataclass
class ServerConfig:
    max_sessions: int = 8
    max_frame_bytes: int = 1 << 20


@dataclass
class Preset:
    """Named episode parameter bundle selectable at reset time."""

    n_logs_min: int = 2
    n_logs_max: int = 5
    restricted_radius: bool = False
    success_height: float | None = None  # None: curriculum height from d


def _default_presets() -> dict[str, Preset]:
    return {
        "default": Preset(),
        # Fixed 1.1 m elevation-gain criterion used for evaluation runs.
        "evaluation": Preset(success_height=1.1),
        "evaluation-2log": Preset(n_logs_max=2, success_height=1.1),
        # Early-training variant: two logs on a narrow radius band.
        "initial-training": Preset(n_logs_max=2, restricted_radius=True),
    }


@dataclass
class Config:
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    logs: LogConfig = field(default_factory=LogConfig)
    pile: PileConfig = field(default_factory=PileConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    ik: IkConfig = field(default_factory=IkConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    presets: dict[str, Preset] = field(default_factory=_default_presets)
    crane_file: str | None = None  # None: packaged description

    def preset(self, name: str) -> Preset:
        try:
            return self.presets[name]
        except KeyError:
            raise KeyError(f"unknown preset {name!r}; have {sorted(self.presets)}") from None


class ConfigError(ValueError):
    pass


def _apply_overrides(obj, overrides: dict, path: str) -> None:
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply_overrides(current, value, f"{path}{key}.")
        elif key == "presets":
            if not isinstance(value, dict):
                raise ConfigError("presets must be a mapping")
            for pname, pfields in value.items():
                preset = obj.presets.get(pname, Preset())
                _apply_overrides(preset, pfields or {}, f"{path}presets.{pname}.")
                obj.presets[pname] = preset
        else:
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            setattr(obj, key, value)


def load_config(path: str | Path | None = None) -> Config:
    """Build a Config from defaults plus an optional YAML override file.

    Resolution order: explicit ``path`` argument, then the GRAPPLESIM_CONFIG
    environment variable, then pure defaults.
    """
    cfg = Config()
    if path is None:
        path = os.environ.get(GRAPPLESIM_CONFIG_ENV) or None
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _apply_overrides(cfg, data, "")
    return cfg
