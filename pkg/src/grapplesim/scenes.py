"""Log pile generation, target selection, and the scene file format.

Piles are built by stacking logs with seeded Gaussian horizontal offsets and
yaws above a rough patch, dropping them, and simulating until the mean log
speed falls below the relaxation threshold.  Scenes that fail to relax in
time are rejected; callers resample with a shifted seed.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace

import numpy as np
from shapely.geometry import Polygon

from .config import CameraConfig, Config, DynamicsConfig, LogConfig, PileConfig, TerrainConfig
from .dynamics import World
from .maths import quat_from_axis_angle, quat_rotate, quat_to_matrix, wrap_axis_angle
from .terrain import Heightfield, gen_terrain

SCENE_MAGIC = b"GSCN"
SCENE_VERSION = 1


@dataclass(frozen=True)
class LogState:
    position: np.ndarray      # (3,) m
    quat: np.ndarray          # (4,) wxyz
    lin_vel: np.ndarray       # (3,) m/s
    ang_vel: np.ndarray       # (3,) rad/s


@dataclass(frozen=True)
class GraspTarget:
    position: np.ndarray      # (3,) m, CoM of the chosen log
    axis_angle: float         # horizontal long-axis direction, [0, pi)
    log_index: int


@dataclass
class PileScene:
    terrain: Heightfield
    logs: list[LogState]
    target: GraspTarget
    reconstruction: "object | None"   # camera.ReconstructionImage, set by capture
    seed: int
    relaxed: bool

    @property
    def n_logs(self) -> int:
        return len(self.logs)

    def log_positions(self) -> np.ndarray:
        return np.stack([l.position for l in self.logs])

    def combined_com(self) -> np.ndarray:
        return self.log_positions().mean(axis=0)


class PileRejected(RuntimeError):
    """The dropped pile did not relax within the time budget."""


def log_axis(quat: np.ndarray) -> np.ndarray:
    """World direction of a log's long axis (local +x)."""
    return quat_rotate(quat, np.array([1.0, 0.0, 0.0]))


def log_axis_angle(quat: np.ndarray) -> float:
    ax = log_axis(quat)
    return wrap_axis_angle(np.arctan2(ax[1], ax[0]))


def log_footprint(state: LogState, log_cfg: LogConfig) -> Polygon:
    """Horizontal-plane convex footprint of a log (both cuboids projected)."""
    s = log_cfg.thickness
    half = np.array([log_cfg.length / 2.0, s / 2.0, s / 2.0])
    corners = []
    for rot in (0.0, np.pi / 4.0):
        q = quat_from_axis_angle((1.0, 0.0, 0.0), rot)
        R = quat_to_matrix(state.quat) @ quat_to_matrix(q)
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    p = state.position + R @ (half * (sx, sy, sz))
                    corners.append(p[:2])
    return Polygon(corners).convex_hull


def select_target(logs: list[LogState], log_cfg: LogConfig | None = None,
                  occlusion_overlap: float = 0.10) -> GraspTarget:
    """Grasp pose of the unoccluded log nearest the combined centre of mass.

    A log is occluded when a log with higher CoM overlaps more than
    ``occlusion_overlap`` of its footprint from above.
    """
    log_cfg = log_cfg or LogConfig()
    coms = np.stack([l.position for l in logs])
    combined = coms.mean(axis=0)
    feet = [log_footprint(l, log_cfg) for l in logs]
    candidates = []
    for i, log in enumerate(logs):
        occluded = False
        for j, other in enumerate(logs):
            if i == j or other.position[2] <= log.position[2]:
                continue
            inter = feet[i].intersection(feet[j]).area
            if inter > occlusion_overlap * feet[i].area:
                occluded = True
                break
        if not occluded:
            candidates.append(i)
    if not candidates:
        # topmost log can never be occluded; guard against degenerate ties
        candidates = [int(np.argmax(coms[:, 2]))]
    # nearest to the combined CoM; ties broken by position for permutation
    # invariance
    def sort_key(i):
        d = float(np.linalg.norm(coms[i] - combined))
        return (round(d, 12), tuple(np.round(coms[i], 9)))

    best = min(candidates, key=sort_key)
    return GraspTarget(
        position=coms[best].copy(),
        axis_angle=log_axis_angle(logs[best].quat),
        log_index=best,
    )


def _settling_world(terrain: Heightfield, dyn_cfg: DynamicsConfig) -> World:
    w = World(dyn_cfg)
    w.set_terrain(terrain)
    return w


def drop_logs(
    terrain: Heightfield,
    offsets: np.ndarray,
    yaws: np.ndarray,
    pile_cfg: PileConfig,
    dyn_cfg: DynamicsConfig,
    log_cfg: LogConfig,
) -> tuple[list[LogState], bool]:
    """Stack logs at the given horizontal offsets/yaws, drop, and settle.

    Returns the settled states and a relaxed flag (False when the pile kept
    moving past the timeout).
    """
    w = _settling_world(terrain, dyn_cfg)
    base_z = float(terrain.height_at(offsets[:, 0], offsets[:, 1]).max())
    for k in range(len(offsets)):
        q = quat_from_axis_angle((0.0, 0.0, 1.0), float(yaws[k]))
        z = base_z + pile_cfg.drop_clearance + log_cfg.thickness + k * pile_cfg.stack_gap
        w.add_log([offsets[k, 0], offsets[k, 1], z], q, log_cfg=log_cfg)
    w.finalize()

    steps_per_check = max(1, int(round(pile_cfg.check_interval / dyn_cfg.timestep)))
    relaxed = False
    while w.time < pile_cfg.settle_timeout:
        for _ in range(steps_per_check):
            w.step()
        if w.time >= pile_cfg.settle_min_time and w.mean_log_speed() < pile_cfg.relax_speed:
            relaxed = True
            break
    states = [
        LogState(
            position=w.x[i].copy(),
            quat=w.q[i].copy(),
            lin_vel=w.v[i].copy(),
            ang_vel=w.w[i].copy(),
        )
        for i in w.log_ids
    ]
    return states, relaxed


def gen_pile(
    seed: int,
    n_logs: int,
    terrain: Heightfield | None = None,
    cfg: Config | None = None,
    capture: bool = True,
) -> PileScene:
    """Generate one settled pile; raises PileRejected if it fails to relax."""
    cfg = cfg or Config()
    if not 2 <= n_logs <= 5:
        raise ValueError(f"n_logs must be 2..5, got {n_logs}")
    if terrain is None:
        terrain = gen_terrain(seed, cfg.terrain)
    rng = np.random.default_rng(np.random.SeedSequence([0x911E, seed & 0xFFFFFFFF, n_logs]))
    offsets = rng.normal(0.0, cfg.pile.sigma_pos, size=(n_logs, 2))
    yaws = rng.normal(0.0, cfg.pile.sigma_rot, size=n_logs)
    states, relaxed = drop_logs(terrain, offsets, yaws, cfg.pile, cfg.dynamics, cfg.logs)
    if not relaxed:
        raise PileRejected(f"pile seed={seed} did not relax within {cfg.pile.settle_timeout}s")
    target = select_target(states, cfg.logs, cfg.pile.occlusion_overlap)
    scene = PileScene(
        terrain=terrain, logs=states, target=target,
        reconstruction=None, seed=seed, relaxed=relaxed,
    )
    if capture:
        from . import camera

        scene.reconstruction = camera.capture(scene, cfg.camera)
    return scene


def gen_scene(seed: int, n_logs: int, cfg: Config | None = None,
              capture: bool = True) -> PileScene:
    """gen_pile with rejected piles resampled under a shifted seed."""
    cfg = cfg or Config()
    for attempt in range(cfg.pile.max_retries):
        try:
            return gen_pile(seed + attempt * 7919, n_logs, None, cfg, capture=capture)
        except PileRejected:
            continue
    raise PileRejected(f"no relaxed pile found for seed={seed} after {cfg.pile.max_retries} tries")


# ------------------------------------------------------------------ file IO

def _pack_array(arr: np.ndarray, dtype: str) -> bytes:
    a = np.ascontiguousarray(arr.astype(dtype))
    return struct.pack("<I", len(a.shape)) + struct.pack(f"<{len(a.shape)}I", *a.shape) + a.tobytes()


def _unpack_array(buf: io.BytesIO, dtype: str) -> np.ndarray:
    (nd,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{nd}I", buf.read(4 * nd))
    count = int(np.prod(shape))
    data = np.frombuffer(buf.read(count * np.dtype(dtype).itemsize), dtype=dtype)
    return data.reshape(shape).copy()


def scene_to_bytes(scene: PileScene) -> bytes:
    """Versioned binary scene: header, terrain grid (float32 LE), log states,
    target, embedded reconstruction rasters."""
    out = io.BytesIO()
    out.write(SCENE_MAGIC)
    out.write(struct.pack("<IqIB", SCENE_VERSION, scene.seed, scene.n_logs, 1 if scene.relaxed else 0))
    t = scene.terrain
    out.write(struct.pack("<ddq", float(t.origin[0]), float(t.origin[1]), t.seed))
    out.write(struct.pack("<d", t.cell_size))
    out.write(_pack_array(t.elevations, "<f4"))
    for l in scene.logs:
        out.write(struct.pack("<13d", *l.position, *l.quat, *l.lin_vel, *l.ang_vel))
    out.write(struct.pack("<3ddi", *scene.target.position, scene.target.axis_angle,
                          scene.target.log_index))
    recon = scene.reconstruction
    if recon is None:
        out.write(struct.pack("<B", 0))
    else:
        out.write(struct.pack("<B", 1))
        out.write(struct.pack("<dddd", float(recon.centre[0]), float(recon.centre[1]),
                              recon.reference_z, recon.extent))
        out.write(_pack_array(recon.rgb, "<f4"))
        out.write(_pack_array(recon.surface_z, "<f4"))
    return out.getvalue()


def scene_from_bytes(blob: bytes) -> PileScene:
    buf = io.BytesIO(blob)
    if buf.read(4) != SCENE_MAGIC:
        raise ValueError("not a scene file (bad magic)")
    version, seed, n_logs, relaxed = struct.unpack("<IqIB", buf.read(17))
    if version != SCENE_VERSION:
        raise ValueError(f"unsupported scene version {version}")
    ox, oy, tseed = struct.unpack("<ddq", buf.read(24))
    (cell,) = struct.unpack("<d", buf.read(8))
    elev = _unpack_array(buf, "<f4")
    terrain = Heightfield(origin=np.array([ox, oy]), cell_size=cell, elevations=elev, seed=tseed)
    logs = []
    for _ in range(n_logs):
        vals = struct.unpack("<13d", buf.read(13 * 8))
        logs.append(
            LogState(
                position=np.array(vals[0:3]), quat=np.array(vals[3:7]),
                lin_vel=np.array(vals[7:10]), ang_vel=np.array(vals[10:13]),
            )
        )
    tx, ty, tz, ang, idx = struct.unpack("<3ddi", buf.read(36))
    target = GraspTarget(position=np.array([tx, ty, tz]), axis_angle=ang, log_index=idx)
    (has_recon,) = struct.unpack("<B", buf.read(1))
    recon = None
    if has_recon:
        cx, cy, ref_z, extent = struct.unpack("<dddd", buf.read(32))
        rgb = _unpack_array(buf, "<f4")
        surface = _unpack_array(buf, "<f4")
        from .camera import ReconstructionImage

        recon = ReconstructionImage(
            extent=extent, centre=np.array([cx, cy]), reference_z=ref_z,
            rgb=rgb, surface_z=surface,
        )
    return PileScene(terrain=terrain, logs=logs, target=target,
                     reconstruction=recon, seed=seed, relaxed=bool(relaxed))


def save_scene(scene: PileScene, path):
    with open(path, "wb") as fh:
        fh.write(scene_to_bytes(scene))


def load_scene(path) -> PileScene:
    with open(path, "rb") as fh:
        return scene_from_bytes(fh.read())
