"""Episode recording: per-step observations, actions, rewards, and outcomes.

Versioned binary files; replay re-runs the environment from the recorded
(seed, difficulty, preset, actions) and must reproduce the observation
stream bit for bit.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

RECORD_MAGIC = b"GREC"
RECORD_VERSION = 1


@dataclass
class StepRecord:
    scalars: np.ndarray        # (16,) float32
    grey: np.ndarray           # (64, 64) float32
    depth: np.ndarray          # (64, 64) float32
    action: np.ndarray         # (5,) float32
    r_target: float
    r_guide: float
    r_energy: float
    stage: int
    n_logs_held: int
    x_dgrasp: float
    snapshot_hash: int
    done: bool


@dataclass
class EpisodeRecord:
    seed: int
    difficulty: float
    preset: str
    steps: list[StepRecord] = field(default_factory=list)
    success: bool = False
    n_logs: int = 0
    accumulated_reward: float = 0.0
    target_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_axis: float = 0.0
    grasp_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    invalid: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def actions(self) -> np.ndarray:
        return np.stack([s.action for s in self.steps]) if self.steps else np.zeros((0, 5))

    def observation_matrix(self) -> np.ndarray:
        """(n_steps, 16) scalar observations."""
        return np.stack([s.scalars for s in self.steps]) if self.steps else np.zeros((0, 16))


def record_episode(env, policy, seed: int, difficulty: float, preset: str,
                   obs_noise=None) -> EpisodeRecord:
    """Run one episode and capture every step.

    ``obs_noise`` optionally maps (Observation, rng) -> Observation before
    the policy sees it (the noise-sweep hook).
    """
    from .env import Observation  # local import to avoid cycles

    rec = EpisodeRecord(seed=seed, difficulty=difficulty, preset=preset)
    obs = env.reset(difficulty=difficulty, seed=seed, preset=preset)
    if hasattr(policy, "reset"):
        policy.reset()
    info = {
        "grapple_heading": 0.0,
        "target_axis": env.target_axis,
        "target_position": env.target_position,
        "n_logs_held": 0,
        "stage": 1,
        "log_positions": env.world.x[env.world.log_ids].copy(),
    }
    done = False
    grasp_position = np.zeros(3)
    grasp_seen = False
    while not done:
        seen = obs_noise(obs) if obs_noise is not None else obs
        action = np.asarray(policy(seen, info), dtype=np.float32)
        obs, breakdown, done, info = env.step(action)
        if info["n_logs_held"] > 0 and not grasp_seen:
            grasp_seen = True
            grasp_position = np.asarray(info["grapple_position"], dtype=np.float64).copy()
        rec.steps.append(
            StepRecord(
                scalars=obs.scalars.copy(),
                grey=obs.frame.grey.copy(),
                depth=obs.frame.depth.copy(),
                action=action.copy(),
                r_target=breakdown.r_target,
                r_guide=breakdown.r_guide,
                r_energy=breakdown.r_energy,
                stage=breakdown.stage,
                n_logs_held=info["n_logs_held"],
                x_dgrasp=info["x_dgrasp"],
                snapshot_hash=info["snapshot_hash"],
                done=done,
            )
        )
    rec.success = bool(info["success"])
    rec.n_logs = int(info["n_logs_held"])
    rec.accumulated_reward = float(info["accumulated_reward"])
    rec.target_position = np.asarray(info["target_position"], dtype=np.float64)
    rec.target_axis = float(info["target_axis"])
    rec.grasp_position = grasp_position
    return rec


# ------------------------------------------------------------------ file IO

def _w(out, fmt, *vals):
    out.write(struct.pack(fmt, *vals))


def episode_to_bytes(rec: EpisodeRecord) -> bytes:
    out = io.BytesIO()
    out.write(RECORD_MAGIC)
    preset = rec.preset.encode()
    _w(out, "<IqdH", RECORD_VERSION, rec.seed, rec.difficulty, len(preset))
    out.write(preset)
    _w(out, "<IBId", rec.n_steps, 1 if rec.success else 0, rec.n_logs, rec.accumulated_reward)
    _w(out, "<3dd3dB", *rec.target_position, rec.target_axis, *rec.grasp_position,
       1 if rec.invalid else 0)
    for s in rec.steps:
        out.write(s.scalars.astype("<f4").tobytes())
        out.write(s.grey.astype("<f4").tobytes())
        out.write(s.depth.astype("<f4").tobytes())
        out.write(s.action.astype("<f4").tobytes())
        _w(out, "<3fBBfQB", s.r_target, s.r_guide, s.r_energy, s.stage,
           s.n_logs_held, s.x_dgrasp, s.snapshot_hash, 1 if s.done else 0)
    return out.getvalue()


def episode_from_bytes(blob: bytes) -> EpisodeRecord:
    buf = io.BytesIO(blob)
    magic = buf.read(4)
    if magic != RECORD_MAGIC:
        raise ValueError("not an episode record (bad magic)")
    version, seed, difficulty, preset_len = struct.unpack("<IqdH", buf.read(22))
    if version != RECORD_VERSION:
        raise ValueError(f"unsupported record version {version}")
    preset = buf.read(preset_len).decode()
    n_steps, success, n_logs, acc = struct.unpack("<IBId", buf.read(17))
    vals = struct.unpack("<3dd3dB", buf.read(57))
    rec = EpisodeRecord(
        seed=seed, difficulty=difficulty, preset=preset,
        success=bool(success), n_logs=n_logs, accumulated_reward=acc,
        target_position=np.array(vals[0:3]), target_axis=vals[3],
        grasp_position=np.array(vals[4:7]), invalid=bool(vals[7]),
    )
    res = 64
    for _ in range(n_steps):
        scalars = np.frombuffer(buf.read(16 * 4), dtype="<f4").copy()
        grey = np.frombuffer(buf.read(res * res * 4), dtype="<f4").reshape(res, res).copy()
        depth = np.frombuffer(buf.read(res * res * 4), dtype="<f4").reshape(res, res).copy()
        action = np.frombuffer(buf.read(5 * 4), dtype="<f4").copy()
        chunk = buf.read(struct.calcsize("<3fBBfQB"))
        if len(chunk) != struct.calcsize("<3fBBfQB"):
            raise ValueError("truncated episode record")
        rt, rg, re_, stage, nheld, xd, shash, done = struct.unpack("<3fBBfQB", chunk)
        rec.steps.append(
            StepRecord(
                scalars=scalars, grey=grey, depth=depth, action=action,
                r_target=rt, r_guide=rg, r_energy=re_, stage=stage,
                n_logs_held=nheld, x_dgrasp=xd, snapshot_hash=shash,
                done=bool(done),
            )
        )
    if len(rec.steps) != n_steps:
        raise ValueError("truncated episode record")
    return rec


def save_episode(rec: EpisodeRecord, path):
    with open(path, "wb") as fh:
        fh.write(episode_to_bytes(rec))


def load_episode(path) -> EpisodeRecord:
    with open(path, "rb") as fh:
        return episode_from_bytes(fh.read())
