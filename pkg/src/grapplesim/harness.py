"""Batch evaluation and the ablation instruments.

Every instrument is deterministic given its seeds, reports results as
comma-separated tables, and (on request) renders matplotlib figures next to
the tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .env import GraspEnv, Observation
from .records import EpisodeRecord, record_episode

NOISE_LEVELS = tuple(2.0**k for k in range(-4, 4))   # 8 levels, 2^-4 .. 2^3
N_OBS_CHANNELS = 18  # 16 scalars + grey + depth


@dataclass
class EvalStats:
    n_episodes: int
    n_invalid: int
    success_rate: float
    per_pile_size: dict[int, tuple[int, int]]      # n_logs -> (successes, episodes)
    grasped_histogram: dict[int, int]              # logs grasped -> count
    rewards: np.ndarray
    records: list[EpisodeRecord] = field(default_factory=list)

    def reward_mean(self) -> float:
        return float(self.rewards.mean()) if len(self.rewards) else 0.0


def evaluate(
    env: GraspEnv,
    policy,
    n_episodes: int,
    preset: str = "evaluation",
    difficulty: float = 0.0,
    base_seed: int = 0,
    keep_records: bool = False,
    obs_noise=None,
) -> EvalStats:
    """Run a deterministic evaluation batch; per-episode seeds are
    base_seed + i.  Policy faults mark the episode invalid and exclude it."""
    per_size: dict[int, list[int]] = {}
    histogram: dict[int, int] = {}
    rewards = []
    records = []
    n_invalid = 0
    successes = 0
    n_valid = 0
    for i in range(n_episodes):
        seed = base_seed + i
        try:
            rec = record_episode(env, policy, seed, difficulty, preset, obs_noise=obs_noise)
        except Exception:
            n_invalid += 1
            continue
        n_valid += 1
        n_pile = env.scene.n_logs
        per_size.setdefault(n_pile, []).append(1 if rec.success else 0)
        if rec.success:
            successes += 1
            histogram[rec.n_logs] = histogram.get(rec.n_logs, 0) + 1
        rewards.append(rec.accumulated_reward)
        if keep_records:
            records.append(rec)
        else:
            records.append(_strip_record(rec))
    return EvalStats(
        n_episodes=n_valid,
        n_invalid=n_invalid,
        success_rate=successes / n_valid if n_valid else 0.0,
        per_pile_size={k: (sum(v), len(v)) for k, v in per_size.items()},
        grasped_histogram=histogram,
        rewards=np.array(rewards),
        records=records,
    )


def _strip_record(rec: EpisodeRecord) -> EpisodeRecord:
    lean = EpisodeRecord(
        seed=rec.seed, difficulty=rec.difficulty, preset=rec.preset,
        success=rec.success, n_logs=rec.n_logs,
        accumulated_reward=rec.accumulated_reward,
        target_position=rec.target_position, target_axis=rec.target_axis,
        grasp_position=rec.grasp_position,
    )
    return lean


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """95% bootstrap confidence interval of the mean."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return (0.0, 0.0)
    rng = np.random.default_rng(seed)
    means = np.array([
        rng.choice(values, size=len(values), replace=True).mean()
        for _ in range(n_resamples)
    ])
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


# ------------------------------------------------------------- noise sweeps

OBS_CHANNEL_NAMES = [
    "rel_pos_x", "rel_pos_y", "rel_pos_z",
    "rel_vel_x", "rel_vel_y", "rel_vel_z", "speed",
    "rotator_angle", "rotator_speed",
    "swing_angle_g", "swing_angle_h", "swing_speed_g", "swing_speed_h",
    "opening_angle", "opening_speed", "load",
    "grey_camera", "depth_camera",
]


def observation_sigmas(records: list[EpisodeRecord]) -> np.ndarray:
    """Per-channel standard deviations over a reference run (camera channels
    pooled over all pixels)."""
    scal = np.concatenate([r.observation_matrix() for r in records if r.steps], axis=0)
    sig = np.empty(N_OBS_CHANNELS)
    sig[:16] = scal.std(axis=0)
    greys = np.concatenate([np.stack([s.grey for s in r.steps]).ravel() for r in records if r.steps])
    depths = np.concatenate([np.stack([s.depth for s in r.steps]).ravel() for r in records if r.steps])
    sig[16] = greys.std()
    sig[17] = depths.std()
    return sig


class _NoiseInjector:
    """Adds Gaussian noise of a fixed scale to one observation channel,
    resampled every control step, applied before clipping."""

    def __init__(self, channel: int, scale: float, cfg: Config, seed: int = 0):
        self.channel = channel
        self.scale = scale
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([0x4015E, seed, channel]))

    def __call__(self, obs: Observation) -> Observation:
        import dataclasses as dc

        if self.scale == 0.0:
            return obs
        c = self.channel
        if c < 16:
            scalars = obs.scalars.copy()
            scalars[c] += self.rng.normal(0.0, self.scale)
            lim = 1.0 if 7 <= c <= 14 else self.cfg.env.obs_clip
            scalars[c] = np.clip(scalars[c], -lim, lim)
            return Observation(scalars=scalars, frame=obs.frame)
        frame = obs.frame
        if c == 16:
            grey = np.clip(
                frame.grey + self.rng.normal(0.0, self.scale, frame.grey.shape), 0.0, 1.0
            ).astype(np.float32)
            new = dc.replace(frame, grey=grey)
        else:
            depth = np.maximum(
                frame.depth + self.rng.normal(0.0, self.scale, frame.depth.shape), 0.0
            ).astype(np.float32)
            new = dc.replace(frame, depth=depth)
        return Observation(scalars=obs.scalars, frame=new)


def noise_sweep(
    env: GraspEnv,
    policy,
    channel: int,
    sigma: float,
    levels=NOISE_LEVELS,
    n_episodes: int = 100,
    preset: str = "evaluation",
    difficulty: float = 0.0,
    base_seed: int = 0,
):
    """Mean accumulated reward vs noise level for one observation channel."""
    rows = []
    for level in levels:
        injector = _NoiseInjector(channel, level * sigma, env.cfg, seed=base_seed)
        stats = evaluate(
            env, policy, n_episodes, preset=preset, difficulty=difficulty,
            base_seed=base_seed, obs_noise=injector,
        )
        lo, hi = bootstrap_ci(stats.rewards)
        rows.append(
            dict(channel=channel, name=OBS_CHANNEL_NAMES[channel], level=level,
                 sigma=sigma, mean_reward=stats.reward_mean(), ci_lo=lo, ci_hi=hi,
                 success_rate=stats.success_rate)
        )
    return rows


# ------------------------------------------------------ action sensitivity

def action_sensitivity(
    records: list[EpisodeRecord],
    policy,
    channel: int,
    n_samples: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Mean |action change| per action component when channel ``channel`` is
    perturbed on recorded observations.

    The noise scale follows the recorded data: 0.2 * (max - min) of the
    channel over all recorded steps.
    """
    if not records or all(not r.steps for r in records):
        raise ValueError("records are empty")
    from .env import Observation
    import dataclasses as dc

    steps = [s for r in records for s in r.steps]
    if channel < 16:
        vals = np.array([s.scalars[channel] for s in steps])
    elif channel == 16:
        vals = np.concatenate([s.grey.ravel() for s in steps])
    else:
        vals = np.concatenate([s.depth.ravel() for s in steps])
    scale = 0.2 * (vals.max() - vals.min())

    rng = np.random.default_rng(np.random.SeedSequence([0xAC7, seed, channel]))
    if n_samples is not None and n_samples < len(steps):
        idx = rng.choice(len(steps), size=n_samples, replace=False)
        steps = [steps[i] for i in idx]

    deltas = np.zeros(5)
    info: dict = {}
    for s in steps:
        frame = _FrameView(s.grey, s.depth)
        base_obs = Observation(scalars=s.scalars.copy(), frame=frame)
        a0 = np.asarray(policy(base_obs, info), dtype=np.float64)
        if channel < 16:
            scalars = s.scalars.copy()
            scalars[channel] += rng.normal(0.0, scale)
            noisy = Observation(scalars=scalars, frame=frame)
        elif channel == 16:
            noisy = Observation(
                scalars=s.scalars,
                frame=_FrameView(
                    (s.grey + rng.normal(0.0, scale, s.grey.shape)).astype(np.float32),
                    s.depth,
                ),
            )
        else:
            noisy = Observation(
                scalars=s.scalars,
                frame=_FrameView(
                    s.grey,
                    (s.depth + rng.normal(0.0, scale, s.depth.shape)).astype(np.float32),
                ),
            )
        a1 = np.asarray(policy(noisy, info), dtype=np.float64)
        deltas += np.abs(a1 - a0)
    return deltas / len(steps)


class _FrameView:
    """Duck-typed CameraFrame carrying recorded rasters."""

    __slots__ = ("grey", "depth", "pose_used", "extent_used")

    def __init__(self, grey, depth):
        self.grey = grey
        self.depth = depth
        self.pose_used = (np.zeros(3), 0.0)
        self.extent_used = 0.0


# ------------------------------------------------------ perturbation heatmap

@dataclass
class HeatmapResult:
    offsets: np.ndarray          # (n, 2) target perturbations
    grasp_points: np.ndarray     # (n, 2) actual grasp xy, nan for failures
    successes: np.ndarray        # (n,) bool
    density: np.ndarray          # (bins, bins) histogram of grasp points
    extent: tuple                # (xmin, xmax, ymin, ymax) of the density


def perturbation_heatmap(
    env: GraspEnv,
    policy,
    scene_seed: int,
    grid: int = 25,
    region: float = 1.0,
    preset: str = "evaluation",
    difficulty: float = 0.0,
    bins: int = 50,
) -> HeatmapResult:
    """Systematically perturb the target position on one fixed scene and
    record where the policy actually grasps (grid x grid attempts)."""
    offsets = []
    points = []
    successes = []
    lin = np.linspace(-region / 2.0, region / 2.0, grid)
    for dy in lin:
        for dx in lin:
            obs = env.reset(difficulty=difficulty, seed=scene_seed, preset=preset)
            env.target_position = env.target_position + np.array([dx, dy, 0.0])
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
            grasp_xy = None
            while not done:
                obs, _, done, info = env.step(policy(obs, info))
                if info["n_logs_held"] > 0 and grasp_xy is None:
                    grasp_xy = np.asarray(info["grapple_position"][:2]).copy()
            offsets.append((dx, dy))
            successes.append(bool(info["success"]))
            points.append(grasp_xy if (grasp_xy is not None and info["success"]) else np.array([np.nan, np.nan]))
    offsets = np.array(offsets)
    points = np.array(points)
    ok = ~np.isnan(points[:, 0])
    if ok.any():
        cx, cy = points[ok, 0].mean(), points[ok, 1].mean()
    else:
        cx = cy = 0.0
    half = max(region, 1.0)
    extent = (cx - half, cx + half, cy - half, cy + half)
    density, _, _ = np.histogram2d(
        points[ok, 0], points[ok, 1], bins=bins,
        range=[[extent[0], extent[1]], [extent[2], extent[3]]],
    )
    return HeatmapResult(
        offsets=offsets, grasp_points=points, successes=np.array(successes),
        density=density, extent=extent,
    )


# ------------------------------------------------------------------ reports

def write_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_eval_report(stats: EvalStats, out_dir, prefix: str = "evaluate"):
    """Delimited tables plus summary figures for an evaluation batch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        dict(seed=r.seed, success=int(r.success), n_logs=r.n_logs,
             reward=r.accumulated_reward,
             target_x=r.target_position[0], target_y=r.target_position[1],
             grasp_x=r.grasp_position[0], grasp_y=r.grasp_position[1])
        for r in stats.records
    ]
    write_csv(out / f"{prefix}_episodes.csv", rows)
    lo, hi = bootstrap_ci(stats.rewards)
    write_csv(out / f"{prefix}_summary.csv", [
        dict(n_episodes=stats.n_episodes, n_invalid=stats.n_invalid,
             success_rate=stats.success_rate, mean_reward=stats.reward_mean(),
             reward_ci_lo=lo, reward_ci_hi=hi),
    ])
    plt = _matplotlib()
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    axes[0].hist(stats.rewards, bins=30, color="tab:blue")
    axes[0].set_xlabel("accumulated reward")
    axes[0].set_title(f"success rate {stats.success_rate:.0%}")
    sizes = sorted(stats.per_pile_size)
    axes[1].bar([str(s) for s in sizes],
                [stats.per_pile_size[s][0] / max(stats.per_pile_size[s][1], 1) for s in sizes],
                color="tab:green")
    axes[1].set_xlabel("logs in pile")
    axes[1].set_ylabel("success rate")
    grasped = sorted(stats.grasped_histogram)
    axes[2].bar([str(g) for g in grasped], [stats.grasped_histogram[g] for g in grasped],
                color="tab:orange")
    axes[2].set_xlabel("logs grasped")
    fig.tight_layout()
    fig.savefig(out / f"{prefix}_summary.png", dpi=120)
    plt.close(fig)


def render_noise_report(all_rows: list[dict], out_dir, prefix: str = "noise"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{prefix}_sweep.csv", all_rows)
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_channel: dict[str, list[dict]] = {}
    for row in all_rows:
        by_channel.setdefault(row["name"], []).append(row)
    for name, rows in by_channel.items():
        rows = sorted(rows, key=lambda r: r["level"])
        ax.plot([r["level"] for r in rows], [r["mean_reward"] for r in rows],
                marker="o", label=name)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("noise level (x sigma)")
    ax.set_ylabel("mean accumulated reward")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / f"{prefix}_sweep.png", dpi=120)
    plt.close(fig)


def render_sensitivity_report(rows: list[dict], out_dir, prefix: str = "actions"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{prefix}_sensitivity.csv", rows)
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    names = [r["name"] for r in rows]
    comps = ["vx", "vy", "vz", "rotate", "open_close"]
    x = np.arange(len(names))
    width = 0.16
    for k, comp in enumerate(comps):
        ax.bar(x + (k - 2) * width, [r[comp] for r in rows], width, label=comp)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=75, fontsize=7)
    ax.set_ylabel("mean |action delta|")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / f"{prefix}_sensitivity.png", dpi=120)
    plt.close(fig)


def render_heatmap_report(result: HeatmapResult, out_dir, prefix: str = "heatmap"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        dict(offset_x=o[0], offset_y=o[1], grasp_x=p[0], grasp_y=p[1], success=int(s))
        for o, p, s in zip(result.offsets, result.grasp_points, result.successes)
    ]
    write_csv(out / f"{prefix}_points.csv", rows)
    np.save(out / f"{prefix}_density.npy", result.density)
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.imshow(result.density.T, origin="lower", extent=result.extent, cmap="hot")
    ok = ~np.isnan(result.grasp_points[:, 0])
    ax.plot(result.grasp_points[ok, 0], result.grasp_points[ok, 1], ".", ms=2,
            color="cyan", alpha=0.5)
    ax.set_xlabel("x, m")
    ax.set_ylabel("y, m")
    ax.set_title(f"{int(result.successes.sum())}/{len(result.successes)} successful grasps")
    fig.tight_layout()
    fig.savefig(out / f"{prefix}.png", dpi=120)
    plt.close(fig)
