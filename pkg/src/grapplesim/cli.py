"""Command-line interface.

Configuration resolves from --config, then the GRAPPLESIM_CONFIG environment
variable, then defaults.  Report-producing commands write comma-separated
tables and PNG figures into --out.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import load_config


def _policy(name: str, seed: int = 0, replay_path=None):
    from . import policies, records

    if name == "scripted":
        return policies.ScriptedGraspPolicy()
    if name == "random":
        return policies.RandomPolicy(seed)
    if name == "replay":
        rec = records.load_episode(replay_path)
        return policies.ReplayPolicy(rec.actions())
    raise click.BadParameter(f"unknown policy {name!r}")


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config overriding defaults (or set GRAPPLESIM_CONFIG).")
@click.pass_context
def main(ctx, config_path):
    ctx.obj = load_config(config_path)


@main.command("gen-scenes")
@click.option("--seeds", default="0..9", help="seed range A..B inclusive")
@click.option("--logs", default="2..5", help="log count range A..B inclusive")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_obj
def gen_scenes(cfg, seeds, logs, out_dir):
    """Generate settled pile scenes into a directory of scene files."""
    from . import scenes

    a, b = (int(x) for x in seeds.split(".."))
    la, lb = (int(x) for x in logs.split(".."))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE0E5, a, b]))
    n_ok = 0
    for seed in range(a, b + 1):
        n_logs = int(rng.integers(la, lb + 1))
        scene = scenes.gen_scene(seed, n_logs, cfg)
        path = out / f"scene_{seed:06d}_{n_logs}logs.gsc"
        scenes.save_scene(scene, path)
        n_ok += 1
        click.echo(f"{path}  span={scene.terrain.span:.3f} m  relaxed={scene.relaxed}")
    click.echo(f"wrote {n_ok} scenes")


@main.command()
@click.option("--scene", "scene_path", type=click.Path(exists=True), required=True)
@click.option("--pose", default="0,0,4,0", help="camera x,y,z,phi (scene frame)")
@click.option("--out", "out_prefix", type=click.Path(), required=True,
              help="prefix for <out>_grey.png and <out>_depth.png")
@click.pass_obj
def render(cfg, scene_path, pose, out_prefix):
    """Render a 64x64 greyscale + depth frame pair from a stored scene."""
    from . import camera, scenes

    scene = scenes.load_scene(scene_path)
    if scene.reconstruction is None:
        raise click.ClickException("scene has no embedded reconstruction")
    x, y, z, phi = (float(v) for v in pose.split(","))
    recon = scene.reconstruction
    r_rel = np.array([x - recon.centre[0], y - recon.centre[1], z - recon.reference_z])
    frame = camera.render(recon, r_rel, phi, cfg.camera)

    from PIL import Image

    grey8 = (np.clip(frame.grey, 0, 1) * 255).astype(np.uint8)
    depth16 = np.clip(frame.depth * 1000.0, 0, 65535).astype(np.uint16)  # millimetres
    Image.fromarray(grey8, mode="L").save(f"{out_prefix}_grey.png")
    Image.fromarray(depth16, mode="I;16").save(f"{out_prefix}_depth.png")
    click.echo(f"wrote {out_prefix}_grey.png and {out_prefix}_depth.png "
               f"(extent {frame.extent_used:.2f} m)")


@main.command("validate-crane")
@click.pass_obj
def validate_crane(cfg):
    """Check the crane description against its calibration targets."""
    from . import crane

    desc = crane.load_description(cfg.crane_file)
    vals = crane.validate(desc, cfg.dynamics.gravity)
    for k, v in vals.items():
        click.echo(f"{k:: <28} {v:.4f}".replace("::", ":"))
    ok = abs(vals["max_reach_m"] - 8.0) <= 0.05 and abs(vals["capacity_N"] - 9700) <= 0.05 * 9700
    ok = ok and abs(vals["total_mass_kg"] - 1630) < 1e-6
    click.echo("calibration: " + ("PASS" if ok else "FAIL"))
    sys.exit(0 if ok else 1)


@main.command("ik-bench")
@click.option("--samples", default=1000, show_default=True)
@click.option("--seed", default=0)
@click.pass_obj
def ik_bench(cfg, samples, seed):
    """Batch-solve random configurations; report timing and tracking accuracy."""
    from . import crane, ik

    desc = crane.load_description(cfg.crane_file)
    rng = np.random.default_rng(seed)
    names = crane.BOOM_JOINTS
    lows = np.array([desc.joint(n).lo for n in names])
    highs = np.array([desc.joint(n).hi for n in names])
    errs = []
    t0 = time.perf_counter()
    n_degenerate = 0
    for _ in range(samples):
        q = {n: 0.0 for n in crane.JOINT_ORDER}
        draw = rng.uniform(lows + 0.02, highs - 0.02)
        for n, v in zip(names, draw):
            q[n] = v
        J = crane.jacobian(desc, q)
        v_des = J @ rng.uniform(-0.5, 0.5, 4)
        sol = ik.solve(desc, q, v_des, cfg.ik)
        n_degenerate += int(sol.degenerate)
        norm = np.linalg.norm(v_des)
        if norm > 1e-6 and not sol.clipped:
            errs.append(np.linalg.norm(sol.achieved - v_des) / norm)
    dt = time.perf_counter() - t0
    errs = np.array(errs)
    click.echo(f"{samples} solves in {dt:.3f} s ({samples / dt:.0f}/s)")
    click.echo(f"unclipped tracking error: mean {errs.mean():.2e}  max {errs.max():.2e}")
    click.echo(f"degenerate flags: {n_degenerate}")


@main.command()
@click.option("--scene", "scene_path", type=click.Path(exists=True), required=True)
@click.option("--duration", default=10.0, show_default=True, help="seconds to simulate")
@click.pass_obj
def settle(cfg, scene_path, duration):
    """Re-drop a stored scene's logs and report relaxation time/residuals."""
    from . import scenes
    from .dynamics import World

    scene = scenes.load_scene(scene_path)
    w = World(cfg.dynamics)
    w.set_terrain(scene.terrain)
    for log in scene.logs:
        w.add_log(log.position, log.quat, log.lin_vel, log.ang_vel, cfg.logs)
    w.finalize()
    relax_t = None
    while w.time < duration:
        w.step()
        if relax_t is None and w.mean_log_speed() < cfg.pile.relax_speed:
            relax_t = w.time
    click.echo(f"mean log speed after {duration:.1f} s: {w.mean_log_speed():.2e} m/s")
    click.echo(f"first relaxed at: {relax_t if relax_t is not None else float('nan'):.3f} s")
    click.echo(f"active contacts: {w.n_contacts}")


@main.command("run-episode")
@click.option("--policy", "policy_name", default="scripted",
              type=click.Choice(["scripted", "random", "replay"]))
@click.option("--replay", "replay_path", type=click.Path(exists=True), default=None)
@click.option("--difficulty", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--preset", default="evaluation", show_default=True)
@click.option("--record", "record_path", type=click.Path(), default=None,
              help="write the episode record here")
@click.pass_obj
def run_episode(cfg, policy_name, replay_path, difficulty, seed, preset, record_path):
    """Run one episode and print the outcome."""
    from . import records
    from .env import GraspEnv

    env = GraspEnv(cfg)
    policy = _policy(policy_name, seed, replay_path)
    rec = records.record_episode(env, policy, seed, difficulty, preset)
    click.echo(f"steps={rec.n_steps} success={rec.success} n_logs={rec.n_logs} "
               f"reward={rec.accumulated_reward:.3f}")
    if record_path:
        records.save_episode(rec, record_path)
        click.echo(f"saved {record_path}")


@main.command()
@click.option("--episodes", default=100, show_default=True)
@click.option("--policy", "policy_name", default="scripted",
              type=click.Choice(["scripted", "random"]))
@click.option("--difficulty", default=0.0, show_default=True)
@click.option("--preset", default="evaluation", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="reports")
@click.pass_obj
def evaluate(cfg, episodes, policy_name, difficulty, preset, seed, out_dir):
    """Batch evaluation with per-episode table, summary, and figures."""
    from . import harness
    from .env import GraspEnv

    env = GraspEnv(cfg)
    policy = _policy(policy_name, seed)
    stats = harness.evaluate(env, policy, episodes, preset=preset,
                             difficulty=difficulty, base_seed=seed)
    harness.render_eval_report(stats, out_dir)
    click.echo(f"success rate {stats.success_rate:.1%} over {stats.n_episodes} episodes "
               f"({stats.n_invalid} invalid), mean reward {stats.reward_mean():.2f}")
    click.echo(f"reports in {out_dir}/")


@main.command("ablate-noise")
@click.option("--episodes", default=100, show_default=True, help="episodes per level")
@click.option("--reference-episodes", default=100, show_default=True)
@click.option("--channels", default="0,1,2,15,16,17",
              help="comma-separated observation channel indices (0-17)")
@click.option("--policy", "policy_name", default="scripted")
@click.option("--difficulty", default=0.0, show_default=True)
@click.option("--preset", default="evaluation", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="reports")
@click.pass_obj
def ablate_noise(cfg, episodes, reference_episodes, channels, policy_name,
                 difficulty, preset, seed, out_dir):
    """Reward vs observation noise at the eight standard levels."""
    from . import harness
    from .env import GraspEnv

    env = GraspEnv(cfg)
    policy = _policy(policy_name, seed)
    click.echo(f"reference run ({reference_episodes} episodes) for sigma_i ...")
    ref = harness.evaluate(env, policy, reference_episodes, preset=preset,
                           difficulty=difficulty, base_seed=seed, keep_records=True)
    sigmas = harness.observation_sigmas(ref.records)
    all_rows = []
    for ch in (int(c) for c in channels.split(",")):
        click.echo(f"sweeping channel {ch} ({harness.OBS_CHANNEL_NAMES[ch]}), "
                   f"sigma={sigmas[ch]:.4f}")
        rows = harness.noise_sweep(env, policy, ch, sigmas[ch],
                                   n_episodes=episodes, preset=preset,
                                   difficulty=difficulty, base_seed=seed)
        all_rows.extend(rows)
    harness.render_noise_report(all_rows, out_dir)
    click.echo(f"reports in {out_dir}/")


@main.command("ablate-actions")
@click.option("--records", "records_dir", type=click.Path(exists=True), required=True,
              help="directory of episode record files")
@click.option("--channels", default="0,1,2,15,16,17")
@click.option("--policy", "policy_name", default="scripted")
@click.option("--samples", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="reports")
@click.pass_obj
def ablate_actions(cfg, records_dir, channels, policy_name, samples, seed, out_dir):
    """Action sensitivity to observation noise on recorded data."""
    from . import harness, records as rec_mod

    recs = [rec_mod.load_episode(p) for p in sorted(Path(records_dir).glob("*.grec"))]
    if not recs:
        raise click.ClickException(f"no .grec files in {records_dir}")
    policy = _policy(policy_name, seed)
    rows = []
    for ch in (int(c) for c in channels.split(",")):
        deltas = harness.action_sensitivity(recs, policy, ch, n_samples=samples, seed=seed)
        rows.append(dict(channel=ch, name=harness.OBS_CHANNEL_NAMES[ch],
                         vx=deltas[0], vy=deltas[1], vz=deltas[2],
                         rotate=deltas[3], open_close=deltas[4]))
        click.echo(f"channel {ch}: mean |daction| = {deltas.round(4).tolist()}")
    harness.render_sensitivity_report(rows, out_dir)
    click.echo(f"reports in {out_dir}/")


@main.command()
@click.option("--scene-seed", default=0, show_default=True)
@click.option("--grid", default=25, show_default=True)
@click.option("--region", default=1.0, show_default=True)
@click.option("--policy", "policy_name", default="scripted")
@click.option("--preset", default="evaluation", show_default=True)
@click.option("--difficulty", default=0.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="reports")
@click.pass_obj
def heatmap(cfg, scene_seed, grid, region, policy_name, preset, difficulty, out_dir):
    """Grasp-position density under systematic target perturbations."""
    from . import harness
    from .env import GraspEnv

    env = GraspEnv(cfg)
    policy = _policy(policy_name)
    result = harness.perturbation_heatmap(env, policy, scene_seed, grid=grid,
                                          region=region, preset=preset,
                                          difficulty=difficulty)
    harness.render_heatmap_report(result, out_dir)
    n_ok = int(result.successes.sum())
    click.echo(f"{len(result.successes)} attempts, {n_ok} successful; reports in {out_dir}/")


@main.command()
@click.option("--bind", default="127.0.0.1:7631", show_default=True,
              help="ADDR:PORT, or 'stdio' for pipe transport")
@click.option("--max-sessions", default=None, type=int)
@click.pass_obj
def serve(cfg, bind, max_sessions):
    """Serve environments over the wire protocol."""
    from .server import EnvServer, serve_stdio

    if bind == "stdio":
        serve_stdio(cfg)
        return
    host, port = bind.rsplit(":", 1)
    server = EnvServer(cfg, host=host, port=int(port), max_sessions=max_sessions)
    click.echo(f"listening on {server.address[0]}:{server.address[1]} "
               f"(max {server.max_sessions} sessions)", err=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
