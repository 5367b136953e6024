import numpy as np
import pytest

from grapplesim.config import DynamicsConfig, LogConfig
from grapplesim.crane import JOINT_ORDER, plumb_swing_angles
from grapplesim.dynamics import World
from grapplesim.maths import quat_from_axis_angle
from grapplesim.terrain import Heightfield

from conftest import flat_heightfield


def incline_heightfield(angle_deg: float, extent=30.0, cell=0.5) -> Heightfield:
    n = int(extent / cell) + 1
    xs = np.linspace(-extent / 2, extent / 2, n)
    elev = np.tile(xs * np.tan(np.deg2rad(angle_deg)), (n, 1)).astype(np.float32)
    return Heightfield(origin=np.array([-extent / 2, -extent / 2]), cell_size=cell,
                       elevations=elev, seed=0)


def test_ballistic_trajectory(flat_hf):
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    lid = w.add_log([0, 0, 50.0], [1, 0, 0, 0], lin_vel=[1.0, 0.5, 2.0])
    w.finalize()
    for _ in range(60):
        w.step()
    t = w.time
    expected = np.array([1.0 * t, 0.5 * t, 50.0 + 2.0 * t - 0.5 * w.cfg.gravity * t * t])
    assert np.linalg.norm(w.x[lid] - expected) < 1e-3


def test_drop_settles_within_three_seconds(flat_hf, cfg):
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    lid = w.add_log([0, 0, 1.0 + 0.1], [1, 0, 0, 0])
    w.finalize()
    settled_at = None
    while w.time < 3.0:
        w.step()
        if settled_at is None and w.time > 0.5 and w.mean_log_speed() < cfg.pile.relax_speed:
            settled_at = w.time
    assert settled_at is not None and settled_at < 3.0
    # resting contact, no tunnelling
    assert -0.05 <= w.x[lid, 2] <= 0.30


def test_incline_stick(cfg):
    # tan(20 deg) = 0.36 < mu = 0.5: static after settling
    hf = incline_heightfield(20.0)
    w = World(DynamicsConfig())
    w.set_terrain(hf)
    q = quat_from_axis_angle([0, 0, 1], np.pi / 2)  # long axis along the level lines
    lid = w.add_log([0, 0, 0.12], q)
    w.finalize()
    for _ in range(120):
        w.step()
    p0 = w.x[lid].copy()
    for _ in range(120):
        w.step()
    assert np.linalg.norm(w.x[lid] - p0) < 0.01


def test_incline_slip(cfg):
    # tan(35 deg) = 0.70 > mu = 0.5: slides
    hf = incline_heightfield(35.0)
    w = World(DynamicsConfig())
    w.set_terrain(hf)
    q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
    lid = w.add_log([0, 0, 0.15], q)
    w.finalize()
    p0 = w.x[lid].copy()
    for _ in range(120):
        w.step()
    assert np.linalg.norm(w.x[lid, :2] - p0[:2]) > 0.3


def test_friction_cone_every_contact_every_step(flat_hf, cfg):
    rng = np.random.default_rng(0)
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    for k in range(4):
        yaw = quat_from_axis_angle([0, 0, 1], rng.normal(0, 0.3))
        w.add_log([rng.normal(0, 0.3), rng.normal(0, 0.3), 0.2 + 0.3 * k], yaw)
    w.finalize()
    mu = w.cfg.friction
    for _ in range(240):
        w.step()
        _, _, _, _, pn, pt = w.contact_report()
        assert np.all(pt <= mu * pn + 1e-9)


def test_determinism_over_200_steps(flat_hf):
    def run():
        w = World(DynamicsConfig())
        w.set_terrain(flat_hf)
        w.add_log([0, 0, 0.5], quat_from_axis_angle([0, 1, 0], 0.2))
        w.add_log([0.3, 0.1, 0.9], quat_from_axis_angle([0, 0, 1], 0.5))
        w.finalize()
        for _ in range(200):
            w.step()
        return w.snapshot_bytes()

    assert run() == run()


def test_motor_clamp_saturation_semantics(flat_hf, desc):
    # a weak motor that cannot reach its target must sit exactly at its cap
    from grapplesim.dynamics.world import _any_perp

    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    idx = w._add_body("rod", 100.0, np.array([0.1, 100 * 4 / 12, 100 * 4 / 12]),
                      [1.0, 0, 2.0], [1, 0, 0, 0])
    axis = np.array([0.0, 1.0, 0.0])
    t1 = _any_perp(axis)
    w._joints.append(dict(name="j", logical="j", kind=0, a=0, b=idx,
                          anchor_a=np.array([0.0, 0.0, 2.0]),
                          anchor_b=np.array([-1.0, 0, 0]), axis=axis,
                          t1=t1, t2=np.cross(axis, t1), ref_b=t1.copy(),
                          lo=-2.0, hi=2.0, motor=True, motor_cap=500.0,
                          fric=0.0, damp=0.0, q0=0.0))
    w._joint_index["j"] = [0]
    w.finalize()
    w.set_motor_target("j", 0.0)  # gravity torque 981 Nm > 500 Nm cap
    cap_impulse = 500.0 * w.cfg.timestep
    for _ in range(30):
        w.step()
        assert abs(w.j_vel[0]) > 1e-4  # target velocity unreached
        assert abs(abs(w.j_motor_imp[0]) - cap_impulse) < 1e-9


def test_settled_pile_stays_relaxed(flat_hf, cfg):
    rng = np.random.default_rng(3)
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    for k in range(5):
        yaw = quat_from_axis_angle([0, 0, 1], rng.normal(0, 0.25))
        w.add_log([rng.normal(0, 0.4), rng.normal(0, 0.4), 0.25 + 0.25 * k], yaw)
    w.finalize()
    for _ in range(360):  # settle 6 s
        w.step()
    assert w.mean_log_speed() < cfg.pile.relax_speed
    for _ in range(600):  # a further 10 s
        w.step()
        assert w.mean_log_speed() < cfg.pile.relax_speed
    for lid in w.log_ids:
        # no tunnelling: the log's lowest point stays above the surface
        ground = float(flat_hf.height_at(w.x[lid, 0], w.x[lid, 1]))
        assert w.x[lid, 2] - 0.1 - ground >= -0.05


def test_actuator_power_zero_at_rest(flat_hf, desc):
    q0 = dict(desc.start_articulation)
    q0["g"], q0["h"] = plumb_swing_angles(desc, q0)
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    w.add_crane(desc, q0)
    w.finalize()
    for _ in range(60):
        w.step()
    assert w.actuator_power() < 5.0  # static hold: forces large, velocities ~0


def test_load_cell_empty_and_loaded(flat_hf, desc, cfg):
    q0 = dict(desc.start_articulation)
    q0["g"], q0["h"] = plumb_swing_angles(desc, q0)
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    w.add_crane(desc, q0)
    w.finalize()
    for _ in range(60):
        w.step()
    m_empty = w.load_cell_force() / cfg.dynamics.gravity
    assert m_empty == pytest.approx(desc.empty_grapple_mass, rel=0.02)

    # statically holding one log: place it inside the closed claws
    q1 = dict(q0, f=0.35)
    probe = World(DynamicsConfig())
    probe.set_terrain(flat_heightfield(z=-10.0))  # ground far below
    probe.add_crane(desc, q1)
    probe.finalize()
    ref = probe.grapple_reference()
    w2 = World(DynamicsConfig())
    w2.set_terrain(flat_heightfield(z=-10.0))
    w2.add_crane(desc, q1)
    w2.add_log(ref + np.array([0.0, 0.0, 0.1]), [1, 0, 0, 0], log_cfg=cfg.logs)
    w2.finalize()
    w2.set_motor_target("f", -0.3)  # keep claws squeezed
    for _ in range(240):
        w2.step()
    gi = w2.grasp_info()
    assert gi.n_logs_held == 1
    carried = w2.load_cell_force() / cfg.dynamics.gravity - desc.empty_grapple_mass
    assert carried == pytest.approx(cfg.logs.mass, rel=0.05)
    normalized = carried / desc.empty_grapple_mass
    assert normalized == pytest.approx(112.0 / 249.0, rel=0.05)


def test_grasp_info_open_grapple_holds_nothing(flat_hf, desc, cfg):
    q0 = dict(desc.start_articulation)
    q0["g"], q0["h"] = plumb_swing_angles(desc, q0)
    q0["f"] = 1.1
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    w.add_crane(desc, q0)
    w.finalize()
    ref = w.grapple_reference()
    w2 = World(DynamicsConfig())
    w2.set_terrain(flat_hf)
    w2.add_crane(desc, q0)
    w2.add_log(ref, [1, 0, 0, 0], log_cfg=cfg.logs)  # log at the reference point
    w2.finalize()
    gi = w2.grasp_info()
    assert not gi.grapple_closed
    assert gi.n_logs_held == 0


def test_grasp_info_two_log_fixture(flat_hf, desc, cfg):
    # closed grapple around two logs at +-0.25 m lateral: both enclosed, and
    # x_dgrasp matches the hand-computed geometry |ref - mean CoM|
    q0 = dict(desc.start_articulation)
    q0["g"], q0["h"] = plumb_swing_angles(desc, q0)
    q0["f"] = 0.25
    w = World(DynamicsConfig())
    w.set_terrain(flat_heightfield(z=-10.0))
    w.add_crane(desc, q0)
    w.finalize()
    ref = w.grapple_reference()
    heading_y = w.grapple_axes()[1]

    w2 = World(DynamicsConfig())
    w2.set_terrain(flat_heightfield(z=-10.0))
    w2.add_crane(desc, q0)
    p1 = ref + 0.25 * heading_y + np.array([0, 0, 0.10])
    p2 = ref - 0.25 * heading_y + np.array([0, 0, 0.10])
    w2.add_log(p1, [1, 0, 0, 0], log_cfg=cfg.logs)
    w2.add_log(p2, [1, 0, 0, 0], log_cfg=cfg.logs)
    w2.finalize()
    gi = w2.grasp_info()
    assert gi.grapple_closed
    assert gi.n_logs_held == 2
    expected = np.linalg.norm(ref - (p1 + p2) / 2.0)
    assert gi.x_dgrasp == pytest.approx(expected, abs=1e-9)


def test_snapshot_roundtrip(flat_hf):
    w = World(DynamicsConfig())
    w.set_terrain(flat_hf)
    w.add_log([0, 0, 0.5], [1, 0, 0, 0])
    w.finalize()
    for _ in range(30):
        w.step()
    blob = w.snapshot_bytes()
    h1 = w.snapshot_hash()
    for _ in range(10):
        w.step()
    assert w.snapshot_hash() != h1
    w.restore_bytes(blob)
    assert w.snapshot_hash() == h1
    with pytest.raises(ValueError):
        w.restore_bytes(b"XXXX" + blob[4:])
