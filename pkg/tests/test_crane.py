import numpy as np
import pytest

from grapplesim import crane
from grapplesim.crane import (
    BOOM_JOINTS,
    JOINT_ORDER,
    CraneLimitError,
    forward_kinematics,
    jacobian,
    max_reach,
    plumb_swing_angles,
    static_capacity,
)
from grapplesim.maths import quat_rotate


def random_q(desc, rng, margin=0.02):
    q = {}
    for name in JOINT_ORDER:
        j = desc.joint(name)
        span = j.hi - j.lo
        q[name] = rng.uniform(j.lo + margin * span, j.hi - margin * span)
    return q


def test_description_structure(desc):
    actuated = {j.logical for j in desc.joints if j.actuated}
    assert actuated == {"a", "b", "c", "d", "e", "f"}
    passive = {j.logical for j in desc.joints if not j.actuated}
    assert passive == {"g", "h"}
    assert desc.total_mass == pytest.approx(1630.0)
    assert desc.empty_grapple_mass == pytest.approx(249.0)
    # grapple collision geometry is exactly 9 boxes
    n_boxes = sum(len(desc.collision[l]) for l in ("grapple_body", "claw_left", "claw_right"))
    assert n_boxes == 9


def test_home_pose_golden(desc):
    frames = forward_kinematics(desc, np.zeros(8))
    # frozen from the description constants: straight horizontal boom
    np.testing.assert_allclose(frames["crane_tip"].p, [6.8, 0.0, 2.5], atol=1e-12)


def test_chain_closure(desc):
    rng = np.random.default_rng(0)
    q = random_q(desc, rng)
    frames = forward_kinematics(desc, q)
    from grapplesim.maths import Transform, quat_from_axis_angle

    for j in desc.joints:
        parent = frames[j.parent]
        if j.kind == "hinge":
            motion = Transform(quat_from_axis_angle(j.axis, q[j.logical]), j.anchor)
        else:
            motion = Transform(p=j.anchor + j.axis * q[j.logical])
        rebuilt = parent * motion
        np.testing.assert_allclose(rebuilt.p, frames[j.child].p, atol=1e-12)
        np.testing.assert_allclose(rebuilt.q, frames[j.child].q, atol=1e-12)


def test_slew_mirror(desc):
    # pure rotation-symmetry check on the chain math (pi slightly exceeds the
    # slew range, so limit validation is bypassed)
    q0 = {n: 0.0 for n in JOINT_ORDER}
    q1 = dict(q0, a=np.pi)
    p0 = forward_kinematics(desc, q0, validate_limits=False)["crane_tip"].p
    p1 = forward_kinematics(desc, q1, validate_limits=False)["crane_tip"].p
    pillar = desc.base_position
    np.testing.assert_allclose(p1[:2] - pillar[:2], -(p0[:2] - pillar[:2]), atol=1e-6)
    assert p1[2] == pytest.approx(p0[2], abs=1e-9)


def test_telescope_moves_tip_along_boom_axis(desc):
    q0 = {n: 0.0 for n in JOINT_ORDER}
    q0["b"] = 0.5
    q0["c"] = -0.4
    q1 = dict(q0, d=1.0)
    f0 = forward_kinematics(desc, q0)
    f1 = forward_kinematics(desc, q1)
    axis_world = f0["outer_boom"].rotate(desc.joint("d").axis)
    np.testing.assert_allclose(f1["crane_tip"].p - f0["crane_tip"].p, axis_world * 1.0, atol=1e-12)


def test_out_of_range_rejected(desc):
    q = {n: 0.0 for n in JOINT_ORDER}
    q["b"] = desc.joint("b").hi + 0.1
    with pytest.raises(CraneLimitError, match="joint b"):
        forward_kinematics(desc, q)


def test_jacobian_matches_finite_differences(desc):
    rng = np.random.default_rng(42)
    h = 1e-6
    for _ in range(200):
        q = random_q(desc, rng)
        J = jacobian(desc, q)
        for i, name in enumerate(BOOM_JOINTS):
            qp = dict(q, **{name: q[name] + h})
            qm = dict(q, **{name: q[name] - h})
            col = (
                forward_kinematics(desc, qp, validate_limits=False)["crane_tip"].p
                - forward_kinematics(desc, qm, validate_limits=False)["crane_tip"].p
            ) / (2 * h)
            assert np.max(np.abs(J[:, i] - col)) < 1e-5


def test_jacobian_telescope_column_is_unit_axis(desc):
    rng = np.random.default_rng(1)
    q = random_q(desc, rng)
    J = jacobian(desc, q)
    axis_world = forward_kinematics(desc, q)["outer_boom"].rotate(desc.joint("d").axis)
    np.testing.assert_allclose(J[:, 3], axis_world, atol=1e-12)
    assert np.linalg.norm(J[:, 3]) == pytest.approx(1.0)


def test_home_slew_column_perpendicular_to_boom_plane(desc):
    q = {n: 0.0 for n in JOINT_ORDER}
    J = jacobian(desc, q)
    # boom plane at home is x-z; the slew column must be pure y
    assert abs(J[0, 0]) < 1e-12 and abs(J[2, 0]) < 1e-12
    assert abs(J[1, 0]) > 1.0


def test_max_reach_calibration(desc):
    reach, bcd = max_reach(desc)
    assert reach == pytest.approx(8.0, abs=0.05)
    # retracted telescope reaches strictly less
    q = {n: 0.0 for n in JOINT_ORDER}
    q["b"], q["c"], q["d"] = bcd[0], bcd[1], 0.0
    from grapplesim.crane import _horizontal_reach

    assert _horizontal_reach(desc, np.array([bcd[0], bcd[1], 0.0])) < reach - 0.5


def test_vertical_boom_small_horizontal_reach(desc):
    r = crane._horizontal_reach(desc, np.array([desc.joint("b").hi, 0.0, 0.0]))
    reach, _ = max_reach(desc)
    assert r < 0.65 * reach


def test_static_capacity_calibration(desc):
    cap = static_capacity(desc)
    assert cap == pytest.approx(9700.0, rel=0.05)


def test_plumb_swing_angles(desc):
    q = dict(desc.start_articulation)
    q["g"], q["h"] = plumb_swing_angles(desc, q)
    frames = forward_kinematics(desc, q, validate_limits=False)
    up = frames["rotator"].rotate([0.0, 0.0, 1.0])
    np.testing.assert_allclose(up, [0.0, 0.0, 1.0], atol=1e-9)
