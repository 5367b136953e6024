import numpy as np
import pytest

from grapplesim import crane, ik
from grapplesim.crane import BOOM_JOINTS, JOINT_ORDER


def random_q(desc, rng, margin=0.03):
    q = {n: 0.0 for n in JOINT_ORDER}
    for name in BOOM_JOINTS:
        j = desc.joint(name)
        span = j.hi - j.lo
        q[name] = rng.uniform(j.lo + margin * span, j.hi - margin * span)
    return q


def kkt_min_norm(J, W, v):
    """Equality-constrained QP oracle: minimize qdot^T W^-1 qdot s.t. J qdot = v."""
    n = J.shape[1]
    K = np.zeros((n + 3, n + 3))
    K[:n, :n] = np.linalg.inv(W)
    K[:n, n:] = J.T
    K[n:, :n] = J
    rhs = np.concatenate([np.zeros(n), v])
    sol = np.linalg.solve(K, rhs)
    return sol[:n]


def test_zero_velocity_gives_zero_rates(desc, cfg):
    q = desc.start_q()
    sol = ik.solve(desc, q, np.zeros(3), cfg.ik)
    np.testing.assert_allclose(sol.qdot, 0.0, atol=1e-12)


def test_tracking_accuracy_on_feasible_targets(desc, cfg):
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(300):
        q = random_q(desc, rng)
        J = crane.jacobian(desc, q)
        v_des = J @ rng.uniform(-0.5, 0.5, 4)
        sol = ik.solve(desc, q, v_des, cfg.ik)
        if sol.clipped or np.linalg.norm(v_des) < 1e-3:
            continue
        err = np.linalg.norm(sol.achieved - v_des) / np.linalg.norm(v_des)
        assert err < 0.02
        checked += 1
    assert checked > 200


def test_weights_profile(desc, cfg):
    j = desc.joint("b")
    q = {n: 0.0 for n in JOINT_ORDER}
    q["b"] = j.lo + 1e-4 * (j.hi - j.lo)
    w = ik.joint_weights(desc, q, cfg.ik)
    assert w[1] == pytest.approx(0.10, abs=0.01)
    q["b"] = (j.lo + j.hi) / 2.0
    w = ik.joint_weights(desc, q, cfg.ik)
    assert w[1] == pytest.approx(1.0)
    # continuity across the edge-zone boundary
    us = np.linspace(0.0, 0.5, 200)
    vals = []
    for u in us:
        q["b"] = j.lo + u * (j.hi - j.lo)
        vals.append(ik.joint_weights(desc, q, cfg.ik)[1])
    assert np.max(np.abs(np.diff(vals))) < 0.05


def test_near_limit_weight_redistributes_motion(desc, cfg):
    jd = desc.joint("d")
    base = {n: 0.0 for n in JOINT_ORDER}
    base["b"], base["c"] = 0.5, -0.8
    q_mid = dict(base, d=(jd.lo + jd.hi) / 2.0)
    q_edge = dict(base, d=jd.lo + 0.99 * (jd.hi - jd.lo))
    # request motion along the telescope axis
    axis = crane.forward_kinematics(desc, q_mid)["outer_boom"].rotate(jd.axis)
    v_des = 0.3 * axis
    sol_mid = ik.solve(desc, q_mid, v_des, cfg.ik)
    sol_edge = ik.solve(desc, q_edge, v_des, cfg.ik)
    assert sol_edge.weights[3] == pytest.approx(0.1, abs=0.02)
    assert abs(sol_edge.qdot[3]) < abs(sol_mid.qdot[3])


def test_minimum_weighted_norm_property(desc, cfg):
    rng = np.random.default_rng(11)
    for _ in range(50):
        q = random_q(desc, rng)
        J = crane.jacobian(desc, q)
        W = np.diag(ik.joint_weights(desc, q, cfg.ik))
        v = J @ rng.uniform(-0.3, 0.3, 4)
        sol = ik.solve(desc, q, v, cfg.ik, damping=1e-8, clip=False)
        oracle = kkt_min_norm(J, W, v)
        assert np.max(np.abs(sol.qdot - oracle)) < 1e-6


def test_scaling_linearity(desc, cfg):
    rng = np.random.default_rng(3)
    q = random_q(desc, rng)
    v = np.array([0.3, -0.2, 0.1])
    full = ik.solve(desc, q, v, cfg.ik)
    assert not full.clipped
    for alpha in (0.25, 0.5, 0.75):
        part = ik.solve(desc, q, alpha * v, cfg.ik)
        np.testing.assert_allclose(part.qdot, alpha * full.qdot, atol=1e-9)


def test_output_within_velocity_limits(desc, cfg):
    rng = np.random.default_rng(5)
    for _ in range(100):
        q = random_q(desc, rng)
        sol = ik.solve(desc, q, rng.uniform(-3, 3, 3), cfg.ik)
        for i, n in enumerate(BOOM_JOINTS):
            vl = desc.joint(n).velocity_limit
            assert abs(sol.qdot[i]) <= vl + 1e-12


def test_one_sided_clamp_at_hard_stop(desc, cfg):
    q = {n: 0.0 for n in JOINT_ORDER}
    q["d"] = desc.joint("d").lo  # telescope fully retracted
    axis = crane.forward_kinematics(desc, q)["outer_boom"].rotate(desc.joint("d").axis)
    sol = ik.solve(desc, q, -0.5 * axis, cfg.ik)  # asks to retract further
    assert sol.qdot[3] >= 0.0


def test_continuity_in_configuration(desc, cfg):
    rng = np.random.default_rng(13)
    v = np.array([0.2, 0.1, -0.3])
    for _ in range(20):
        q = random_q(desc, rng, margin=0.2)
        base = ik.solve(desc, q, v, cfg.ik).qdot
        q2 = {k: val + 1e-7 for k, val in q.items()}
        near = ik.solve(desc, q2, v, cfg.ik).qdot
        assert np.max(np.abs(near - base)) < 1e-4


def test_non_finite_rejected(desc, cfg):
    with pytest.raises(ValueError):
        ik.solve(desc, desc.start_q(), [np.nan, 0, 0], cfg.ik)
