"""World assembly and the stepping API around the numba kernels.

A World owns structure-of-arrays state for one simulation instance: the
static environment (heightfield), free log bodies, and optionally the crane
articulation with velocity motors.  Instances are independent; run one per
environment session.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from ..config import DynamicsConfig, LogConfig
from ..crane import JOINT_ORDER, CraneDescription
from ..maths import quat_mul, quat_rotate, quat_conj, quat_to_matrix
from ..terrain import Heightfield
from . import kernels

SNAPSHOT_MAGIC = b"GSNP"
SNAPSHOT_VERSION = 1


@dataclass
class GraspInfo:
    n_logs_held: int
    held_log_ids: list[int]
    grapple_closed: bool
    grasp_com: np.ndarray | None
    x_dgrasp: float
    opening: float           # joint f coordinate
    opening_fraction: float  # 0 closed .. 1 fully open


@dataclass
class _Body:
    name: str
    mass: float
    inertia: np.ndarray  # local diagonal
    can_sleep: bool


def _box_inertia(mass: float, dims) -> np.ndarray:
    lx, ly, lz = dims
    return mass / 12.0 * np.array([ly * ly + lz * lz, lx * lx + lz * lz, lx * lx + ly * ly])


def _box_sample_points(half: np.ndarray, max_spacing: float = 0.5) -> np.ndarray:
    """Boundary lattice of a box used for heightfield contact sampling."""
    axes = []
    for h in half:
        n = max(1, int(np.ceil(2.0 * h / max_spacing)))
        axes.append(np.linspace(-h, h, n + 1))
    pts = []
    for ix, px in enumerate(axes[0]):
        for iy, py in enumerate(axes[1]):
            for iz, pz in enumerate(axes[2]):
                on_surface = (
                    ix in (0, len(axes[0]) - 1)
                    or iy in (0, len(axes[1]) - 1)
                    or iz in (0, len(axes[2]) - 1)
                )
                if on_surface:
                    pts.append((px, py, pz))
    return np.array(pts)


class World:
    """One rigid-body simulation instance with a fixed 1/60 s substep."""

    def __init__(self, cfg: DynamicsConfig | None = None):
        self.cfg = cfg or DynamicsConfig()
        self._bodies: list[_Body] = []
        self._finalized = False
        self.time = 0.0
        self.step_count = 0

        # registration buffers (converted to arrays in finalize)
        self._body_x: list[np.ndarray] = []
        self._body_q: list[np.ndarray] = []
        self._body_v: list[np.ndarray] = []
        self._body_w: list[np.ndarray] = []
        self._shapes: list[tuple] = []  # (body, local_p, local_q, half, group, hits_terrain)
        self._joints: list[dict] = []
        self._groups = {"crane": 1}
        self._next_group = 2

        self.heightfield: Heightfield | None = None
        self._t_pose = np.zeros(5)
        self._t_pose[3] = 1.0
        self._has_terrain = 0

        self.log_ids: list[int] = []
        self.crane_bodies: dict[str, int] = {}
        self.crane_desc: CraneDescription | None = None
        self._joint_index: dict[str, list[int]] = {}

        # world/static body 0
        self._add_body("world", 0.0, np.zeros(3), np.zeros(3),
                       np.array([1.0, 0, 0, 0]), can_sleep=False)

    # ------------------------------------------------------------------ build
    def _add_body(self, name, mass, inertia, x, q, v=None, w=None, can_sleep=False) -> int:
        idx = len(self._bodies)
        self._bodies.append(_Body(name, mass, np.asarray(inertia, dtype=np.float64), can_sleep))
        self._body_x.append(np.asarray(x, dtype=np.float64))
        self._body_q.append(np.asarray(q, dtype=np.float64))
        self._body_v.append(np.zeros(3) if v is None else np.asarray(v, dtype=np.float64))
        self._body_w.append(np.zeros(3) if w is None else np.asarray(w, dtype=np.float64))
        return idx

    def set_terrain(self, hf: Heightfield, position=(0.0, 0.0, 0.0), yaw: float = 0.0):
        self.heightfield = hf
        self._t_pose = np.array(
            [position[0], position[1], position[2], np.cos(yaw), np.sin(yaw)]
        )
        self._has_terrain = 1

    def add_log(self, position, quat, lin_vel=None, ang_vel=None,
                log_cfg: LogConfig | None = None) -> int:
        """A log body: two congruent square cuboids sharing the long (x) axis,
        the second rotated 45 degrees about it."""
        lc = log_cfg or LogConfig()
        s = lc.thickness
        half = np.array([lc.length / 2.0, s / 2.0, s / 2.0])
        # both cuboids share the centre; the composite inertia is diagonal
        inertia = np.array(
            [
                lc.mass * (s * s) / 6.0,
                lc.mass * (lc.length**2 + s * s) / 12.0,
                lc.mass * (lc.length**2 + s * s) / 12.0,
            ]
        )
        idx = self._add_body(
            f"log{len(self.log_ids)}", lc.mass, inertia, position, quat,
            lin_vel, ang_vel, can_sleep=True,
        )
        group = self._next_group
        self._next_group += 1
        q0 = np.array([1.0, 0.0, 0.0, 0.0])
        q45 = np.array([np.cos(np.pi / 8), np.sin(np.pi / 8), 0.0, 0.0])
        self._shapes.append((idx, np.zeros(3), q0, half.copy(), group, 1))
        self._shapes.append((idx, np.zeros(3), q45, half.copy(), group, 1))
        self.log_ids.append(idx)
        return idx

    def add_crane(self, desc: CraneDescription, articulation=None):
        """Instantiate the crane chain from its description at the given
        articulation (dict or 8-vector in JOINT_ORDER)."""
        from .. import crane as crane_mod

        self.crane_desc = desc
        q = desc.start_q() if articulation is None else articulation
        frames = crane_mod.forward_kinematics(desc, q, validate_limits=False)
        for name, link in desc.links.items():
            fr = frames[name]
            com_w = fr.apply(link.com)
            inertia = _box_inertia(link.mass, link.inertia_box)
            idx = self._add_body(name, link.mass, inertia, com_w, fr.q, can_sleep=False)
            self.crane_bodies[name] = idx
            for box in desc.collision.get(name, []):
                # claw tips dig into soil when closing around grounded logs;
                # their boxes skip terrain contacts (grapple body keeps them)
                hits_terrain = 0 if name.startswith("claw") else 1
                self._shapes.append(
                    (idx, box.center - link.com, box.quat.copy(),
                     box.half_extents.copy(), self._groups["crane"], hits_terrain)
                )
        qd = q if isinstance(q, dict) else {
            name: float(np.asarray(q).reshape(-1)[i])
            for i, name in enumerate(JOINT_ORDER)
        }
        for j in desc.joints:
            parent_idx = 0 if j.parent == "base" else self.crane_bodies[j.parent]
            if j.parent == "base":
                anchor_parent_local = desc.base_position + j.anchor
                axis_parent_local = j.axis.copy()
            else:
                anchor_parent_local = j.anchor - desc.links[j.parent].com
                axis_parent_local = j.axis.copy()
            child_idx = self.crane_bodies[j.child]
            t1 = _any_perp(j.axis)
            t2 = np.cross(j.axis, t1)
            self._joints.append(
                dict(
                    name=j.name,
                    logical=j.logical,
                    kind=0 if j.kind == "hinge" else 1,
                    a=parent_idx,
                    b=child_idx,
                    anchor_a=anchor_parent_local,
                    anchor_b=-desc.links[j.child].com,
                    axis=axis_parent_local,
                    t1=t1,
                    t2=t2,
                    ref_b=t1.copy(),
                    lo=j.lo,
                    hi=j.hi,
                    motor=j.actuated,
                    motor_cap=j.force_limit or 0.0,
                    fric=j.friction_torque,
                    damp=j.damping,
                    q0=qd[j.logical],
                )
            )
            self._joint_index.setdefault(j.logical, []).append(len(self._joints) - 1)

    def finalize(self):
        n = len(self._bodies)
        self.x = np.ascontiguousarray(np.stack(self._body_x))
        self.q = np.ascontiguousarray(np.stack(self._body_q))
        self.v = np.ascontiguousarray(np.stack(self._body_v))
        self.w = np.ascontiguousarray(np.stack(self._body_w))
        self.inv_m = np.array([0.0 if b.mass == 0 else 1.0 / b.mass for b in self._bodies])
        self.inv_il = np.stack(
            [np.where(b.inertia > 0, 1.0 / np.maximum(b.inertia, 1e-12), 0.0) for b in self._bodies]
        )
        self.can_sleep = np.array([1 if b.can_sleep else 0 for b in self._bodies], dtype=np.uint8)
        self.asleep = np.zeros(n, dtype=np.uint8)
        self.slow_steps = np.zeros(n, dtype=np.int32)
        self.ext_f = np.zeros((n, 3))
        self.ext_t = np.zeros((n, 3))
        self.inv_iw = np.zeros((n, 3, 3))
        self.constrained = np.zeros(n, dtype=np.uint8)

        m = len(self._shapes)
        self.s_body = np.array([s[0] for s in self._shapes], dtype=np.int32)
        self.s_lp = np.ascontiguousarray(np.stack([s[1] for s in self._shapes])) if m else np.zeros((0, 3))
        self.s_lq = np.ascontiguousarray(np.stack([s[2] for s in self._shapes])) if m else np.zeros((0, 4))
        self.s_half = np.ascontiguousarray(np.stack([s[3] for s in self._shapes])) if m else np.zeros((0, 3))
        self.s_group = np.array([s[4] for s in self._shapes], dtype=np.int32)
        self.s_terrain = np.array([s[5] for s in self._shapes], dtype=np.uint8)
        self.s_wp = np.zeros((m, 3))
        self.s_wq = np.zeros((m, 4))
        self.s_aabb = np.zeros((m, 6))
        samp_list = [_box_sample_points(s[3]) for s in self._shapes]
        self.samp_off = np.zeros(m + 1, dtype=np.int32)
        for i, sp in enumerate(samp_list):
            self.samp_off[i + 1] = self.samp_off[i] + len(sp)
        self.samp = (
            np.ascontiguousarray(np.concatenate(samp_list)) if samp_list else np.zeros((0, 3))
        )

        nj = len(self._joints)
        self.j_type = np.array([j["kind"] for j in self._joints], dtype=np.int32)
        self.j_a = np.array([j["a"] for j in self._joints], dtype=np.int32)
        self.j_b = np.array([j["b"] for j in self._joints], dtype=np.int32)
        for key, attr in (("anchor_a", "j_anch_a"), ("anchor_b", "j_anch_b"),
                          ("axis", "j_axis"), ("t1", "j_t1"), ("t2", "j_t2"),
                          ("ref_b", "j_ref_b")):
            arr = np.stack([j[key] for j in self._joints]) if nj else np.zeros((0, 3))
            setattr(self, attr, np.ascontiguousarray(arr.astype(np.float64)))
        self.j_lo = np.array([j["lo"] for j in self._joints])
        self.j_hi = np.array([j["hi"] for j in self._joints])
        self.j_motor_en = np.array([1 if j["motor"] else 0 for j in self._joints], dtype=np.uint8)
        self.j_motor_target = np.zeros(nj)
        self.j_motor_cap = np.array([j["motor_cap"] for j in self._joints])
        self.j_fric_cap = np.array([j["fric"] for j in self._joints])
        self.j_damp = np.array([j["damp"] for j in self._joints])
        self.j_pos = np.array([j.get("q0", 0.0) for j in self._joints]) if nj else np.zeros(nj)
        self.j_vel = np.zeros(nj)
        self.j_lin_imp = np.zeros((nj, 3))
        self.j_motor_imp = np.zeros(nj)
        self.j_limit_imp = np.zeros(nj)

        cap = self.cfg.max_contacts
        self.c_key = np.zeros(cap, dtype=np.int64)
        self.c_body_a = np.zeros(cap, dtype=np.int32)
        self.c_body_b = np.zeros(cap, dtype=np.int32)
        self.c_pos = np.zeros((cap, 3))
        self.c_n = np.zeros((cap, 3))
        self.c_t1 = np.zeros((cap, 3))
        self.c_t2 = np.zeros((cap, 3))
        self.c_depth = np.zeros(cap)
        self.c_pn = np.zeros(cap)
        self.c_pt1 = np.zeros(cap)
        self.c_pt2 = np.zeros(cap)
        self.c_la = np.zeros((cap, 3))
        self.c_lb = np.zeros((cap, 3))
        self._prev_key = np.zeros(cap, dtype=np.int64)
        self._prev_pos = np.zeros((cap, 3))
        self._prev_pn = np.zeros(cap)
        self._prev_pt1 = np.zeros(cap)
        self._prev_pt2 = np.zeros(cap)
        self._prev_n = np.zeros(1, dtype=np.int64)
        self.n_contacts = 0

        if self.heightfield is None:
            self._heights = np.zeros((2, 2), dtype=np.float32)
            self._t_origin = np.array([-1.0, -1.0])
            self._t_cell = 1.0
        else:
            self._heights = self.heightfield.elevations
            self._t_origin = self.heightfield.origin.astype(np.float64)
            self._t_cell = float(self.heightfield.cell_size)
        c = self.cfg
        self._kernel_head = (
            self.x, self.q, self.v, self.w, self.inv_m, self.inv_il,
            self.can_sleep, self.asleep, self.slow_steps, self.ext_f, self.ext_t,
            self.inv_iw, self.constrained,
            self.s_body, self.s_lp, self.s_lq, self.s_half, self.s_group,
            self.s_terrain,
            self.s_wp, self.s_wq, self.s_aabb, self.samp, self.samp_off,
            self._heights, self._t_origin, self._t_cell, self._t_pose,
            self._has_terrain,
            self.j_type, self.j_a, self.j_b, self.j_anch_a, self.j_anch_b,
            self.j_axis, self.j_t1, self.j_t2, self.j_ref_b,
            self.j_lo, self.j_hi, self.j_motor_en, self.j_motor_target,
            self.j_motor_cap, self.j_fric_cap, self.j_damp,
            self.j_pos, self.j_vel, self.j_lin_imp, self.j_motor_imp, self.j_limit_imp,
            self._prev_key, self._prev_pos, self._prev_pn, self._prev_pt1,
            self._prev_pt2, self._prev_n,
            self.c_key, self.c_body_a, self.c_body_b, self.c_pos, self.c_n,
            self.c_t1, self.c_t2, self.c_depth,
            self.c_pn, self.c_pt1, self.c_pt2, self.c_la, self.c_lb,
            c.timestep, c.gravity, c.velocity_iterations, c.position_iterations,
            c.baumgarte, c.slop, c.friction, c.sleep_speed, c.sleep_steps,
        )
        self._finalized = True

    # ------------------------------------------------------------------ step
    def set_motor_target(self, logical: str, velocity: float):
        for ji in self._joint_index.get(logical, []):
            self.j_motor_target[ji] = velocity

    def set_motor_targets(self, targets: dict[str, float]):
        for k, t in targets.items():
            self.set_motor_target(k, t)

    def apply_force(self, body: int, force, point=None):
        """Accumulate an external force (world frame) for the next step."""
        f = np.asarray(force, dtype=np.float64)
        self.ext_f[body] += f
        if point is not None:
            r = np.asarray(point, dtype=np.float64) - self.x[body]
            self.ext_t[body] += np.cross(r, f)
        if self.asleep[body]:
            self.asleep[body] = 0
            self.slow_steps[body] = 0

    def step(self):
        if not self._finalized:
            self.finalize()
        n_c = kernels.step_world(*self._kernel_head)
        self.n_contacts = int(n_c)
        self._prev_key[:n_c] = self.c_key[:n_c]
        self._prev_pos[:n_c] = self.c_pos[:n_c]
        self._prev_pn[:n_c] = self.c_pn[:n_c]
        self._prev_pt1[:n_c] = self.c_pt1[:n_c]
        self._prev_pt2[:n_c] = self.c_pt2[:n_c]
        self._prev_n[0] = n_c
        self.ext_f[:] = 0.0
        self.ext_t[:] = 0.0
        self.time += self.cfg.timestep
        self.step_count += 1

    # --------------------------------------------------------------- queries
    def joint_state(self, logical: str) -> tuple[float, float]:
        idx = self._joint_index[logical]
        if len(idx) == 1:
            i = idx[0]
            return float(self.j_pos[i]), float(self.j_vel[i])
        pos = sum(float(self.j_pos[i]) for i in idx) / len(idx)
        vel = sum(float(self.j_vel[i]) for i in idx) / len(idx)
        return pos, vel

    def articulation(self) -> np.ndarray:
        return np.array([self.joint_state(n)[0] for n in JOINT_ORDER])

    def boom_jacobian(self) -> tuple[np.ndarray, np.ndarray]:
        """Crane-tip linear Jacobian for joints a-d from live body poses.

        Equivalent to the kinematic-chain Jacobian at the measured
        articulation, without re-evaluating the chain.
        """
        desc = self.crane_desc
        link, off = desc.frames["crane_tip"]
        ti = self.crane_bodies[link]
        tip = self.x[ti] + quat_rotate(self.q[ti], off - desc.links[link].com)
        J = np.empty((3, 4))
        for col, logical in enumerate(("a", "b", "c", "d")):
            ji = self._joint_index[logical][0]
            a = self.j_a[ji]
            axis_w = quat_rotate(self.q[a], self.j_axis[ji])
            if self.j_type[ji] == 0:  # hinge
                anchor_w = self.x[a] + quat_rotate(self.q[a], self.j_anch_a[ji])
                r = tip - anchor_w
                J[0, col] = axis_w[1] * r[2] - axis_w[2] * r[1]
                J[1, col] = axis_w[2] * r[0] - axis_w[0] * r[2]
                J[2, col] = axis_w[0] * r[1] - axis_w[1] * r[0]
            else:
                J[:, col] = axis_w
        return J, tip

    def load_cell_force(self) -> float:
        """Vertical constraint force carried by the load-cell joint, N."""
        assert self.crane_desc is not None
        ji = self._joint_index[self.crane_desc.load_cell_joint][0]
        return float(self.j_lin_imp[ji, 2] / self.cfg.timestep)

    def actuator_power(self) -> float:
        """Sum over actuated joints of |force * velocity|, W."""
        total = 0.0
        for i in range(len(self.j_type)):
            if self.j_motor_en[i]:
                force = self.j_motor_imp[i] / self.cfg.timestep
                total += abs(force * self.j_vel[i])
        return float(total)

    def body_pose(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        return self.x[idx].copy(), self.q[idx].copy()

    def log_speeds(self) -> np.ndarray:
        return np.linalg.norm(self.v[self.log_ids], axis=1) if self.log_ids else np.zeros(0)

    def mean_log_speed(self) -> float:
        sp = self.log_speeds()
        return float(sp.mean()) if len(sp) else 0.0

    def contact_report(self):
        """Active contacts after the last step: (body_a, body_b, pos, normal,
        normal_impulse, tangent_impulse_magnitude)."""
        n = self.n_contacts
        pt = np.hypot(self.c_pt1[:n], self.c_pt2[:n])
        return (
            self.c_body_a[:n].copy(), self.c_body_b[:n].copy(),
            self.c_pos[:n].copy(), self.c_n[:n].copy(),
            self.c_pn[:n].copy(), pt,
        )

    # ----------------------------------------------------------------- grasp
    def grapple_reference(self) -> np.ndarray:
        desc = self.crane_desc
        link, offset = desc.frames["grapple_reference"]
        idx = self.crane_bodies[link]
        local = offset - desc.links[link].com
        return self.x[idx] + quat_rotate(self.q[idx], local)

    def grapple_axes(self):
        """(heading x, jaw-span y, up z) world axes of the grapple body."""
        idx = self.crane_bodies["grapple_body"]
        R = quat_to_matrix(self.q[idx])
        return R[:, 0], R[:, 1], R[:, 2]

    def grasp_info(self) -> GraspInfo:
        desc = self.crane_desc
        opening, _ = self.joint_state("f")
        lo, hi = desc.limits("f")
        frac = (opening - lo) / (hi - lo)
        closed = frac < desc.closed_hold_fraction
        gi = self.crane_bodies["grapple_body"]
        origin = self.x[gi] + quat_rotate(self.q[gi], -desc.links["grapple_body"].com)
        R = quat_to_matrix(self.q[gi])
        ey, ez = R[:, 1], R[:, 2]

        poly: list[tuple[float, float]] = []
        for link, reverse in (("claw_left", False), ("claw_right", True)):
            bi = self.crane_bodies[link]
            com = desc.links[link].com
            chain = desc.claw_chains[link]
            local = np.stack(chain) - com
            pts = local @ quat_to_matrix(self.q[bi]).T + self.x[bi]
            if reverse:
                pts = pts[::-1]
            d = pts - origin
            poly.extend(zip((d @ ey).tolist(), (d @ ez).tolist()))

        held: list[int] = []
        if closed and len(poly) >= 3:
            # with the tips interleaved the raw chain polygon self-intersects;
            # the convex hull of the chain is the robust enclosure once the
            # grapple is closed (the only case this test runs)
            hull = _convex_hull_2d(poly)
            for li in self.log_ids:
                d = self.x[li] - origin
                if _point_in_polygon(float(d @ ey), float(d @ ez), hull):
                    held.append(li)
        if held:
            com = self.x[held].mean(axis=0)
            xg = float(np.linalg.norm(self.grapple_reference() - com))
        else:
            com = None
            xg = 0.0
        return GraspInfo(
            n_logs_held=len(held),
            held_log_ids=held,
            grapple_closed=bool(closed),
            grasp_com=com,
            x_dgrasp=xg,
            opening=opening,
            opening_fraction=float(np.clip(frac, 0.0, 1.0)),
        )

    # -------------------------------------------------------------- snapshot
    def snapshot_bytes(self) -> bytes:
        parts = [SNAPSHOT_MAGIC, struct.pack("<IId", SNAPSHOT_VERSION, len(self._bodies), self.time)]
        for arr in (self.x, self.q, self.v, self.w):
            parts.append(arr.tobytes())
        parts.append(self.asleep.tobytes())
        parts.append(self.j_pos.astype("<f8").tobytes())
        return b"".join(parts)

    def restore_bytes(self, blob: bytes):
        if blob[:4] != SNAPSHOT_MAGIC:
            raise ValueError("bad snapshot magic")
        ver, n, t = struct.unpack_from("<IId", blob, 4)
        if ver != SNAPSHOT_VERSION:
            raise ValueError(f"snapshot version {ver} unsupported")
        if n != len(self._bodies):
            raise ValueError("snapshot body count mismatch")
        off = 4 + struct.calcsize("<IId")
        for arr in (self.x, self.q, self.v, self.w):
            cnt = arr.size
            arr[:] = np.frombuffer(blob, dtype="<f8", count=cnt, offset=off).reshape(arr.shape)
            off += cnt * 8
        self.asleep[:] = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off)
        off += n
        self.j_pos[:] = np.frombuffer(blob, dtype="<f8", count=self.j_pos.size, offset=off)
        self.time = t

    def snapshot_hash(self) -> int:
        h = hashlib.blake2b(self.snapshot_bytes(), digest_size=8)
        return int.from_bytes(h.digest(), "little")


def _any_perp(axis: np.ndarray) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t = np.cross(a, ref)
    return t / np.linalg.norm(t)


def _convex_hull_2d(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    pts = sorted(set(points))
    if len(pts) <= 2:
        return list(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and (
                (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])
            ) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return lower[:-1] + upper[:-1]


def _point_in_polygon(px: float, py: float, poly: list[tuple[float, float]]) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) / (y2 - y1) * (x2 - x1)
            if px < xint:
                inside = not inside
    return inside
