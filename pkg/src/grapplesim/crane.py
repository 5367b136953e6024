"""Crane description loading, forward kinematics, Jacobian, and calibration.

The YAML description file owns all geometry and limit constants; nothing in
here (or in the tests) hard-codes link lengths.  The two published
calibration targets the file must satisfy are checked by :func:`validate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import minimize

from .maths import Transform, quat_from_axis_angle, normalize

JOINT_ORDER = ("a", "b", "c", "d", "e", "f", "g", "h")
ACTUATED = ("a", "b", "c", "d", "e", "f")
BOOM_JOINTS = ("a", "b", "c", "d")   # the Cartesian-control chain


@dataclass
class JointSpec:
    name: str              # physical joint name; claw hinges are f_left/f_right
    logical: str           # a..h
    kind: str              # hinge | prismatic
    parent: str
    child: str
    anchor: np.ndarray
    axis: np.ndarray
    lo: float
    hi: float
    velocity_limit: float | None
    force_limit: float | None
    actuated: bool
    friction_torque: float = 0.0
    damping: float = 0.0


@dataclass
class LinkSpec:
    name: str
    mass: float
    com: np.ndarray
    inertia_box: np.ndarray


@dataclass
class CollisionBox:
    center: np.ndarray
    half_extents: np.ndarray
    quat: np.ndarray


@dataclass
class CraneDescription:
    base_position: np.ndarray
    links: dict[str, LinkSpec]
    joints: list[JointSpec]              # chain order
    frames: dict[str, tuple[str, np.ndarray]]
    load_cell_joint: str
    empty_grapple_mass: float
    closed_hold_fraction: float
    start_articulation: dict[str, float]
    collision: dict[str, list[CollisionBox]]
    obs_scales: dict
    claw_chains: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def joint(self, logical: str) -> JointSpec:
        for j in self.joints:
            if j.logical == logical:
                return j
        raise KeyError(logical)

    def limits(self, logical: str) -> tuple[float, float]:
        j = self.joint(logical)
        return j.lo, j.hi

    @property
    def total_mass(self) -> float:
        return sum(l.mass for l in self.links.values())

    def start_q(self) -> np.ndarray:
        return np.array([self.start_articulation[n] for n in JOINT_ORDER])


class CraneLimitError(ValueError):
    """Raised when a requested articulation violates the description limits."""


def _segment_box(entry: dict) -> CollisionBox:
    a = np.asarray(entry["from"], dtype=np.float64)
    b = np.asarray(entry["to"], dtype=np.float64)
    d = b - a
    length = np.linalg.norm(d)
    # segments live in the local y-z plane; orient the box -z axis along d
    angle = math.atan2(d[1], -d[2])
    quat = quat_from_axis_angle((1.0, 0.0, 0.0), angle)
    # box long axis is local z after the rotation above
    half = np.array([entry["width"] / 2.0, entry["thickness"] / 2.0, length / 2.0])
    center = (a + b) / 2.0
    return CollisionBox(center=center, half_extents=half, quat=quat)


def _plain_box(entry: dict) -> CollisionBox:
    quat = np.array([1.0, 0.0, 0.0, 0.0])
    if "rpy" in entry:
        r, p, y = entry["rpy"]
        qx = quat_from_axis_angle((1, 0, 0), r)
        qy = quat_from_axis_angle((0, 1, 0), p)
        qz = quat_from_axis_angle((0, 0, 1), y)
        from .maths import quat_mul

        quat = quat_mul(qz, quat_mul(qy, qx))
    return CollisionBox(
        center=np.asarray(entry["center"], dtype=np.float64),
        half_extents=np.asarray(entry["half_extents"], dtype=np.float64),
        quat=quat,
    )


def default_description_path() -> Path:
    return Path(str(resources.files("grapplesim").joinpath("data/crane.yaml")))


def load_description(path: str | Path | None = None) -> CraneDescription:
    path = Path(path) if path is not None else default_description_path()
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported crane description version {doc.get('version')!r}")

    links = {
        name: LinkSpec(
            name=name,
            mass=float(spec["mass"]),
            com=np.asarray(spec["com"], dtype=np.float64),
            inertia_box=np.asarray(spec["inertia_box"], dtype=np.float64),
        )
        for name, spec in doc["links"].items()
    }

    joints: list[JointSpec] = []
    for logical, j in doc["joints"].items():
        common = dict(
            lo=float(j["range"][0]),
            hi=float(j["range"][1]),
            velocity_limit=j.get("velocity_limit"),
            force_limit=j.get("force_limit"),
            actuated=bool(j.get("actuated", False)),
            friction_torque=float(j.get("friction_torque", 0.0)),
            damping=float(j.get("damping", 0.0)),
        )
        if j["type"] == "claw_pair":
            for side, child, anchor, axis in zip(
                ("left", "right"), j["children"], j["anchors"], j["axes"]
            ):
                joints.append(
                    JointSpec(
                        name=f"{logical}_{side}",
                        logical=logical,
                        kind="hinge",
                        parent=j["parent"],
                        child=child,
                        anchor=np.asarray(anchor, dtype=np.float64),
                        axis=normalize(axis),
                        **common,
                    )
                )
        else:
            joints.append(
                JointSpec(
                    name=logical,
                    logical=logical,
                    kind=j["type"],
                    parent=j["parent"],
                    child=j["child"],
                    anchor=np.asarray(j["anchor"], dtype=np.float64),
                    axis=normalize(j["axis"]),
                    **common,
                )
            )

    frames = {
        name: (f["link"], np.asarray(f["offset"], dtype=np.float64))
        for name, f in doc["frames"].items()
    }

    collision: dict[str, list[CollisionBox]] = {}
    claw_chains: dict[str, list[np.ndarray]] = {}
    for link, boxes in doc["collision"].items():
        parsed = []
        chain: list[np.ndarray] = []
        for entry in boxes:
            if "from" in entry:
                if not chain:
                    chain.append(np.asarray(entry["from"], dtype=np.float64))
                chain.append(np.asarray(entry["to"], dtype=np.float64))
                parsed.append(_segment_box(entry))
            else:
                parsed.append(_plain_box(entry))
        collision[link] = parsed
        if chain:
            claw_chains[link] = chain

    desc = CraneDescription(
        base_position=np.asarray(doc["base_position"], dtype=np.float64),
        links=links,
        joints=joints,
        frames=frames,
        load_cell_joint=doc["load_cell"]["joint"],
        empty_grapple_mass=float(doc["load_cell"]["empty_mass"]),
        closed_hold_fraction=float(doc["grasp"]["closed_hold_fraction"]),
        start_articulation={k: float(v) for k, v in doc["start_articulation"].items()},
        collision=collision,
        obs_scales=doc["observation_scales"],
        claw_chains=claw_chains,
    )
    n_act = len({j.logical for j in desc.joints if j.actuated})
    if n_act != 6:
        raise ValueError(f"description must declare exactly 6 actuated joints, got {n_act}")
    return desc


def _q_dict(q) -> dict[str, float]:
    if isinstance(q, dict):
        return {k: float(v) for k, v in q.items()}
    q = np.asarray(q, dtype=np.float64)
    return {name: float(q[i]) for i, name in enumerate(JOINT_ORDER)}


def check_limits(desc: CraneDescription, q, tol: float = 1e-9) -> None:
    qd = _q_dict(q)
    for logical in JOINT_ORDER:
        j = desc.joint(logical)
        v = qd[logical]
        if v < j.lo - tol or v > j.hi + tol:
            raise CraneLimitError(
                f"joint {logical}={v:.4f} outside range [{j.lo}, {j.hi}]"
            )


def forward_kinematics(
    desc: CraneDescription, q, *, validate_limits: bool = True
) -> dict[str, Transform]:
    """Evaluate the rigid-transform chain.

    Returns a mapping of link names (plus the named auxiliary frames) to world
    transforms.  Raises CraneLimitError for out-of-range articulations unless
    ``validate_limits`` is disabled.
    """
    qd = _q_dict(q)
    if validate_limits:
        check_limits(desc, qd)
    frames: dict[str, Transform] = {"base": Transform(p=desc.base_position)}
    for j in desc.joints:
        parent = frames[j.parent]
        value = qd[j.logical]
        if j.kind == "hinge":
            motion = Transform(quat_from_axis_angle(j.axis, value), j.anchor)
        elif j.kind == "prismatic":
            motion = Transform(p=j.anchor + j.axis * value)
        else:
            raise ValueError(j.kind)
        frames[j.child] = parent * motion
    for name, (link, offset) in desc.frames.items():
        frames[name] = frames[link] * Transform(p=offset)
    return frames


def crane_tip(desc: CraneDescription, q) -> np.ndarray:
    return forward_kinematics(desc, q)["crane_tip"].p


def jacobian(desc: CraneDescription, q) -> np.ndarray:
    """3x4 linear-velocity Jacobian of the crane tip w.r.t. joints a-d."""
    frames = forward_kinematics(desc, q)
    p_tip = frames["crane_tip"].p
    cols = []
    for logical in BOOM_JOINTS:
        j = desc.joint(logical)
        parent = frames[j.parent]
        axis_w = parent.rotate(j.axis)
        anchor_w = parent.apply(j.anchor)
        if j.kind == "hinge":
            cols.append(np.cross(axis_w, p_tip - anchor_w))
        else:
            cols.append(axis_w)
    return np.column_stack(cols)


def plumb_swing_angles(desc: CraneDescription, q) -> tuple[float, float]:
    """Swing angles (g, h) that leave the rotator hanging plumb for the given
    boom articulation; used to initialize episodes without a start transient."""
    qd = _q_dict(q)
    qd["g"] = 0.0
    qd["h"] = 0.0
    frames = forward_kinematics(desc, qd, validate_limits=False)
    jg = desc.joint("g")
    # world up expressed in the swing parent frame
    n = frames[jg.parent].inverse().rotate(np.array([0.0, 0.0, 1.0]))
    h = math.asin(np.clip(n[0], -1.0, 1.0))
    g = math.atan2(-n[1], n[2])
    return g, h


def _horizontal_reach(desc: CraneDescription, bcd: np.ndarray) -> float:
    q = {n: 0.0 for n in JOINT_ORDER}
    q["b"], q["c"], q["d"] = bcd
    tip = forward_kinematics(desc, q, validate_limits=False)["crane_tip"].p
    pillar = desc.base_position[:2]
    return float(np.hypot(*(tip[:2] - pillar)))


def max_reach(desc: CraneDescription) -> tuple[float, np.ndarray]:
    """Maximum horizontal crane-tip distance from the slew axis, with the
    maximizing (b, c, d) articulation."""
    b = desc.joint("b")
    c = desc.joint("c")
    d = desc.joint("d")
    bounds = [(b.lo, b.hi), (c.lo, c.hi), (d.lo, d.hi)]
    best = None
    for b0 in np.linspace(b.lo, b.hi, 13):
        for c0 in np.linspace(c.lo, c.hi, 13):
            r = _horizontal_reach(desc, np.array([b0, c0, d.hi]))
            if best is None or r > best[0]:
                best = (r, np.array([b0, c0, d.hi]))
    res = minimize(
        lambda x: -_horizontal_reach(desc, x),
        best[1],
        bounds=bounds,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
    )
    x = np.clip(res.x, [b.lo, c.lo, d.lo], [b.hi, c.hi, d.hi])
    return _horizontal_reach(desc, x), x


def _descendants(desc: CraneDescription, root_child: str) -> list[str]:
    out = [root_child]
    frontier = [root_child]
    while frontier:
        link = frontier.pop()
        for j in desc.joints:
            if j.parent == link:
                out.append(j.child)
                frontier.append(j.child)
    return out


def gravity_load(desc: CraneDescription, frames: dict[str, Transform], logical: str,
                 gravity: float = 9.81) -> float:
    """Gravity-induced generalized force on a joint (torque for hinges, axial
    force for prismatics) from all links it carries."""
    j = desc.joint(logical)
    parent = frames[j.parent]
    axis_w = parent.rotate(j.axis)
    anchor_w = parent.apply(j.anchor)
    g_vec = np.array([0.0, 0.0, -gravity])
    total = 0.0
    for link in _descendants(desc, j.child):
        spec = desc.links[link]
        com_w = frames[link].apply(spec.com)
        if j.kind == "hinge":
            total += float(np.dot(axis_w, np.cross(com_w - anchor_w, spec.mass * g_vec)))
        else:
            total += float(np.dot(axis_w, spec.mass * g_vec))
    return total


def static_capacity(desc: CraneDescription, q=None, gravity: float = 9.81) -> float:
    """Largest static downward tip force the actuators can hold, N.

    Defaults to the maximum-reach articulation, where the capacity is lowest.
    For each actuated boom joint the admissible extra load solves
    |tau_gravity + F * J_z| <= tau_limit via virtual work.
    """
    if q is None:
        _, bcd = max_reach(desc)
        q = {n: 0.0 for n in JOINT_ORDER}
        q["b"], q["c"], q["d"] = bcd
    frames = forward_kinematics(desc, q, validate_limits=False)
    J = jacobian(desc, q)
    capacity = math.inf
    for i, logical in enumerate(BOOM_JOINTS):
        j = desc.joint(logical)
        if not j.actuated or j.force_limit is None:
            continue
        slope = -J[2, i]  # generalized force per unit downward tip force
        if abs(slope) < 1e-9:
            continue
        t0 = gravity_load(desc, frames, logical, gravity)
        f_max = (j.force_limit - t0 * math.copysign(1.0, slope)) / abs(slope)
        capacity = min(capacity, f_max)
    return capacity


def validate(desc: CraneDescription, gravity: float = 9.81) -> dict[str, float]:
    """Compute the calibration quantities checked by the acceptance suite."""
    reach, bcd = max_reach(desc)
    q = {n: 0.0 for n in JOINT_ORDER}
    q["b"], q["c"], q["d"] = bcd
    return {
        "max_reach_m": reach,
        "capacity_N": static_capacity(desc, q, gravity),
        "total_mass_kg": desc.total_mass,
        "rotator_grapple_mass_kg": sum(
            desc.links[l].mass for l in _descendants(desc, desc.joint(desc.load_cell_joint).child)
        ),
        "reach_b": float(bcd[0]),
        "reach_c": float(bcd[1]),
        "reach_d": float(bcd[2]),
    }
