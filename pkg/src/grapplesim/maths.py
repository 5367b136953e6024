"""Small quaternion/rigid-transform helpers shared by kinematics and scene code.

Quaternions are (w, x, y, z) numpy arrays.  The dynamics kernels carry their
own njit copies of these formulas; tests cross-check the two.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    half = 0.5 * angle
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = axis / n * np.sin(half)
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    out = np.empty(4)
    out[0] = aw * bw - ax * bx - ay * by - az * bz
    out[1] = aw * bx + ax * bw + ay * bz - az * by
    out[2] = aw * by - ax * bz + ay * bw + az * bx
    out[3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q (scalarized: hot path)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    vx, vy, vz = v[0], v[1], v[2]
    cx = y * vz - z * vy + w * vx
    cy = z * vx - x * vz + w * vy
    cz = x * vy - y * vx + w * vz
    out = np.empty(3)
    out[0] = vx + 2.0 * (y * cz - z * cy)
    out[1] = vy + 2.0 * (z * cx - x * cz)
    out[2] = vz + 2.0 * (x * cy - y * cx)
    return out


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class Transform:
    """Rigid transform (rotation quaternion + translation)."""

    __slots__ = ("q", "p")

    def __init__(self, q=None, p=None):
        self.q = np.asarray(q, dtype=np.float64).copy() if q is not None else IDENTITY_QUAT.copy()
        self.p = np.asarray(p, dtype=np.float64).copy() if p is not None else np.zeros(3)

    def __mul__(self, other: "Transform") -> "Transform":
        t = Transform.__new__(Transform)
        t.q = quat_mul(self.q, other.q)
        t.p = self.p + quat_rotate(self.q, other.p)
        return t

    def apply(self, point) -> np.ndarray:
        return self.p + quat_rotate(self.q, point)

    def rotate(self, vec) -> np.ndarray:
        return quat_rotate(self.q, vec)

    def inverse(self) -> "Transform":
        qc = quat_conj(self.q)
        return Transform(qc, -quat_rotate(qc, self.p))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def copy(self) -> "Transform":
        return Transform(self.q.copy(), self.p.copy())

    def __repr__(self):
        return f"Transform(p={self.p.round(6).tolist()}, q={self.q.round(6).tolist()})"


def wrap_axis_angle(angle: float) -> float:
    """Canonicalize an undirected horizontal axis angle to [0, pi)."""
    a = float(angle) % np.pi
    if a < 0.0:
        a += np.pi
    return a if a < np.pi else 0.0


def axis_angle_distance(a: float, b: float) -> float:
    """Distance between undirected axis angles, in [0, pi/2]."""
    d = abs((a - b) % np.pi)
    return min(d, np.pi - d)
