"""Cartesian velocity control: articulation-weighted damped pseudo-inverse.

Resolves a desired crane-tip velocity into the four boom-chain joint rates.
The redundancy (4 rates, 3 velocity components) is settled by per-joint
weights that fade towards the range limits, so solutions naturally avoid
driving joints into their stops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import crane
from .config import IkConfig
from .crane import BOOM_JOINTS, CraneDescription


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def joint_weights(desc: CraneDescription, q, cfg: IkConfig | None = None) -> np.ndarray:
    """Per-joint weights in [edge_weight, plateau]: 1.0 on the central
    plateau, smoothly rolling off to edge_weight at the range limits."""
    cfg = cfg or IkConfig()
    qd = crane._q_dict(q)
    out = np.empty(4)
    for i, n in enumerate(BOOM_JOINTS):
        j = desc.joint(n)
        u = (qd[n] - j.lo) / (j.hi - j.lo)
        edge = u if u < 1.0 - u else 1.0 - u
        t = edge / cfg.edge_zone
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        ramp = t * t * (3.0 - 2.0 * t)
        out[i] = cfg.edge_weight + (cfg.plateau_weight - cfg.edge_weight) * ramp
    return out


@dataclass
class IkSolution:
    qdot: np.ndarray        # (4,) joint rates for a-d, post clipping
    achieved: np.ndarray    # (3,) J @ qdot
    weights: np.ndarray     # (4,) weights used
    degenerate: bool        # ill-conditioned task matrix
    clipped: bool           # any joint rate saturated its velocity limit


def solve(
    desc: CraneDescription,
    q,
    v_des,
    cfg: IkConfig | None = None,
    *,
    damping: float | None = None,
    clip: bool = True,
    jacobian: np.ndarray | None = None,
) -> IkSolution:
    """Weighted damped least-squares resolution of a tip velocity.

    qdot = W J^T (J W J^T + lambda I)^-1 v, then per-joint clipping to the
    velocity limits and a one-sided clamp at hard range stops.  Pass
    ``jacobian`` when the caller already has the live 3x4 task matrix.
    """
    cfg = cfg or IkConfig()
    v_des = np.asarray(v_des, dtype=np.float64)
    if not np.all(np.isfinite(v_des)):
        raise ValueError("v_des must be finite")
    lam = cfg.damping if damping is None else damping

    # measured articulations may sit epsilon outside their range (solver slop)
    qd = crane._q_dict(q)
    q = {}
    for n, val in qd.items():
        j = desc.joint(n)
        q[n] = j.lo if val < j.lo else (j.hi if val > j.hi else float(val))
    J = crane.jacobian(desc, q) if jacobian is None else jacobian
    w = joint_weights(desc, q, cfg)
    JW = J * w  # J @ diag(w)
    A = JW @ J.T + lam * np.eye(3)
    qdot = JW.T @ np.linalg.solve(A, v_des)

    cond = float(np.linalg.cond(A))
    degenerate = cond > cfg.degenerate_cond

    clipped = False
    if clip:
        qd = q
        for i, name in enumerate(BOOM_JOINTS):
            j = desc.joint(name)
            vl = j.velocity_limit if j.velocity_limit is not None else np.inf
            raw = qdot[i]
            qdot[i] = -vl if raw < -vl else (vl if raw > vl else raw)
            if qdot[i] != raw:
                clipped = True
            # one-sided clamp: never command motion out of a hard stop
            if qd[name] <= j.lo and qdot[i] < 0.0:
                qdot[i] = 0.0
            elif qd[name] >= j.hi and qdot[i] > 0.0:
                qdot[i] = 0.0

    return IkSolution(qdot=qdot, achieved=J @ qdot, weights=w, degenerate=degenerate,
                      clipped=clipped)
