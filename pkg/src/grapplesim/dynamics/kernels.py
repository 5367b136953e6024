"""Numba kernels for the rigid-body core.

Structure-of-arrays world state stepped by one monolithic routine:
semi-implicit integration, box-box and box-heightfield contact generation
with warm starting, block PGS over joint and contact rows with Coulomb cone
projection, then split-impulse position correction passes.

All kernels are nogil so concurrent environment sessions scale across
threads, and fastmath stays off to keep trajectories bit-deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit

JIT = dict(cache=True, nogil=True, fastmath=False)

HINGE = 0
PRISMATIC = 1

# direct joint-block solves per substep, interleaved with contact sweeps
JOINT_OUTER = 4

# contact slots: growing past this drops the shallowest extras
MAX_POINTS_PER_PAIR = 8


@njit(**JIT, inline="always")
def _quat_rotate(q, vx, vy, vz):
    w, x, y, z = q[0], q[1], q[2], q[3]
    # v + 2*u x (u x v + w v), u = (x, y, z)
    cx1 = y * vz - z * vy + w * vx
    cy1 = z * vx - x * vz + w * vy
    cz1 = x * vy - y * vx + w * vz
    rx = vx + 2.0 * (y * cz1 - z * cy1)
    ry = vy + 2.0 * (z * cx1 - x * cz1)
    rz = vz + 2.0 * (x * cy1 - y * cx1)
    return rx, ry, rz


@njit(**JIT, inline="always")
def _quat_rotate_inv(q, vx, vy, vz):
    w, x, y, z = q[0], -q[1], -q[2], -q[3]
    cx1 = y * vz - z * vy + w * vx
    cy1 = z * vx - x * vz + w * vy
    cz1 = x * vy - y * vx + w * vz
    rx = vx + 2.0 * (y * cz1 - z * cy1)
    ry = vy + 2.0 * (z * cx1 - x * cz1)
    rz = vz + 2.0 * (x * cy1 - y * cx1)
    return rx, ry, rz


@njit(**JIT)
def _quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(**JIT, inline="always")
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(**JIT)
def _world_inv_inertia(q, inv_i_local, out):
    """out = R diag(inv_i_local) R^T"""
    R = np.empty((3, 3))
    _quat_to_mat(q, R)
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += R[i, k] * inv_i_local[k] * R[j, k]
            out[i, j] = s


@njit(**JIT, inline="always")
def _solve33(A, b, out):
    a11, a12, a13 = A[0, 0], A[0, 1], A[0, 2]
    a21, a22, a23 = A[1, 0], A[1, 1], A[1, 2]
    a31, a32, a33 = A[2, 0], A[2, 1], A[2, 2]
    c11 = a22 * a33 - a23 * a32
    c12 = a23 * a31 - a21 * a33
    c13 = a21 * a32 - a22 * a31
    det = a11 * c11 + a12 * c12 + a13 * c13
    if abs(det) < 1e-14:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        return
    inv = 1.0 / det
    b1, b2, b3 = b[0], b[1], b[2]
    out[0] = (b1 * c11 + b2 * (a13 * a32 - a12 * a33) + b3 * (a12 * a23 - a13 * a22)) * inv
    out[1] = (b1 * c12 + b2 * (a11 * a33 - a13 * a31) + b3 * (a13 * a21 - a11 * a23)) * inv
    out[2] = (b1 * c13 + b2 * (a12 * a31 - a11 * a32) + b3 * (a11 * a22 - a12 * a21)) * inv


@njit(**JIT)
def _terrain_sample(heights, t_origin, cell, t_pose, px, py):
    """Surface world z and world normal of the placed heightfield at world
    (px, py).  t_pose = (tx, ty, tz, cos_yaw, sin_yaw); queries outside the
    grid clamp to the border."""
    tx, ty, tz, c, s = t_pose[0], t_pose[1], t_pose[2], t_pose[3], t_pose[4]
    dx = px - tx
    dy = py - ty
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    ny_, nx_ = heights.shape
    fx = (lx - t_origin[0]) / cell
    fy = (ly - t_origin[1]) / cell
    if fx < 0.0:
        fx = 0.0
    if fy < 0.0:
        fy = 0.0
    if fx > nx_ - 1 - 1e-9:
        fx = nx_ - 1 - 1e-9
    if fy > ny_ - 1 - 1e-9:
        fy = ny_ - 1 - 1e-9
    j = int(fx)
    i = int(fy)
    u = fx - j
    v = fy - i
    z00 = heights[i, j]
    z10 = heights[i, j + 1]
    z01 = heights[i + 1, j]
    z11 = heights[i + 1, j + 1]
    if u + v <= 1.0:
        z = z00 + u * (z10 - z00) + v * (z01 - z00)
        gx = (z10 - z00) / cell
        gy = (z01 - z00) / cell
    else:
        z = z11 + (1.0 - u) * (z01 - z11) + (1.0 - v) * (z10 - z11)
        gx = (z11 - z01) / cell
        gy = (z11 - z10) / cell
    # local normal (-gx, -gy, 1) normalized, rotated back to world by +yaw
    inv = 1.0 / np.sqrt(gx * gx + gy * gy + 1.0)
    nlx = -gx * inv
    nly = -gy * inv
    nz = inv
    nx_w = c * nlx - s * nly
    ny_w = s * nlx + c * nly
    return z + tz, nx_w, ny_w, nz


@njit(**JIT)
def _box_box(
    pa, qa, ha, pb, qb, hb,
    out_pos, out_norm, out_depth, out_feat,
):
    """ODE-style box-box contact generation.

    Returns the number of contact points written (0..4).  Normals point from
    box B towards box A (push A along +n to separate).
    """
    Ra = np.empty((3, 3))
    Rb = np.empty((3, 3))
    _quat_to_mat(qa, Ra)
    _quat_to_mat(qb, Rb)
    # rotation of B in A's frame: C = Ra^T Rb, and |C|
    C = np.empty((3, 3))
    Q = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += Ra[k, i] * Rb[k, j]
            C[i, j] = s
            Q[i, j] = abs(s) + 1e-8
    # p = pb - pa in A frame
    dx = pb[0] - pa[0]
    dy = pb[1] - pa[1]
    dz = pb[2] - pa[2]
    pA = np.empty(3)
    for i in range(3):
        pA[i] = Ra[0, i] * dx + Ra[1, i] * dy + Ra[2, i] * dz

    best_depth = 1.0e30
    best_axis = -1
    best_sign = 1.0
    invert_normal = False

    # A's face axes (0..2)
    for i in range(3):
        sep = abs(pA[i]) - (ha[i] + hb[0] * Q[i, 0] + hb[1] * Q[i, 1] + hb[2] * Q[i, 2])
        if sep > 0.0:
            return 0
        depth = -sep
        if depth < best_depth:
            best_depth = depth
            best_axis = i
            best_sign = 1.0 if pA[i] >= 0.0 else -1.0

    # B's face axes (3..5): p in B frame
    pB = np.empty(3)
    for i in range(3):
        pB[i] = Rb[0, i] * dx + Rb[1, i] * dy + Rb[2, i] * dz
    for i in range(3):
        sep = abs(pB[i]) - (hb[i] + ha[0] * Q[0, i] + ha[1] * Q[1, i] + ha[2] * Q[2, i])
        if sep > 0.0:
            return 0
        depth = -sep
        if depth < best_depth * 0.98:   # slight preference for face A
            best_depth = depth
            best_axis = 3 + i
            best_sign = 1.0 if pB[i] >= 0.0 else -1.0

    # edge-edge axes (6..14)
    edge_axis = -1
    edge_sign = 1.0
    edge_depth = best_depth
    for i in range(3):
        for j in range(3):
            # axis = A_i x B_j, expressed in A frame
            axx, axy, axz = 0.0, 0.0, 0.0
            if i == 0:
                axx, axy, axz = 0.0, -C[2, j], C[1, j]
            elif i == 1:
                axx, axy, axz = C[2, j], 0.0, -C[0, j]
            else:
                axx, axy, axz = -C[1, j], C[0, j], 0.0
            ln = np.sqrt(axx * axx + axy * axy + axz * axz)
            if ln < 1e-9:
                continue
            axx /= ln
            axy /= ln
            axz /= ln
            ra = ha[0] * abs(axx) + ha[1] * abs(axy) + ha[2] * abs(axz)
            rb = 0.0
            for k in range(3):
                # |axis . B_k| in A frame = |row of C products|
                bk = C[0, k] * axx + C[1, k] * axy + C[2, k] * axz
                rb += hb[k] * abs(bk)
            proj = pA[0] * axx + pA[1] * axy + pA[2] * axz
            sep = abs(proj) - (ra + rb)
            if sep > 0.0:
                return 0
            depth = -sep
            if depth * 1.05 < edge_depth:  # require clear win over face axes
                edge_depth = depth
                edge_axis = 6 + i * 3 + j
                edge_sign = 1.0 if proj >= 0.0 else -1.0

    if edge_axis >= 0 and edge_depth < best_depth * 0.95:
        # single edge-edge contact
        i = (edge_axis - 6) // 3
        j = (edge_axis - 6) % 3
        # axis in A frame, recompute
        if i == 0:
            axx, axy, axz = 0.0, -C[2, j], C[1, j]
        elif i == 1:
            axx, axy, axz = C[2, j], 0.0, -C[0, j]
        else:
            axx, axy, axz = -C[1, j], C[0, j], 0.0
        ln = np.sqrt(axx * axx + axy * axy + axz * axz)
        axx = axx / ln * edge_sign
        axy = axy / ln * edge_sign
        axz = axz / ln * edge_sign
        # world normal: from B to A is -axis direction (axis points A->B)
        nwx = Ra[0, 0] * axx + Ra[0, 1] * axy + Ra[0, 2] * axz
        nwy = Ra[1, 0] * axx + Ra[1, 1] * axy + Ra[1, 2] * axz
        nwz = Ra[2, 0] * axx + Ra[2, 1] * axy + Ra[2, 2] * axz
        # support edge on A along +axis, on B along -axis
        pa_x, pa_y, pa_z = pa[0], pa[1], pa[2]
        for k in range(3):
            comp = axx if k == 0 else (axy if k == 1 else axz)
            s = ha[k] if comp >= 0.0 else -ha[k]
            pa_x += Ra[0, k] * s
            pa_y += Ra[1, k] * s
            pa_z += Ra[2, k] * s
        pb_x, pb_y, pb_z = pb[0], pb[1], pb[2]
        for k in range(3):
            comp = C[0, k] * axx + C[1, k] * axy + C[2, k] * axz
            s = -hb[k] if comp >= 0.0 else hb[k]
            pb_x += Rb[0, k] * s
            pb_y += Rb[1, k] * s
            pb_z += Rb[2, k] * s
        # edge directions
        eax = Ra[0, i]
        eay = Ra[1, i]
        eaz = Ra[2, i]
        ebx = Rb[0, j]
        eby = Rb[1, j]
        ebz = Rb[2, j]
        # closest points between lines pa_ + s*ea, pb_ + t*eb
        rx = pb_x - pa_x
        ry = pb_y - pa_y
        rz = pb_z - pa_z
        a_dot_b = eax * ebx + eay * eby + eaz * ebz
        denom = 1.0 - a_dot_b * a_dot_b
        if abs(denom) < 1e-9:
            s_par = 0.0
        else:
            ra_dot = rx * eax + ry * eay + rz * eaz
            rb_dot = rx * ebx + ry * eby + rz * ebz
            s_par = (ra_dot - a_dot_b * rb_dot) / denom
        cx_ = pa_x + eax * s_par
        cy_ = pa_y + eay * s_par
        cz_ = pa_z + eaz * s_par
        out_pos[0, 0] = cx_
        out_pos[0, 1] = cy_
        out_pos[0, 2] = cz_
        out_norm[0, 0] = -nwx
        out_norm[0, 1] = -nwy
        out_norm[0, 2] = -nwz
        out_depth[0] = edge_depth
        out_feat[0] = np.int64(100 + edge_axis)
        return 1

    # face contact: clip incident face of the "other" box against the
    # reference face's side planes
    if best_axis < 3:
        ref_R = Ra
        inc_R = Rb
        ref_p = pa
        inc_p = pb
        ref_h = ha
        inc_h = hb
        ref_axis = best_axis
        ref_sign = best_sign
        flip = False
    else:
        ref_R = Rb
        inc_R = Ra
        ref_p = pb
        inc_p = pa
        ref_h = hb
        inc_h = ha
        ref_axis = best_axis - 3
        ref_sign = -best_sign  # normal should still point B -> A
        flip = True

    # reference face normal in world (outward from ref box towards inc box)
    # outward normal from reference box: towards the other box
    # for A-face: direction of pA[i]; for B-face: direction of -pB[i]
    if not flip:
        out_s = 1.0 if pA[ref_axis] >= 0.0 else -1.0
    else:
        out_s = 1.0 if (Rb[0, ref_axis] * (pa[0] - pb[0]) + Rb[1, ref_axis] * (pa[1] - pb[1]) + Rb[2, ref_axis] * (pa[2] - pb[2])) >= 0.0 else -1.0
    nrx = ref_R[0, ref_axis] * out_s
    nry = ref_R[1, ref_axis] * out_s
    nrz = ref_R[2, ref_axis] * out_s

    # incident face: the face of inc box most anti-parallel to nr
    best_dot = 1.0e30
    inc_axis = 0
    inc_sign = 1.0
    for k in range(3):
        d = inc_R[0, k] * nrx + inc_R[1, k] * nry + inc_R[2, k] * nrz
        if d < best_dot:
            best_dot = d
            inc_axis = k
            inc_sign = 1.0
        if -d < best_dot:
            best_dot = -d
            inc_axis = k
            inc_sign = -1.0
    # the two tangential axes of the incident face
    iu = (inc_axis + 1) % 3
    iv = (inc_axis + 2) % 3
    # incident face center
    fcx = inc_p[0] + inc_R[0, inc_axis] * inc_h[inc_axis] * inc_sign
    fcy = inc_p[1] + inc_R[1, inc_axis] * inc_h[inc_axis] * inc_sign
    fcz = inc_p[2] + inc_R[2, inc_axis] * inc_h[inc_axis] * inc_sign
    # 4 corners of incident face (world)
    quad = np.empty((8, 3))
    nq = 4
    for c_i in range(4):
        su = 1.0 if (c_i == 0 or c_i == 3) else -1.0
        sv = 1.0 if (c_i < 2) else -1.0
        quad[c_i, 0] = fcx + inc_R[0, iu] * inc_h[iu] * su + inc_R[0, iv] * inc_h[iv] * sv
        quad[c_i, 1] = fcy + inc_R[1, iu] * inc_h[iu] * su + inc_R[1, iv] * inc_h[iv] * sv
        quad[c_i, 2] = fcz + inc_R[2, iu] * inc_h[iu] * su + inc_R[2, iv] * inc_h[iv] * sv

    # clip against the 4 side planes of the reference face
    ru = (ref_axis + 1) % 3
    rv = (ref_axis + 2) % 3
    buf = np.empty((8, 3))
    for plane_i in range(4):
        p_axis = ru if plane_i < 2 else rv
        p_sign = 1.0 if (plane_i % 2 == 0) else -1.0
        # plane: p_sign * (x - ref_p) . ref_R[:, p_axis] <= ref_h[p_axis]
        nmx = ref_R[0, p_axis] * p_sign
        nmy = ref_R[1, p_axis] * p_sign
        nmz = ref_R[2, p_axis] * p_sign
        off = ref_h[p_axis] + nmx * ref_p[0] + nmy * ref_p[1] + nmz * ref_p[2]
        m = 0
        for k in range(nq):
            k2 = (k + 1) % nq
            d1 = nmx * quad[k, 0] + nmy * quad[k, 1] + nmz * quad[k, 2] - off
            d2 = nmx * quad[k2, 0] + nmy * quad[k2, 1] + nmz * quad[k2, 2] - off
            if d1 <= 0.0:
                if m < 8:
                    buf[m, 0] = quad[k, 0]
                    buf[m, 1] = quad[k, 1]
                    buf[m, 2] = quad[k, 2]
                    m += 1
            if (d1 < 0.0 and d2 > 0.0) or (d1 > 0.0 and d2 < 0.0):
                t = d1 / (d1 - d2)
                if m < 8:
                    buf[m, 0] = quad[k, 0] + t * (quad[k2, 0] - quad[k, 0])
                    buf[m, 1] = quad[k, 1] + t * (quad[k2, 1] - quad[k, 1])
                    buf[m, 2] = quad[k, 2] + t * (quad[k2, 2] - quad[k, 2])
                    m += 1
        nq = m
        for k in range(m):
            quad[k, 0] = buf[k, 0]
            quad[k, 1] = buf[k, 1]
            quad[k, 2] = buf[k, 2]
        if nq == 0:
            return 0

    # keep points below the reference face, up to 4 deepest
    ref_face_off = (
        nrx * (ref_p[0] + nrx * ref_h[ref_axis])
        + nry * (ref_p[1] + nry * ref_h[ref_axis])
        + nrz * (ref_p[2] + nrz * ref_h[ref_axis])
    )
    n_out = 0
    depths = np.empty(8)
    order = np.empty(8, dtype=np.int64)
    n_cand = 0
    for k in range(nq):
        d = ref_face_off - (nrx * quad[k, 0] + nry * quad[k, 1] + nrz * quad[k, 2])
        if d > 0.0:
            depths[n_cand] = d
            order[n_cand] = k
            n_cand += 1
    # sort candidates by depth descending (n <= 8: insertion sort)
    for a_i in range(1, n_cand):
        dv = depths[a_i]
        ov = order[a_i]
        b_i = a_i - 1
        while b_i >= 0 and depths[b_i] < dv:
            depths[b_i + 1] = depths[b_i]
            order[b_i + 1] = order[b_i]
            b_i -= 1
        depths[b_i + 1] = dv
        order[b_i + 1] = ov
    n_keep = n_cand if n_cand < 4 else 4
    for k in range(n_keep):
        src = order[k]
        out_pos[n_out, 0] = quad[src, 0]
        out_pos[n_out, 1] = quad[src, 1]
        out_pos[n_out, 2] = quad[src, 2]
        if flip:
            # reference face on B: outward normal of B points at A = B->A
            out_norm[n_out, 0] = nrx
            out_norm[n_out, 1] = nry
            out_norm[n_out, 2] = nrz
        else:
            # reference face on A: outward normal points at B; B->A is minus
            out_norm[n_out, 0] = -nrx
            out_norm[n_out, 1] = -nry
            out_norm[n_out, 2] = -nrz
        out_depth[n_out] = depths[k]
        out_feat[n_out] = np.int64(best_axis * 16 + k)
        n_out += 1
    return n_out


@njit(**JIT)
def step_world(
    # bodies
    x, q, v, w, inv_m, inv_il, can_sleep, asleep, slow_steps, ext_f, ext_t,
    inv_iw, constrained,
    # shapes
    s_body, s_lp, s_lq, s_half, s_group, s_terrain, s_wp, s_wq, s_aabb, samp, samp_off,
    # terrain
    heights, t_origin, t_cell, t_pose, has_terrain,
    # joints
    j_type, j_a, j_b, j_anch_a, j_anch_b, j_axis, j_t1, j_t2, j_ref_b,
    j_lo, j_hi, j_motor_en, j_motor_target, j_motor_cap, j_fric_cap, j_damp,
    j_pos, j_vel, j_lin_imp, j_motor_imp, j_limit_imp,
    # previous contacts (for warm starting)
    pc_key, pc_pos, pc_pn, pc_pt1, pc_pt2, pc_n_arr,
    # current contacts (outputs)
    c_key, c_body_a, c_body_b, c_pos, c_n_arr, c_t1, c_t2, c_depth,
    c_pn, c_pt1, c_pt2, c_la, c_lb,
    # params
    dt, gravity, vel_iters, pos_iters, baumgarte, slop, mu,
    sleep_speed, sleep_steps_lim,
):
    pc_n = pc_n_arr[0]
    n_bodies = x.shape[0]
    n_shapes = s_body.shape[0]
    n_joints = j_type.shape[0]
    cap = c_key.shape[0]
    for b in range(n_bodies):
        constrained[b] = 0
    for jj in range(n_joints):
        constrained[j_a[jj]] = 1
        constrained[j_b[jj]] = 1

    # ---- 1. integrate forces into velocities -------------------------------
    for b in range(n_bodies):
        if inv_m[b] > 0.0 and asleep[b] == 0:
            v[b, 2] -= gravity * dt
            v[b, 0] += ext_f[b, 0] * inv_m[b] * dt
            v[b, 1] += ext_f[b, 1] * inv_m[b] * dt
            v[b, 2] += ext_f[b, 2] * inv_m[b] * dt
    for b in range(n_bodies):
        _world_inv_inertia(q[b], inv_il[b], inv_iw[b])
    for b in range(n_bodies):
        if inv_m[b] > 0.0 and asleep[b] == 0:
            tx, ty, tz = ext_t[b, 0], ext_t[b, 1], ext_t[b, 2]
            w[b, 0] += dt * (inv_iw[b, 0, 0] * tx + inv_iw[b, 0, 1] * ty + inv_iw[b, 0, 2] * tz)
            w[b, 1] += dt * (inv_iw[b, 1, 0] * tx + inv_iw[b, 1, 1] * ty + inv_iw[b, 1, 2] * tz)
            w[b, 2] += dt * (inv_iw[b, 2, 0] * tx + inv_iw[b, 2, 1] * ty + inv_iw[b, 2, 2] * tz)

    # ---- 2. shape world poses + AABBs --------------------------------------
    for si in range(n_shapes):
        b = s_body[si]
        rx, ry, rz = _quat_rotate(q[b], s_lp[si, 0], s_lp[si, 1], s_lp[si, 2])
        s_wp[si, 0] = x[b, 0] + rx
        s_wp[si, 1] = x[b, 1] + ry
        s_wp[si, 2] = x[b, 2] + rz
        # world quat = q_body * local
        bw, bx_, by_, bz_ = q[b, 0], q[b, 1], q[b, 2], q[b, 3]
        lw, lx, ly, lz = s_lq[si, 0], s_lq[si, 1], s_lq[si, 2], s_lq[si, 3]
        s_wq[si, 0] = bw * lw - bx_ * lx - by_ * ly - bz_ * lz
        s_wq[si, 1] = bw * lx + bx_ * lw + by_ * lz - bz_ * ly
        s_wq[si, 2] = bw * ly - bx_ * lz + by_ * lw + bz_ * lx
        s_wq[si, 3] = bw * lz + bx_ * ly - by_ * lx + bz_ * lw
        R = np.empty((3, 3))
        _quat_to_mat(s_wq[si], R)
        ex = abs(R[0, 0]) * s_half[si, 0] + abs(R[0, 1]) * s_half[si, 1] + abs(R[0, 2]) * s_half[si, 2]
        ey = abs(R[1, 0]) * s_half[si, 0] + abs(R[1, 1]) * s_half[si, 1] + abs(R[1, 2]) * s_half[si, 2]
        ez = abs(R[2, 0]) * s_half[si, 0] + abs(R[2, 1]) * s_half[si, 1] + abs(R[2, 2]) * s_half[si, 2]
        m = 0.01
        s_aabb[si, 0] = s_wp[si, 0] - ex - m
        s_aabb[si, 1] = s_wp[si, 1] - ey - m
        s_aabb[si, 2] = s_wp[si, 2] - ez - m
        s_aabb[si, 3] = s_wp[si, 0] + ex + m
        s_aabb[si, 4] = s_wp[si, 1] + ey + m
        s_aabb[si, 5] = s_wp[si, 2] + ez + m

    # ---- 3. wake propagation via AABB adjacency ----------------------------
    changed = True
    guard = 0
    while changed and guard < n_bodies + 2:
        changed = False
        guard += 1
        for si in range(n_shapes):
            ba = s_body[si]
            if asleep[ba] == 0 and inv_m[ba] > 0.0:
                for sj in range(n_shapes):
                    bb = s_body[sj]
                    if asleep[bb] == 1 and s_group[si] != s_group[sj]:
                        if (
                            s_aabb[si, 0] <= s_aabb[sj, 3]
                            and s_aabb[sj, 0] <= s_aabb[si, 3]
                            and s_aabb[si, 1] <= s_aabb[sj, 4]
                            and s_aabb[sj, 1] <= s_aabb[si, 4]
                            and s_aabb[si, 2] <= s_aabb[sj, 5]
                            and s_aabb[sj, 2] <= s_aabb[si, 5]
                        ):
                            asleep[bb] = 0
                            slow_steps[bb] = 0
                            changed = True

    # ---- 4. contact generation ---------------------------------------------
    n_c = 0
    tmp_pos = np.empty((8, 3))
    tmp_norm = np.empty((8, 3))
    tmp_depth = np.empty(8)
    tmp_feat = np.empty(8, dtype=np.int64)
    for si in range(n_shapes):
        ba = s_body[si]
        for sj in range(si + 1, n_shapes):
            bb = s_body[sj]
            if ba == bb or s_group[si] == s_group[sj]:
                continue
            if inv_m[ba] == 0.0 and inv_m[bb] == 0.0:
                continue
            if asleep[ba] == 1 and asleep[bb] == 1:
                continue
            if (asleep[ba] == 1 or inv_m[ba] == 0.0) and (asleep[bb] == 1 or inv_m[bb] == 0.0):
                continue
            if not (
                s_aabb[si, 0] <= s_aabb[sj, 3]
                and s_aabb[sj, 0] <= s_aabb[si, 3]
                and s_aabb[si, 1] <= s_aabb[sj, 4]
                and s_aabb[sj, 1] <= s_aabb[si, 4]
                and s_aabb[si, 2] <= s_aabb[sj, 5]
                and s_aabb[sj, 2] <= s_aabb[si, 5]
            ):
                continue
            np_ = _box_box(
                s_wp[si], s_wq[si], s_half[si], s_wp[sj], s_wq[sj], s_half[sj],
                tmp_pos, tmp_norm, tmp_depth, tmp_feat,
            )
            for k in range(np_):
                if n_c >= cap:
                    break
                c_body_a[n_c] = ba
                c_body_b[n_c] = bb
                c_key[n_c] = (np.int64(si) << 40) | (np.int64(sj) << 20) | tmp_feat[k]
                c_pos[n_c, 0] = tmp_pos[k, 0]
                c_pos[n_c, 1] = tmp_pos[k, 1]
                c_pos[n_c, 2] = tmp_pos[k, 2]
                c_n_arr[n_c, 0] = tmp_norm[k, 0]
                c_n_arr[n_c, 1] = tmp_norm[k, 1]
                c_n_arr[n_c, 2] = tmp_norm[k, 2]
                c_depth[n_c] = tmp_depth[k]
                n_c += 1
    # box-terrain
    if has_terrain == 1:
        for si in range(n_shapes):
            ba = s_body[si]
            if inv_m[ba] == 0.0 or asleep[ba] == 1 or s_terrain[si] == 0:
                continue
            start = n_c
            p = s_wp[si]
            qq = s_wq[si]
            for k in range(samp_off[si], samp_off[si + 1]):
                lx, ly, lz = samp[k, 0], samp[k, 1], samp[k, 2]
                wx, wy, wz = _quat_rotate(qq, lx, ly, lz)
                px = p[0] + wx
                py = p[1] + wy
                pz = p[2] + wz
                hz, nx_, ny_, nz_ = _terrain_sample(heights, t_origin, t_cell, t_pose, px, py)
                d = (pz - hz) * nz_
                if d < 0.0 and n_c < cap:
                    c_body_a[n_c] = ba
                    c_body_b[n_c] = 0
                    c_key[n_c] = (np.int64(si) << 40) | (np.int64(1023) << 20) | np.int64(k - samp_off[si])
                    c_pos[n_c, 0] = px
                    c_pos[n_c, 1] = py
                    c_pos[n_c, 2] = pz
                    c_n_arr[n_c, 0] = nx_
                    c_n_arr[n_c, 1] = ny_
                    c_n_arr[n_c, 2] = nz_
                    c_depth[n_c] = -d
                    n_c += 1

    # wake any sleeping body that actually has a contact with an awake one
    for ci in range(n_c):
        ba = c_body_a[ci]
        bb = c_body_b[ci]
        constrained[ba] = 1
        constrained[bb] = 1
        if asleep[ba] == 1 and asleep[bb] == 0:
            asleep[ba] = 0
            slow_steps[ba] = 0
        elif asleep[bb] == 1 and asleep[ba] == 0:
            asleep[bb] = 0
            slow_steps[bb] = 0

    # ---- 5. contact setup: tangent bases, local anchors, warm start --------
    for ci in range(n_c):
        nx_, ny_, nz_ = c_n_arr[ci, 0], c_n_arr[ci, 1], c_n_arr[ci, 2]
        if abs(nx_) < 0.57:
            t1x, t1y, t1z = _cross(nx_, ny_, nz_, 1.0, 0.0, 0.0)
        else:
            t1x, t1y, t1z = _cross(nx_, ny_, nz_, 0.0, 1.0, 0.0)
        ln = np.sqrt(t1x * t1x + t1y * t1y + t1z * t1z)
        t1x /= ln
        t1y /= ln
        t1z /= ln
        t2x, t2y, t2z = _cross(nx_, ny_, nz_, t1x, t1y, t1z)
        c_t1[ci, 0] = t1x
        c_t1[ci, 1] = t1y
        c_t1[ci, 2] = t1z
        c_t2[ci, 0] = t2x
        c_t2[ci, 1] = t2y
        c_t2[ci, 2] = t2z
        ba = c_body_a[ci]
        bb = c_body_b[ci]
        # local anchors of the shared world point
        px, py, pz = c_pos[ci, 0], c_pos[ci, 1], c_pos[ci, 2]
        lx, ly, lz = _quat_rotate_inv(q[ba], px - x[ba, 0], py - x[ba, 1], pz - x[ba, 2])
        c_la[ci, 0] = lx
        c_la[ci, 1] = ly
        c_la[ci, 2] = lz
        lx, ly, lz = _quat_rotate_inv(q[bb], px - x[bb, 0], py - x[bb, 1], pz - x[bb, 2])
        c_lb[ci, 0] = lx
        c_lb[ci, 1] = ly
        c_lb[ci, 2] = lz
        # warm start from the nearest previous contact of the same shape
        # pair (position matching is robust to clip-order changes)
        c_pn[ci] = 0.0
        c_pt1[ci] = 0.0
        c_pt2[ci] = 0.0
        pair = c_key[ci] >> 20
        best = -1
        best_d = 4.0e-4  # (2 cm)^2 gate
        for pj in range(pc_n):
            if (pc_key[pj] >> 20) == pair:
                ddx = pc_pos[pj, 0] - px
                ddy = pc_pos[pj, 1] - py
                ddz = pc_pos[pj, 2] - pz
                d2 = ddx * ddx + ddy * ddy + ddz * ddz
                if d2 < best_d:
                    best_d = d2
                    best = pj
        if best >= 0:
            c_pn[ci] = pc_pn[best]
            c_pt1[ci] = pc_pt1[best]
            c_pt2[ci] = pc_pt2[best]
        # apply warm-start impulse
        if c_pn[ci] != 0.0 or c_pt1[ci] != 0.0 or c_pt2[ci] != 0.0:
            jx = c_pn[ci] * nx_ + c_pt1[ci] * t1x + c_pt2[ci] * t2x
            jy = c_pn[ci] * ny_ + c_pt1[ci] * t1y + c_pt2[ci] * t2y
            jz = c_pn[ci] * nz_ + c_pt1[ci] * t1z + c_pt2[ci] * t2z
            rax, ray, raz = px - x[ba, 0], py - x[ba, 1], pz - x[ba, 2]
            rbx, rby, rbz = px - x[bb, 0], py - x[bb, 1], pz - x[bb, 2]
            if inv_m[ba] > 0.0:
                v[ba, 0] += jx * inv_m[ba]
                v[ba, 1] += jy * inv_m[ba]
                v[ba, 2] += jz * inv_m[ba]
                cx_, cy_, cz_ = _cross(rax, ray, raz, jx, jy, jz)
                w[ba, 0] += inv_iw[ba, 0, 0] * cx_ + inv_iw[ba, 0, 1] * cy_ + inv_iw[ba, 0, 2] * cz_
                w[ba, 1] += inv_iw[ba, 1, 0] * cx_ + inv_iw[ba, 1, 1] * cy_ + inv_iw[ba, 1, 2] * cz_
                w[ba, 2] += inv_iw[ba, 2, 0] * cx_ + inv_iw[ba, 2, 1] * cy_ + inv_iw[ba, 2, 2] * cz_
            if inv_m[bb] > 0.0:
                v[bb, 0] -= jx * inv_m[bb]
                v[bb, 1] -= jy * inv_m[bb]
                v[bb, 2] -= jz * inv_m[bb]
                cx_, cy_, cz_ = _cross(rbx, rby, rbz, jx, jy, jz)
                w[bb, 0] -= inv_iw[bb, 0, 0] * cx_ + inv_iw[bb, 0, 1] * cy_ + inv_iw[bb, 0, 2] * cz_
                w[bb, 1] -= inv_iw[bb, 1, 0] * cx_ + inv_iw[bb, 1, 1] * cy_ + inv_iw[bb, 1, 2] * cz_
                w[bb, 2] -= inv_iw[bb, 2, 0] * cx_ + inv_iw[bb, 2, 1] * cy_ + inv_iw[bb, 2, 2] * cz_

    # ---- 5b. precompute contact effective masses ----------------------------
    c_kn = np.empty(n_c)
    c_kt1 = np.empty(n_c)
    c_kt2 = np.empty(n_c)
    for ci in range(n_c):
        ba = c_body_a[ci]
        bb = c_body_b[ci]
        px, py, pz = c_pos[ci, 0], c_pos[ci, 1], c_pos[ci, 2]
        rax, ray, raz = px - x[ba, 0], py - x[ba, 1], pz - x[ba, 2]
        rbx, rby, rbz = px - x[bb, 0], py - x[bb, 1], pz - x[bb, 2]
        base = inv_m[ba] + inv_m[bb]
        k = base
        k += _contact_k_ang(inv_iw[ba], rax, ray, raz, c_n_arr[ci, 0], c_n_arr[ci, 1], c_n_arr[ci, 2])
        k += _contact_k_ang(inv_iw[bb], rbx, rby, rbz, c_n_arr[ci, 0], c_n_arr[ci, 1], c_n_arr[ci, 2])
        c_kn[ci] = k
        k = base
        k += _contact_k_ang(inv_iw[ba], rax, ray, raz, c_t1[ci, 0], c_t1[ci, 1], c_t1[ci, 2])
        k += _contact_k_ang(inv_iw[bb], rbx, rby, rbz, c_t1[ci, 0], c_t1[ci, 1], c_t1[ci, 2])
        c_kt1[ci] = k
        k = base
        k += _contact_k_ang(inv_iw[ba], rax, ray, raz, c_t2[ci, 0], c_t2[ci, 1], c_t2[ci, 2])
        k += _contact_k_ang(inv_iw[bb], rbx, rby, rbz, c_t2[ci, 0], c_t2[ci, 1], c_t2[ci, 2])
        c_kt2[ci] = k

    # ---- 6. joint world geometry + measured coordinates --------------------
    ja_w = np.empty((n_joints, 3))   # world axis
    jt1_w = np.empty((n_joints, 3))
    jt2_w = np.empty((n_joints, 3))
    jra = np.empty((n_joints, 3))    # com -> anchor (world), parent
    jrb = np.empty((n_joints, 3))
    for jj in range(n_joints):
        a = j_a[jj]
        b = j_b[jj]
        ax, ay, az = _quat_rotate(q[a], j_axis[jj, 0], j_axis[jj, 1], j_axis[jj, 2])
        ja_w[jj, 0] = ax
        ja_w[jj, 1] = ay
        ja_w[jj, 2] = az
        tx, ty, tz = _quat_rotate(q[a], j_t1[jj, 0], j_t1[jj, 1], j_t1[jj, 2])
        jt1_w[jj, 0] = tx
        jt1_w[jj, 1] = ty
        jt1_w[jj, 2] = tz
        tx, ty, tz = _quat_rotate(q[a], j_t2[jj, 0], j_t2[jj, 1], j_t2[jj, 2])
        jt2_w[jj, 0] = tx
        jt2_w[jj, 1] = ty
        jt2_w[jj, 2] = tz
        rx, ry, rz = _quat_rotate(q[a], j_anch_a[jj, 0], j_anch_a[jj, 1], j_anch_a[jj, 2])
        jra[jj, 0] = rx
        jra[jj, 1] = ry
        jra[jj, 2] = rz
        rx, ry, rz = _quat_rotate(q[b], j_anch_b[jj, 0], j_anch_b[jj, 1], j_anch_b[jj, 2])
        jrb[jj, 0] = rx
        jrb[jj, 1] = ry
        jrb[jj, 2] = rz
        if j_type[jj] == HINGE:
            refx, refy, refz = _quat_rotate(q[b], j_ref_b[jj, 0], j_ref_b[jj, 1], j_ref_b[jj, 2])
            s1 = refx * jt1_w[jj, 0] + refy * jt1_w[jj, 1] + refz * jt1_w[jj, 2]
            s2 = refx * jt2_w[jj, 0] + refy * jt2_w[jj, 1] + refz * jt2_w[jj, 2]
            j_pos[jj] = np.arctan2(s2, s1)
        else:
            dx_ = (x[b, 0] + jrb[jj, 0]) - (x[a, 0] + jra[jj, 0])
            dy_ = (x[b, 1] + jrb[jj, 1]) - (x[a, 1] + jra[jj, 1])
            dz_ = (x[b, 2] + jrb[jj, 2]) - (x[a, 2] + jra[jj, 2])
            j_pos[jj] = dx_ * ja_w[jj, 0] + dy_ * ja_w[jj, 1] + dz_ * ja_w[jj, 2]
        j_lin_imp[jj, 0] = 0.0
        j_lin_imp[jj, 1] = 0.0
        j_lin_imp[jj, 2] = 0.0
        j_motor_imp[jj] = 0.0
        j_limit_imp[jj] = 0.0

    # ---- 7. build the joint row system (direct block solve) ----------------
    # Per-row Jacobians over (v_a, w_a, v_b, w_b); equality rows for the
    # anchors/axes, capped rows for motors, dry friction, and range limits.
    max_rows = n_joints * 7
    r_ba = np.empty(max_rows, dtype=np.int32)
    r_bb = np.empty(max_rows, dtype=np.int32)
    r_jla = np.empty((max_rows, 3))
    r_jaa = np.empty((max_rows, 3))
    r_jlb = np.empty((max_rows, 3))
    r_jab = np.empty((max_rows, 3))
    r_target = np.empty(max_rows)
    r_kind = np.empty(max_rows, dtype=np.int32)   # 0 eq, 1 |lam|<=cap, 2 lam>=0, 3 lam<=0
    r_cap = np.empty(max_rows)
    r_joint = np.empty(max_rows, dtype=np.int32)
    r_slot = np.empty(max_rows, dtype=np.int32)   # 0..2 linear, 3 motor, 4 friction, 5 limit, -1
    r_compliance = np.zeros(max_rows)
    n_rows = 0
    for jj in range(n_joints):
        a = j_a[jj]
        b = j_b[jj]
        rax, ray, raz = jra[jj, 0], jra[jj, 1], jra[jj, 2]
        rbx, rby, rbz = jrb[jj, 0], jrb[jj, 1], jrb[jj, 2]
        ax, ay, az = ja_w[jj, 0], ja_w[jj, 1], ja_w[jj, 2]
        if j_type[jj] == HINGE:
            # 3 world-basis linear rows
            for k in range(3):
                i = n_rows
                ex = 1.0 if k == 0 else 0.0
                ey = 1.0 if k == 1 else 0.0
                ez = 1.0 if k == 2 else 0.0
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = -ex
                r_jla[i, 1] = -ey
                r_jla[i, 2] = -ez
                cx, cy, cz = _cross(rax, ray, raz, ex, ey, ez)
                r_jaa[i, 0] = -cx
                r_jaa[i, 1] = -cy
                r_jaa[i, 2] = -cz
                r_jlb[i, 0] = ex
                r_jlb[i, 1] = ey
                r_jlb[i, 2] = ez
                cx, cy, cz = _cross(rbx, rby, rbz, ex, ey, ez)
                r_jab[i, 0] = cx
                r_jab[i, 1] = cy
                r_jab[i, 2] = cz
                r_target[i] = 0.0
                r_kind[i] = 0
                r_cap[i] = 0.0
                r_joint[i] = jj
                r_slot[i] = k
                n_rows += 1
            # 2 off-axis angular rows
            for k in range(2):
                i = n_rows
                if k == 0:
                    tx, ty, tz = jt1_w[jj, 0], jt1_w[jj, 1], jt1_w[jj, 2]
                else:
                    tx, ty, tz = jt2_w[jj, 0], jt2_w[jj, 1], jt2_w[jj, 2]
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = 0.0
                r_jla[i, 1] = 0.0
                r_jla[i, 2] = 0.0
                r_jaa[i, 0] = -tx
                r_jaa[i, 1] = -ty
                r_jaa[i, 2] = -tz
                r_jlb[i, 0] = 0.0
                r_jlb[i, 1] = 0.0
                r_jlb[i, 2] = 0.0
                r_jab[i, 0] = tx
                r_jab[i, 1] = ty
                r_jab[i, 2] = tz
                r_target[i] = 0.0
                r_kind[i] = 0
                r_cap[i] = 0.0
                r_joint[i] = jj
                r_slot[i] = -1
                n_rows += 1
            # axis rows: a viscous-compliance row for damped passive joints,
            # then a merged motor/limit row (dry friction is handled as a
            # sequential dissipative row in the outer loop)
            has_motor = j_motor_en[jj] == 1
            at_lo = j_pos[jj] <= j_lo[jj]
            at_hi = j_pos[jj] >= j_hi[jj]
            if j_damp[jj] > 0.0:
                i = n_rows
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = 0.0
                r_jla[i, 1] = 0.0
                r_jla[i, 2] = 0.0
                r_jaa[i, 0] = -ax
                r_jaa[i, 1] = -ay
                r_jaa[i, 2] = -az
                r_jlb[i, 0] = 0.0
                r_jlb[i, 1] = 0.0
                r_jlb[i, 2] = 0.0
                r_jab[i, 0] = ax
                r_jab[i, 1] = ay
                r_jab[i, 2] = az
                r_joint[i] = jj
                r_target[i] = 0.0
                r_kind[i] = 0
                r_cap[i] = 0.0
                r_slot[i] = -1
                r_compliance[i] = 1.0 / (j_damp[jj] * dt)
                n_rows += 1
            if has_motor or at_lo or at_hi:
                i = n_rows
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = 0.0
                r_jla[i, 1] = 0.0
                r_jla[i, 2] = 0.0
                r_jaa[i, 0] = -ax
                r_jaa[i, 1] = -ay
                r_jaa[i, 2] = -az
                r_jlb[i, 0] = 0.0
                r_jlb[i, 1] = 0.0
                r_jlb[i, 2] = 0.0
                r_jab[i, 0] = ax
                r_jab[i, 1] = ay
                r_jab[i, 2] = az
                r_joint[i] = jj
                r_compliance[i] = 0.0
                cap_i = j_motor_cap[jj] * dt if has_motor else 0.0
                tgt = j_motor_target[jj] if has_motor else 0.0
                if at_lo:
                    r_target[i] = tgt if tgt > 0.0 else 0.0
                    r_kind[i] = 4 if has_motor else 2
                    r_cap[i] = cap_i
                    r_slot[i] = 5
                elif at_hi:
                    r_target[i] = tgt if tgt < 0.0 else 0.0
                    r_kind[i] = 5 if has_motor else 3
                    r_cap[i] = cap_i
                    r_slot[i] = 5
                else:
                    r_target[i] = tgt
                    r_kind[i] = 1
                    r_cap[i] = cap_i
                    r_slot[i] = 3
                n_rows += 1
        else:
            # prismatic: 3 angular equality rows (world basis)
            for k in range(3):
                i = n_rows
                ex = 1.0 if k == 0 else 0.0
                ey = 1.0 if k == 1 else 0.0
                ez = 1.0 if k == 2 else 0.0
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = 0.0
                r_jla[i, 1] = 0.0
                r_jla[i, 2] = 0.0
                r_jaa[i, 0] = -ex
                r_jaa[i, 1] = -ey
                r_jaa[i, 2] = -ez
                r_jlb[i, 0] = 0.0
                r_jlb[i, 1] = 0.0
                r_jlb[i, 2] = 0.0
                r_jab[i, 0] = ex
                r_jab[i, 1] = ey
                r_jab[i, 2] = ez
                r_target[i] = 0.0
                r_kind[i] = 0
                r_cap[i] = 0.0
                r_joint[i] = jj
                r_slot[i] = -1
                n_rows += 1
            # linear rows: t1, t2 equality; axis motor; axis limit if active
            dpx = (x[b, 0] + rbx) - (x[a, 0] + rax)
            dpy = (x[b, 1] + rby) - (x[a, 1] + ray)
            dpz = (x[b, 2] + rbz) - (x[a, 2] + raz)
            lax = rax + dpx
            lay = ray + dpy
            laz = raz + dpz
            has_motor = j_motor_en[jj] == 1
            at_lo = j_pos[jj] <= j_lo[jj]
            at_hi = j_pos[jj] >= j_hi[jj]
            n_lin = 2
            if has_motor or at_lo or at_hi:
                n_lin += 1
            for k in range(n_lin):
                i = n_rows
                if k == 0:
                    tx, ty, tz = jt1_w[jj, 0], jt1_w[jj, 1], jt1_w[jj, 2]
                    r_target[i] = 0.0
                    r_kind[i] = 0
                    r_cap[i] = 0.0
                    r_slot[i] = 0
                elif k == 1:
                    tx, ty, tz = jt2_w[jj, 0], jt2_w[jj, 1], jt2_w[jj, 2]
                    r_target[i] = 0.0
                    r_kind[i] = 0
                    r_cap[i] = 0.0
                    r_slot[i] = 1
                else:
                    tx, ty, tz = ax, ay, az
                    cap_i = j_motor_cap[jj] * dt if has_motor else 0.0
                    tgt = j_motor_target[jj] if has_motor else 0.0
                    if at_lo:
                        r_target[i] = tgt if tgt > 0.0 else 0.0
                        r_kind[i] = 4
                        r_cap[i] = cap_i
                        r_slot[i] = 5
                    elif at_hi:
                        r_target[i] = tgt if tgt < 0.0 else 0.0
                        r_kind[i] = 5
                        r_cap[i] = cap_i
                        r_slot[i] = 5
                    else:
                        r_target[i] = tgt
                        r_kind[i] = 1
                        r_cap[i] = cap_i
                        r_slot[i] = 3
                r_ba[i] = a
                r_bb[i] = b
                r_jla[i, 0] = -tx
                r_jla[i, 1] = -ty
                r_jla[i, 2] = -tz
                cx, cy, cz = _cross(lax, lay, laz, tx, ty, tz)
                r_jaa[i, 0] = -cx
                r_jaa[i, 1] = -cy
                r_jaa[i, 2] = -cz
                r_jlb[i, 0] = tx
                r_jlb[i, 1] = ty
                r_jlb[i, 2] = tz
                cx, cy, cz = _cross(rbx, rby, rbz, tx, ty, tz)
                r_jab[i, 0] = cx
                r_jab[i, 1] = cy
                r_jab[i, 2] = cz
                r_joint[i] = jj
                n_rows += 1

    # M^-1 J^T per row, system matrix, Cholesky factor (once per substep)
    r_wla = np.empty((n_rows, 3))
    r_waa = np.empty((n_rows, 3))
    r_wlb = np.empty((n_rows, 3))
    r_wab = np.empty((n_rows, 3))
    for i in range(n_rows):
        a = r_ba[i]
        b = r_bb[i]
        for k in range(3):
            r_wla[i, k] = r_jla[i, k] * inv_m[a]
            r_wlb[i, k] = r_jlb[i, k] * inv_m[b]
        for k in range(3):
            r_waa[i, k] = (
                inv_iw[a, k, 0] * r_jaa[i, 0]
                + inv_iw[a, k, 1] * r_jaa[i, 1]
                + inv_iw[a, k, 2] * r_jaa[i, 2]
            )
            r_wab[i, k] = (
                inv_iw[b, k, 0] * r_jab[i, 0]
                + inv_iw[b, k, 1] * r_jab[i, 1]
                + inv_iw[b, k, 2] * r_jab[i, 2]
            )
    A = np.zeros((n_rows, n_rows))
    for i in range(n_rows):
        for jcol in range(i, n_rows):
            s = 0.0
            if r_ba[i] == r_ba[jcol]:
                s += (
                    r_jla[i, 0] * r_wla[jcol, 0] + r_jla[i, 1] * r_wla[jcol, 1] + r_jla[i, 2] * r_wla[jcol, 2]
                    + r_jaa[i, 0] * r_waa[jcol, 0] + r_jaa[i, 1] * r_waa[jcol, 1] + r_jaa[i, 2] * r_waa[jcol, 2]
                )
            if r_ba[i] == r_bb[jcol]:
                s += (
                    r_jla[i, 0] * r_wlb[jcol, 0] + r_jla[i, 1] * r_wlb[jcol, 1] + r_jla[i, 2] * r_wlb[jcol, 2]
                    + r_jaa[i, 0] * r_wab[jcol, 0] + r_jaa[i, 1] * r_wab[jcol, 1] + r_jaa[i, 2] * r_wab[jcol, 2]
                )
            if r_bb[i] == r_ba[jcol]:
                s += (
                    r_jlb[i, 0] * r_wla[jcol, 0] + r_jlb[i, 1] * r_wla[jcol, 1] + r_jlb[i, 2] * r_wla[jcol, 2]
                    + r_jab[i, 0] * r_waa[jcol, 0] + r_jab[i, 1] * r_waa[jcol, 1] + r_jab[i, 2] * r_waa[jcol, 2]
                )
            if r_bb[i] == r_bb[jcol]:
                s += (
                    r_jlb[i, 0] * r_wlb[jcol, 0] + r_jlb[i, 1] * r_wlb[jcol, 1] + r_jlb[i, 2] * r_wlb[jcol, 2]
                    + r_jab[i, 0] * r_wab[jcol, 0] + r_jab[i, 1] * r_wab[jcol, 1] + r_jab[i, 2] * r_wab[jcol, 2]
                )
            A[i, jcol] = s
            A[jcol, i] = s
    for i in range(n_rows):
        A[i, i] += 1e-10 + 1e-9 * A[i, i] + r_compliance[i]

    # impulse bounds per row kind
    lam_lo = np.empty(n_rows)
    lam_hi = np.empty(n_rows)
    for i in range(n_rows):
        if r_kind[i] == 0:
            lam_lo[i] = -1.0e300
            lam_hi[i] = 1.0e300
        elif r_kind[i] == 1:
            lam_lo[i] = -r_cap[i]
            lam_hi[i] = r_cap[i]
        elif r_kind[i] == 2:
            lam_lo[i] = 0.0
            lam_hi[i] = 1.0e300
        elif r_kind[i] == 3:
            lam_lo[i] = -1.0e300
            lam_hi[i] = 0.0
        elif r_kind[i] == 4:
            lam_lo[i] = -r_cap[i]
            lam_hi[i] = 1.0e300
        else:
            lam_lo[i] = -1.0e300
            lam_hi[i] = r_cap[i]

    # active-set factorization state: pinned rows are replaced by identity
    # rows/cols so their impulse increment is forced explicitly
    A_work = np.empty((n_rows, n_rows))
    pinned = np.zeros(n_rows, dtype=np.int8)
    need_factor = True
    lam_acc = np.zeros(n_rows)
    rhs_r = np.empty(n_rows)
    dlam = np.empty(n_rows)

    # ---- 7b. velocity solve: direct joint block interleaved with contact PGS
    contact_sweeps = vel_iters // JOINT_OUTER if vel_iters >= JOINT_OUTER else 1
    # one extra trailing joint pass so the step ends with motors and joint
    # equality rows exact (contact residuals are softer than motor slip)
    for outer in range(JOINT_OUTER + 1):
        # joint pass: active-set solve.  Saturated (pinned) rows stay at
        # their bound; the rest are solved exactly.  Pinning a row after the
        # exact solve would break internal cancellations on this
        # ill-conditioned system, so the system is refactored with pinned
        # rows replaced by identity whenever the active set changes.
        for _as_pass in range(3):
            if need_factor:
                for i in range(n_rows):
                    for jcol in range(n_rows):
                        A_work[i, jcol] = A[i, jcol]
                for i in range(n_rows):
                    if pinned[i] != 0:
                        for jcol in range(n_rows):
                            A_work[i, jcol] = 0.0
                            A_work[jcol, i] = 0.0
                        A_work[i, i] = 1.0
                # in-place Cholesky
                for i in range(n_rows):
                    for jcol in range(i):
                        s = A_work[i, jcol]
                        for k in range(jcol):
                            s -= A_work[i, k] * A_work[jcol, k]
                        A_work[i, jcol] = s / A_work[jcol, jcol]
                    s = A_work[i, i]
                    for k in range(i):
                        s -= A_work[i, k] * A_work[i, k]
                    A_work[i, i] = np.sqrt(s) if s > 1e-12 else 1e-6
                need_factor = False
            for i in range(n_rows):
                if pinned[i] != 0:
                    # drive exactly to the bound
                    bound = lam_hi[i] if pinned[i] > 0 else lam_lo[i]
                    rhs_r[i] = bound - lam_acc[i]
                    continue
                a = r_ba[i]
                b = r_bb[i]
                cdot = (
                    r_jla[i, 0] * v[a, 0] + r_jla[i, 1] * v[a, 1] + r_jla[i, 2] * v[a, 2]
                    + r_jaa[i, 0] * w[a, 0] + r_jaa[i, 1] * w[a, 1] + r_jaa[i, 2] * w[a, 2]
                    + r_jlb[i, 0] * v[b, 0] + r_jlb[i, 1] * v[b, 1] + r_jlb[i, 2] * v[b, 2]
                    + r_jab[i, 0] * w[b, 0] + r_jab[i, 1] * w[b, 1] + r_jab[i, 2] * w[b, 2]
                )
                rhs_r[i] = r_target[i] - cdot
            # pinned rows must not pick up coupling from free rows
            for i in range(n_rows):
                if pinned[i] != 0:
                    continue
                acc = 0.0
                for jcol in range(n_rows):
                    if pinned[jcol] != 0:
                        bound = lam_hi[jcol] if pinned[jcol] > 0 else lam_lo[jcol]
                        acc += A[i, jcol] * (bound - lam_acc[jcol])
                rhs_r[i] -= acc
            # forward/back substitution
            for i in range(n_rows):
                s = rhs_r[i]
                for k in range(i):
                    s -= A_work[i, k] * dlam[k]
                dlam[i] = s / A_work[i, i]
            for i in range(n_rows - 1, -1, -1):
                s = dlam[i]
                for k in range(i + 1, n_rows):
                    s -= A_work[k, i] * dlam[k]
                dlam[i] = s / A_work[i, i]
            # pin newly violated rows and retry; otherwise accept
            changed = False
            for i in range(n_rows):
                if pinned[i] == 0:
                    total = lam_acc[i] + dlam[i]
                    if total > lam_hi[i] + 1e-12:
                        pinned[i] = 1
                        changed = True
                    elif total < lam_lo[i] - 1e-12:
                        pinned[i] = -1
                        changed = True
            if changed:
                need_factor = True
            else:
                break
        # apply (with a safety clamp for non-converged active sets)
        for i in range(n_rows):
            new = lam_acc[i] + dlam[i]
            if new > lam_hi[i]:
                new = lam_hi[i]
            elif new < lam_lo[i]:
                new = lam_lo[i]
            d = new - lam_acc[i]
            lam_acc[i] = new
            if d != 0.0:
                a = r_ba[i]
                b = r_bb[i]
                v[a, 0] += r_wla[i, 0] * d
                v[a, 1] += r_wla[i, 1] * d
                v[a, 2] += r_wla[i, 2] * d
                w[a, 0] += r_waa[i, 0] * d
                w[a, 1] += r_waa[i, 1] * d
                w[a, 2] += r_waa[i, 2] * d
                v[b, 0] += r_wlb[i, 0] * d
                v[b, 1] += r_wlb[i, 1] * d
                v[b, 2] += r_wlb[i, 2] * d
                w[b, 0] += r_wab[i, 0] * d
                w[b, 1] += r_wab[i, 1] * d
                w[b, 2] += r_wab[i, 2] * d

        # dry joint friction: accumulated-clamped sequential rows (always
        # dissipative, unlike a clamped member of the coupled direct solve)
        for jj in range(n_joints):
            if j_fric_cap[jj] > 0.0 and j_type[jj] == HINGE:
                a = j_a[jj]
                b = j_b[jj]
                ax, ay, az = ja_w[jj, 0], ja_w[jj, 1], ja_w[jj, 2]
                k_ax = _axis_k_ang(inv_iw[a], ax, ay, az) + _axis_k_ang(inv_iw[b], ax, ay, az)
                if k_ax > 1e-12:
                    wrel = (w[b, 0] - w[a, 0]) * ax + (w[b, 1] - w[a, 1]) * ay + (w[b, 2] - w[a, 2]) * az
                    lam = -wrel / k_ax
                    cap_i = j_fric_cap[jj] * dt
                    old_imp = j_limit_imp[jj]
                    new_imp = old_imp + lam
                    if new_imp > cap_i:
                        new_imp = cap_i
                    elif new_imp < -cap_i:
                        new_imp = -cap_i
                    j_limit_imp[jj] = new_imp
                    _apply_angular_axis(w, inv_iw, inv_m, a, b, ax, ay, az, new_imp - old_imp)

        # contact sweeps (skipped after the trailing joint pass)
        if outer == JOINT_OUTER:
            break
        for _it in range(contact_sweeps):
            for ci in range(n_c):
                ba = c_body_a[ci]
                bb = c_body_b[ci]
                px, py, pz = c_pos[ci, 0], c_pos[ci, 1], c_pos[ci, 2]
                nx_, ny_, nz_ = c_n_arr[ci, 0], c_n_arr[ci, 1], c_n_arr[ci, 2]
                rax, ray, raz = px - x[ba, 0], py - x[ba, 1], pz - x[ba, 2]
                rbx, rby, rbz = px - x[bb, 0], py - x[bb, 1], pz - x[bb, 2]
                vax = v[ba, 0] + (w[ba, 1] * raz - w[ba, 2] * ray)
                vay = v[ba, 1] + (w[ba, 2] * rax - w[ba, 0] * raz)
                vaz = v[ba, 2] + (w[ba, 0] * ray - w[ba, 1] * rax)
                vbx = v[bb, 0] + (w[bb, 1] * rbz - w[bb, 2] * rby)
                vby = v[bb, 1] + (w[bb, 2] * rbx - w[bb, 0] * rbz)
                vbz = v[bb, 2] + (w[bb, 0] * rby - w[bb, 1] * rbx)
                rvx = vax - vbx
                rvy = vay - vby
                rvz = vaz - vbz
                lam = -(rvx * nx_ + rvy * ny_ + rvz * nz_) / c_kn[ci]
                newP = c_pn[ci] + lam
                if newP < 0.0:
                    newP = 0.0
                lam = newP - c_pn[ci]
                c_pn[ci] = newP
                _apply_contact(v, w, inv_m, inv_iw, ba, bb, rax, ray, raz, rbx, rby, rbz, nx_ * lam, ny_ * lam, nz_ * lam)
                t1x, t1y, t1z = c_t1[ci, 0], c_t1[ci, 1], c_t1[ci, 2]
                t2x, t2y, t2z = c_t2[ci, 0], c_t2[ci, 1], c_t2[ci, 2]
                vax = v[ba, 0] + (w[ba, 1] * raz - w[ba, 2] * ray)
                vay = v[ba, 1] + (w[ba, 2] * rax - w[ba, 0] * raz)
                vaz = v[ba, 2] + (w[ba, 0] * ray - w[ba, 1] * rax)
                vbx = v[bb, 0] + (w[bb, 1] * rbz - w[bb, 2] * rby)
                vby = v[bb, 1] + (w[bb, 2] * rbx - w[bb, 0] * rbz)
                vbz = v[bb, 2] + (w[bb, 0] * rby - w[bb, 1] * rbx)
                rvx = vax - vbx
                rvy = vay - vby
                rvz = vaz - vbz
                lam1 = -(rvx * t1x + rvy * t1y + rvz * t1z) / c_kt1[ci]
                lam2 = -(rvx * t2x + rvy * t2y + rvz * t2z) / c_kt2[ci]
                nt1 = c_pt1[ci] + lam1
                nt2 = c_pt2[ci] + lam2
                fmax = mu * c_pn[ci]
                fn = np.sqrt(nt1 * nt1 + nt2 * nt2)
                if fn > fmax:
                    scale = fmax / fn if fn > 1e-12 else 0.0
                    nt1 *= scale
                    nt2 *= scale
                d1 = nt1 - c_pt1[ci]
                d2 = nt2 - c_pt2[ci]
                c_pt1[ci] = nt1
                c_pt2[ci] = nt2
                _apply_contact(
                    v, w, inv_m, inv_iw, ba, bb, rax, ray, raz, rbx, rby, rbz,
                    t1x * d1 + t2x * d2, t1y * d1 + t2y * d2, t1z * d1 + t2z * d2,
                )

    # accumulate joint diagnostics from the row impulses
    for i in range(n_rows):
        jj = r_joint[i]
        sl = r_slot[i]
        if sl >= 0 and sl <= 2:
            j_lin_imp[jj, 0] += lam_acc[i] * r_jlb[i, 0]
            j_lin_imp[jj, 1] += lam_acc[i] * r_jlb[i, 1]
            j_lin_imp[jj, 2] += lam_acc[i] * r_jlb[i, 2]
        elif sl == 3:
            j_motor_imp[jj] += lam_acc[i]

    # measured joint velocities (post-solve)
    for jj in range(n_joints):
        a = j_a[jj]
        b = j_b[jj]
        if j_type[jj] == HINGE:
            j_vel[jj] = (
                (w[b, 0] - w[a, 0]) * ja_w[jj, 0]
                + (w[b, 1] - w[a, 1]) * ja_w[jj, 1]
                + (w[b, 2] - w[a, 2]) * ja_w[jj, 2]
            )
        else:
            vbx = v[b, 0] + (w[b, 1] * jrb[jj, 2] - w[b, 2] * jrb[jj, 1])
            vby = v[b, 1] + (w[b, 2] * jrb[jj, 0] - w[b, 0] * jrb[jj, 2])
            vbz = v[b, 2] + (w[b, 0] * jrb[jj, 1] - w[b, 1] * jrb[jj, 0])
            vax = v[a, 0] + (w[a, 1] * jra[jj, 2] - w[a, 2] * jra[jj, 1])
            vay = v[a, 1] + (w[a, 2] * jra[jj, 0] - w[a, 0] * jra[jj, 2])
            vaz = v[a, 2] + (w[a, 0] * jra[jj, 1] - w[a, 1] * jra[jj, 0])
            j_vel[jj] = (
                (vbx - vax) * ja_w[jj, 0] + (vby - vay) * ja_w[jj, 1] + (vbz - vaz) * ja_w[jj, 2]
            )

    # ---- 8. integrate positions --------------------------------------------
    # bodies free of any constraint row follow the exact ballistic parabola
    # (cancels the semi-implicit O(dt) drift during flight)
    for b in range(n_bodies):
        if inv_m[b] > 0.0 and asleep[b] == 0:
            x[b, 0] += v[b, 0] * dt
            x[b, 1] += v[b, 1] * dt
            x[b, 2] += v[b, 2] * dt
            if constrained[b] == 0:
                x[b, 2] += 0.5 * gravity * dt * dt
            _integrate_quat(q[b], w[b, 0] * dt, w[b, 1] * dt, w[b, 2] * dt)

    # ---- 9. position correction passes --------------------------------------
    for _pass in range(pos_iters):
        for jj in range(n_joints):
            _joint_position_pass(
                x, q, inv_m, inv_iw, j_type[jj], j_a[jj], j_b[jj],
                j_anch_a[jj], j_anch_b[jj], j_axis[jj], j_t1[jj], j_t2[jj],
                j_ref_b[jj], j_lo[jj], j_hi[jj], baumgarte,
            )
        for ci in range(n_c):
            ba = c_body_a[ci]
            bb = c_body_b[ci]
            nx_, ny_, nz_ = c_n_arr[ci, 0], c_n_arr[ci, 1], c_n_arr[ci, 2]
            pax, pay, paz = _quat_rotate(q[ba], c_la[ci, 0], c_la[ci, 1], c_la[ci, 2])
            pax += x[ba, 0]
            pay += x[ba, 1]
            paz += x[ba, 2]
            pbx, pby, pbz = _quat_rotate(q[bb], c_lb[ci, 0], c_lb[ci, 1], c_lb[ci, 2])
            pbx += x[bb, 0]
            pby += x[bb, 1]
            pbz += x[bb, 2]
            depth_now = c_depth[ci] - ((pax - pbx) * nx_ + (pay - pby) * ny_ + (paz - pbz) * nz_)
            err = depth_now - slop
            if err <= 0.0:
                continue
            corr = baumgarte * err
            if corr > 0.2:
                corr = 0.2
            rax, ray, raz = pax - x[ba, 0], pay - x[ba, 1], paz - x[ba, 2]
            rbx, rby, rbz = pbx - x[bb, 0], pby - x[bb, 1], pbz - x[bb, 2]
            k = inv_m[ba] + inv_m[bb]
            k += _contact_k_ang(inv_iw[ba], rax, ray, raz, nx_, ny_, nz_)
            k += _contact_k_ang(inv_iw[bb], rbx, rby, rbz, nx_, ny_, nz_)
            if k < 1e-12:
                continue
            lam = corr / k
            jx, jy, jz = nx_ * lam, ny_ * lam, nz_ * lam
            if inv_m[ba] > 0.0:
                x[ba, 0] += jx * inv_m[ba]
                x[ba, 1] += jy * inv_m[ba]
                x[ba, 2] += jz * inv_m[ba]
                cx_, cy_, cz_ = _cross(rax, ray, raz, jx, jy, jz)
                _integrate_quat(
                    q[ba],
                    inv_iw[ba, 0, 0] * cx_ + inv_iw[ba, 0, 1] * cy_ + inv_iw[ba, 0, 2] * cz_,
                    inv_iw[ba, 1, 0] * cx_ + inv_iw[ba, 1, 1] * cy_ + inv_iw[ba, 1, 2] * cz_,
                    inv_iw[ba, 2, 0] * cx_ + inv_iw[ba, 2, 1] * cy_ + inv_iw[ba, 2, 2] * cz_,
                )
            if inv_m[bb] > 0.0:
                x[bb, 0] -= jx * inv_m[bb]
                x[bb, 1] -= jy * inv_m[bb]
                x[bb, 2] -= jz * inv_m[bb]
                cx_, cy_, cz_ = _cross(rbx, rby, rbz, jx, jy, jz)
                _integrate_quat(
                    q[bb],
                    -(inv_iw[bb, 0, 0] * cx_ + inv_iw[bb, 0, 1] * cy_ + inv_iw[bb, 0, 2] * cz_),
                    -(inv_iw[bb, 1, 0] * cx_ + inv_iw[bb, 1, 1] * cy_ + inv_iw[bb, 1, 2] * cz_),
                    -(inv_iw[bb, 2, 0] * cx_ + inv_iw[bb, 2, 1] * cy_ + inv_iw[bb, 2, 2] * cz_),
                )

    # ---- 10. sleep bookkeeping ----------------------------------------------
    for b in range(n_bodies):
        if inv_m[b] > 0.0 and can_sleep[b] == 1 and asleep[b] == 0:
            sp = np.sqrt(v[b, 0] ** 2 + v[b, 1] ** 2 + v[b, 2] ** 2)
            spw = np.sqrt(w[b, 0] ** 2 + w[b, 1] ** 2 + w[b, 2] ** 2)
            if sp < sleep_speed and 0.5 * spw < sleep_speed * 10.0:
                slow_steps[b] += 1
            else:
                slow_steps[b] = 0
            if slow_steps[b] >= sleep_steps_lim:
                asleep[b] = 1
                v[b, 0] = 0.0
                v[b, 1] = 0.0
                v[b, 2] = 0.0
                w[b, 0] = 0.0
                w[b, 1] = 0.0
                w[b, 2] = 0.0

    return n_c


@njit(**JIT, inline="always")
def _axis_k_ang(inv_i, ax, ay, az):
    """a^T I^-1 a for a world axis."""
    tx = inv_i[0, 0] * ax + inv_i[0, 1] * ay + inv_i[0, 2] * az
    ty = inv_i[1, 0] * ax + inv_i[1, 1] * ay + inv_i[1, 2] * az
    tz = inv_i[2, 0] * ax + inv_i[2, 1] * ay + inv_i[2, 2] * az
    return ax * tx + ay * ty + az * tz


@njit(**JIT, inline="always")
def _contact_k_ang(inv_i, rx, ry, rz, nx, ny, nz):
    """(r x n)^T I^-1 (r x n)"""
    cx, cy, cz = _cross(rx, ry, rz, nx, ny, nz)
    return _axis_k_ang(inv_i, cx, cy, cz)


@njit(**JIT, inline="always")
def _add_skew_term(K, inv_i, rx, ry, rz):
    """K += -skew(r) @ inv_i @ skew(r) (positive-definite contribution)."""
    # columns of S = skew(r)
    s00, s01, s02 = 0.0, -rz, ry
    s10, s11, s12 = rz, 0.0, -rx
    s20, s21, s22 = -ry, rx, 0.0
    # T = inv_i @ S
    t00 = inv_i[0, 0] * s00 + inv_i[0, 1] * s10 + inv_i[0, 2] * s20
    t01 = inv_i[0, 0] * s01 + inv_i[0, 1] * s11 + inv_i[0, 2] * s21
    t02 = inv_i[0, 0] * s02 + inv_i[0, 1] * s12 + inv_i[0, 2] * s22
    t10 = inv_i[1, 0] * s00 + inv_i[1, 1] * s10 + inv_i[1, 2] * s20
    t11 = inv_i[1, 0] * s01 + inv_i[1, 1] * s11 + inv_i[1, 2] * s21
    t12 = inv_i[1, 0] * s02 + inv_i[1, 1] * s12 + inv_i[1, 2] * s22
    t20 = inv_i[2, 0] * s00 + inv_i[2, 1] * s10 + inv_i[2, 2] * s20
    t21 = inv_i[2, 0] * s01 + inv_i[2, 1] * s11 + inv_i[2, 2] * s21
    t22 = inv_i[2, 0] * s02 + inv_i[2, 1] * s12 + inv_i[2, 2] * s22
    # K += S^T @ T
    K[0, 0] += s00 * t00 + s10 * t10 + s20 * t20
    K[0, 1] += s00 * t01 + s10 * t11 + s20 * t21
    K[0, 2] += s00 * t02 + s10 * t12 + s20 * t22
    K[1, 0] += s01 * t00 + s11 * t10 + s21 * t20
    K[1, 1] += s01 * t01 + s11 * t11 + s21 * t21
    K[1, 2] += s01 * t02 + s11 * t12 + s21 * t22
    K[2, 0] += s02 * t00 + s12 * t10 + s22 * t20
    K[2, 1] += s02 * t01 + s12 * t11 + s22 * t21
    K[2, 2] += s02 * t02 + s12 * t12 + s22 * t22


@njit(**JIT, inline="always")
def _apply_linear(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, jx, jy, jz):
    """Apply impulse +j to body b at rb and -j to body a at ra."""
    if inv_m[b] > 0.0:
        v[b, 0] += jx * inv_m[b]
        v[b, 1] += jy * inv_m[b]
        v[b, 2] += jz * inv_m[b]
        cx, cy, cz = _cross(rbx, rby, rbz, jx, jy, jz)
        w[b, 0] += inv_iw[b, 0, 0] * cx + inv_iw[b, 0, 1] * cy + inv_iw[b, 0, 2] * cz
        w[b, 1] += inv_iw[b, 1, 0] * cx + inv_iw[b, 1, 1] * cy + inv_iw[b, 1, 2] * cz
        w[b, 2] += inv_iw[b, 2, 0] * cx + inv_iw[b, 2, 1] * cy + inv_iw[b, 2, 2] * cz
    if inv_m[a] > 0.0:
        v[a, 0] -= jx * inv_m[a]
        v[a, 1] -= jy * inv_m[a]
        v[a, 2] -= jz * inv_m[a]
        cx, cy, cz = _cross(rax, ray, raz, jx, jy, jz)
        w[a, 0] -= inv_iw[a, 0, 0] * cx + inv_iw[a, 0, 1] * cy + inv_iw[a, 0, 2] * cz
        w[a, 1] -= inv_iw[a, 1, 0] * cx + inv_iw[a, 1, 1] * cy + inv_iw[a, 1, 2] * cz
        w[a, 2] -= inv_iw[a, 2, 0] * cx + inv_iw[a, 2, 1] * cy + inv_iw[a, 2, 2] * cz


@njit(**JIT, inline="always")
def _apply_angular_axis(w, inv_iw, inv_m, a, b, ax, ay, az, lam):
    tx, ty, tz = ax * lam, ay * lam, az * lam
    if inv_m[b] > 0.0:
        w[b, 0] += inv_iw[b, 0, 0] * tx + inv_iw[b, 0, 1] * ty + inv_iw[b, 0, 2] * tz
        w[b, 1] += inv_iw[b, 1, 0] * tx + inv_iw[b, 1, 1] * ty + inv_iw[b, 1, 2] * tz
        w[b, 2] += inv_iw[b, 2, 0] * tx + inv_iw[b, 2, 1] * ty + inv_iw[b, 2, 2] * tz
    if inv_m[a] > 0.0:
        w[a, 0] -= inv_iw[a, 0, 0] * tx + inv_iw[a, 0, 1] * ty + inv_iw[a, 0, 2] * tz
        w[a, 1] -= inv_iw[a, 1, 0] * tx + inv_iw[a, 1, 1] * ty + inv_iw[a, 1, 2] * tz
        w[a, 2] -= inv_iw[a, 2, 0] * tx + inv_iw[a, 2, 1] * ty + inv_iw[a, 2, 2] * tz


@njit(**JIT)
def _solve_hinge_angular(v, w, inv_m, inv_iw, a, b, t1, t2):
    """Drive the two off-axis components of relative angular velocity to zero
    (2x2 block)."""
    k11 = _axis_k_ang(inv_iw[a], t1[0], t1[1], t1[2]) + _axis_k_ang(inv_iw[b], t1[0], t1[1], t1[2])
    k22 = _axis_k_ang(inv_iw[a], t2[0], t2[1], t2[2]) + _axis_k_ang(inv_iw[b], t2[0], t2[1], t2[2])
    # off-diagonal: t1^T (Ia+Ib) t2
    tx = (inv_iw[a][0, 0] + inv_iw[b][0, 0]) * t2[0] + (inv_iw[a][0, 1] + inv_iw[b][0, 1]) * t2[1] + (inv_iw[a][0, 2] + inv_iw[b][0, 2]) * t2[2]
    ty = (inv_iw[a][1, 0] + inv_iw[b][1, 0]) * t2[0] + (inv_iw[a][1, 1] + inv_iw[b][1, 1]) * t2[1] + (inv_iw[a][1, 2] + inv_iw[b][1, 2]) * t2[2]
    tz = (inv_iw[a][2, 0] + inv_iw[b][2, 0]) * t2[0] + (inv_iw[a][2, 1] + inv_iw[b][2, 1]) * t2[1] + (inv_iw[a][2, 2] + inv_iw[b][2, 2]) * t2[2]
    k12 = t1[0] * tx + t1[1] * ty + t1[2] * tz
    wrx = w[b, 0] - w[a, 0]
    wry = w[b, 1] - w[a, 1]
    wrz = w[b, 2] - w[a, 2]
    b1 = -(wrx * t1[0] + wry * t1[1] + wrz * t1[2])
    b2 = -(wrx * t2[0] + wry * t2[1] + wrz * t2[2])
    det = k11 * k22 - k12 * k12
    if abs(det) < 1e-14:
        return
    l1 = (b1 * k22 - b2 * k12) / det
    l2 = (b2 * k11 - b1 * k12) / det
    _apply_angular_axis(w, inv_iw, inv_m, a, b, t1[0], t1[1], t1[2], l1)
    _apply_angular_axis(w, inv_iw, inv_m, a, b, t2[0], t2[1], t2[2], l2)


@njit(**JIT)
def _prismatic_jacobian_k(inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz,
                          dpx, dpy, dpz, tx, ty, tz):
    """Effective mass of a prismatic linear row with direction t.

    Row Jacobian (Box2D form): va: -t, wa: -(ra + d) x t, vb: t, wb: rb x t.
    """
    lax, lay, laz = _cross(rax + dpx, ray + dpy, raz + dpz, tx, ty, tz)
    lbx, lby, lbz = _cross(rbx, rby, rbz, tx, ty, tz)
    k = inv_m[a] + inv_m[b]
    k += _axis_k_ang(inv_iw[a], lax, lay, laz)
    k += _axis_k_ang(inv_iw[b], lbx, lby, lbz)
    return k


@njit(**JIT)
def _prismatic_rel_vel(v, w, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz,
                       tx, ty, tz):
    lax, lay, laz = _cross(rax + dpx, ray + dpy, raz + dpz, tx, ty, tz)
    lbx, lby, lbz = _cross(rbx, rby, rbz, tx, ty, tz)
    return (
        tx * (v[b, 0] - v[a, 0]) + ty * (v[b, 1] - v[a, 1]) + tz * (v[b, 2] - v[a, 2])
        + lbx * w[b, 0] + lby * w[b, 1] + lbz * w[b, 2]
        - (lax * w[a, 0] + lay * w[a, 1] + laz * w[a, 2])
    )


@njit(**JIT)
def _apply_prismatic_impulse(v, w, inv_m, inv_iw, a, b, rax, ray, raz,
                             rbx, rby, rbz, dpx, dpy, dpz, tx, ty, tz, lam):
    lax, lay, laz = _cross(rax + dpx, ray + dpy, raz + dpz, tx, ty, tz)
    lbx, lby, lbz = _cross(rbx, rby, rbz, tx, ty, tz)
    if inv_m[b] > 0.0:
        v[b, 0] += tx * lam * inv_m[b]
        v[b, 1] += ty * lam * inv_m[b]
        v[b, 2] += tz * lam * inv_m[b]
        w[b, 0] += (inv_iw[b, 0, 0] * lbx + inv_iw[b, 0, 1] * lby + inv_iw[b, 0, 2] * lbz) * lam
        w[b, 1] += (inv_iw[b, 1, 0] * lbx + inv_iw[b, 1, 1] * lby + inv_iw[b, 1, 2] * lbz) * lam
        w[b, 2] += (inv_iw[b, 2, 0] * lbx + inv_iw[b, 2, 1] * lby + inv_iw[b, 2, 2] * lbz) * lam
    if inv_m[a] > 0.0:
        v[a, 0] -= tx * lam * inv_m[a]
        v[a, 1] -= ty * lam * inv_m[a]
        v[a, 2] -= tz * lam * inv_m[a]
        w[a, 0] -= (inv_iw[a, 0, 0] * lax + inv_iw[a, 0, 1] * lay + inv_iw[a, 0, 2] * laz) * lam
        w[a, 1] -= (inv_iw[a, 1, 0] * lax + inv_iw[a, 1, 1] * lay + inv_iw[a, 1, 2] * laz) * lam
        w[a, 2] -= (inv_iw[a, 2, 0] * lax + inv_iw[a, 2, 1] * lay + inv_iw[a, 2, 2] * laz) * lam


@njit(**JIT)
def _solve_prismatic_row(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz,
                         dpx, dpy, dpz, tx, ty, tz, target):
    k = _prismatic_jacobian_k(inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, tx, ty, tz)
    if k < 1e-12:
        return 0.0
    rel = _prismatic_rel_vel(v, w, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, tx, ty, tz)
    lam = -(rel - target) / k
    _apply_prismatic_impulse(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, tx, ty, tz, lam)
    return lam


@njit(**JIT)
def _solve_prismatic_motor(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz,
                           dpx, dpy, dpz, ax, ay, az, target, j_motor_imp, jj, cap):
    k = _prismatic_jacobian_k(inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az)
    if k < 1e-12:
        return 0.0
    rel = _prismatic_rel_vel(v, w, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az)
    lam = -(rel - target) / k
    old = j_motor_imp[jj]
    new = old + lam
    if new > cap:
        new = cap
    elif new < -cap:
        new = -cap
    lam = new - old
    j_motor_imp[jj] = new
    _apply_prismatic_impulse(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az, lam)
    return lam


@njit(**JIT)
def _solve_prismatic_limit(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz,
                           dpx, dpy, dpz, ax, ay, az, at_lo):
    k = _prismatic_jacobian_k(inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az)
    if k < 1e-12:
        return 0.0
    rel = _prismatic_rel_vel(v, w, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az)
    if at_lo and rel < 0.0:
        lam = -rel / k
    elif (not at_lo) and rel > 0.0:
        lam = -rel / k
    else:
        return 0.0
    _apply_prismatic_impulse(v, w, inv_m, inv_iw, a, b, rax, ray, raz, rbx, rby, rbz, dpx, dpy, dpz, ax, ay, az, lam)
    return lam


@njit(**JIT, inline="always")
def _contact_row(v, w, inv_m, inv_iw, ba, bb, rax, ray, raz, rbx, rby, rbz,
                 dx, dy, dz, target):
    """Raw PGS impulse for a contact row with direction d (a pushed along +d).

    Returns the unclamped impulse increment; the caller handles accumulation
    and projection, then applies via _apply_contact.
    """
    k = inv_m[ba] + inv_m[bb]
    k += _contact_k_ang(inv_iw[ba], rax, ray, raz, dx, dy, dz)
    k += _contact_k_ang(inv_iw[bb], rbx, rby, rbz, dx, dy, dz)
    if k < 1e-12:
        return 0.0
    vax = v[ba, 0] + (w[ba, 1] * raz - w[ba, 2] * ray)
    vay = v[ba, 1] + (w[ba, 2] * rax - w[ba, 0] * raz)
    vaz = v[ba, 2] + (w[ba, 0] * ray - w[ba, 1] * rax)
    vbx = v[bb, 0] + (w[bb, 1] * rbz - w[bb, 2] * rby)
    vby = v[bb, 1] + (w[bb, 2] * rbx - w[bb, 0] * rbz)
    vbz = v[bb, 2] + (w[bb, 0] * rby - w[bb, 1] * rbx)
    rel = (vax - vbx) * dx + (vay - vby) * dy + (vaz - vbz) * dz
    return -(rel - target) / k


@njit(**JIT, inline="always")
def _apply_contact(v, w, inv_m, inv_iw, ba, bb, rax, ray, raz, rbx, rby, rbz, jx, jy, jz):
    """Apply impulse +j to body a at ra and -j to body b at rb."""
    if inv_m[ba] > 0.0:
        v[ba, 0] += jx * inv_m[ba]
        v[ba, 1] += jy * inv_m[ba]
        v[ba, 2] += jz * inv_m[ba]
        cx, cy, cz = _cross(rax, ray, raz, jx, jy, jz)
        w[ba, 0] += inv_iw[ba, 0, 0] * cx + inv_iw[ba, 0, 1] * cy + inv_iw[ba, 0, 2] * cz
        w[ba, 1] += inv_iw[ba, 1, 0] * cx + inv_iw[ba, 1, 1] * cy + inv_iw[ba, 1, 2] * cz
        w[ba, 2] += inv_iw[ba, 2, 0] * cx + inv_iw[ba, 2, 1] * cy + inv_iw[ba, 2, 2] * cz
    if inv_m[bb] > 0.0:
        v[bb, 0] -= jx * inv_m[bb]
        v[bb, 1] -= jy * inv_m[bb]
        v[bb, 2] -= jz * inv_m[bb]
        cx, cy, cz = _cross(rbx, rby, rbz, jx, jy, jz)
        w[bb, 0] -= inv_iw[bb, 0, 0] * cx + inv_iw[bb, 0, 1] * cy + inv_iw[bb, 0, 2] * cz
        w[bb, 1] -= inv_iw[bb, 1, 0] * cx + inv_iw[bb, 1, 1] * cy + inv_iw[bb, 1, 2] * cz
        w[bb, 2] -= inv_iw[bb, 2, 0] * cx + inv_iw[bb, 2, 1] * cy + inv_iw[bb, 2, 2] * cz


@njit(**JIT, inline="always")
def _integrate_quat(qb, dx, dy, dz):
    """q += 0.5 * (omega_dt quat) * q, then normalize (in place)."""
    w, x, y, z = qb[0], qb[1], qb[2], qb[3]
    qb[0] = w + 0.5 * (-dx * x - dy * y - dz * z)
    qb[1] = x + 0.5 * (dx * w + dy * z - dz * y)
    qb[2] = y + 0.5 * (dy * w + dz * x - dx * z)
    qb[3] = z + 0.5 * (dz * w + dx * y - dy * x)
    n = np.sqrt(qb[0] ** 2 + qb[1] ** 2 + qb[2] ** 2 + qb[3] ** 2)
    if n > 0.0:
        qb[0] /= n
        qb[1] /= n
        qb[2] /= n
        qb[3] /= n


@njit(**JIT)
def _joint_position_pass(x, q, inv_m, inv_iw, jtype, a, b, anch_a, anch_b,
                         axis_l, t1_l, t2_l, ref_b, lo, hi, baumgarte):
    """Nonlinear Gauss-Seidel positional correction for one joint.

    Uses the pre-integration world inertia; corrections are small.
    """
    Ia = inv_iw[a]
    Ib = inv_iw[b]

    rax, ray, raz = _quat_rotate(q[a], anch_a[0], anch_a[1], anch_a[2])
    rbx, rby, rbz = _quat_rotate(q[b], anch_b[0], anch_b[1], anch_b[2])
    ax, ay, az = _quat_rotate(q[a], axis_l[0], axis_l[1], axis_l[2])

    if jtype == HINGE:
        # anchor coincidence
        ex = (x[b, 0] + rbx) - (x[a, 0] + rax)
        ey = (x[b, 1] + rby) - (x[a, 1] + ray)
        ez = (x[b, 2] + rbz) - (x[a, 2] + raz)
        K3 = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                K3[i, j] = 0.0
        K3[0, 0] = inv_m[a] + inv_m[b]
        K3[1, 1] = inv_m[a] + inv_m[b]
        K3[2, 2] = inv_m[a] + inv_m[b]
        _add_skew_term(K3, Ia, rax, ray, raz)
        _add_skew_term(K3, Ib, rbx, rby, rbz)
        rhs = np.empty(3)
        rhs[0] = -ex * baumgarte
        rhs[1] = -ey * baumgarte
        rhs[2] = -ez * baumgarte
        sol = np.empty(3)
        _solve33(K3, rhs, sol)
        _apply_positional(x, q, inv_m, Ia, Ib, a, b, rax, ray, raz, rbx, rby, rbz, sol[0], sol[1], sol[2])
        # axis alignment: e = axis_a x axis_b
        bx_, by_, bz_ = _quat_rotate(q[b], axis_l[0], axis_l[1], axis_l[2])
        # note: axis_l is stored in parent coordinates; the child's copy of
        # the axis coincides at q=0 by the aligned-frames convention
        exr, eyr, ezr = _cross(ax, ay, az, bx_, by_, bz_)
        k_ang = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                k_ang[i, j] = Ia[i, j] + Ib[i, j]
        rhs[0] = -exr * baumgarte
        rhs[1] = -eyr * baumgarte
        rhs[2] = -ezr * baumgarte
        _solve33(k_ang, rhs, sol)
        _apply_rot_positional(q, inv_m, Ia, Ib, a, b, sol[0], sol[1], sol[2])
        # angle limit correction
        refx, refy, refz = _quat_rotate(q[b], ref_b[0], ref_b[1], ref_b[2])
        t1x, t1y, t1z = _quat_rotate(q[a], t1_l[0], t1_l[1], t1_l[2])
        t2x, t2y, t2z = _quat_rotate(q[a], t2_l[0], t2_l[1], t2_l[2])
        ang = np.arctan2(
            refx * t2x + refy * t2y + refz * t2z,
            refx * t1x + refy * t1y + refz * t1z,
        )
        over = 0.0
        if ang < lo:
            over = ang - lo
        elif ang > hi:
            over = ang - hi
        if over != 0.0:
            kk = _axis_k_ang(Ia, ax, ay, az) + _axis_k_ang(Ib, ax, ay, az)
            if kk > 1e-12:
                lam = -over * baumgarte / kk
                _apply_rot_positional(q, inv_m, Ia, Ib, a, b, ax * lam, ay * lam, az * lam)
    else:
        # prismatic: align orientations completely
        # relative quat r = q_b * conj(q_a)
        aw, ax_, ay_, az_ = q[a, 0], -q[a, 1], -q[a, 2], -q[a, 3]
        bw, bx_, by_, bz_ = q[b, 0], q[b, 1], q[b, 2], q[b, 3]
        rw = bw * aw - bx_ * ax_ - by_ * ay_ - bz_ * az_
        rx = bw * ax_ + bx_ * aw + by_ * az_ - bz_ * ay_
        ry = bw * ay_ - bx_ * az_ + by_ * aw + bz_ * ax_
        rz = bw * az_ + bx_ * ay_ - by_ * ax_ + bz_ * aw
        sgn = 1.0 if rw >= 0.0 else -1.0
        exr, eyr, ezr = 2.0 * sgn * rx, 2.0 * sgn * ry, 2.0 * sgn * rz
        K3 = np.empty((3, 3))
        rhs = np.empty(3)
        sol = np.empty(3)
        for i in range(3):
            for j in range(3):
                K3[i, j] = Ia[i, j] + Ib[i, j]
        rhs[0] = -exr * baumgarte
        rhs[1] = -eyr * baumgarte
        rhs[2] = -ezr * baumgarte
        _solve33(K3, rhs, sol)
        _apply_rot_positional(q, inv_m, Ia, Ib, a, b, sol[0], sol[1], sol[2])
        # perpendicular anchor error + travel limits
        rax, ray, raz = _quat_rotate(q[a], anch_a[0], anch_a[1], anch_a[2])
        rbx, rby, rbz = _quat_rotate(q[b], anch_b[0], anch_b[1], anch_b[2])
        ax, ay, az = _quat_rotate(q[a], axis_l[0], axis_l[1], axis_l[2])
        dx = (x[b, 0] + rbx) - (x[a, 0] + rax)
        dy = (x[b, 1] + rby) - (x[a, 1] + ray)
        dz = (x[b, 2] + rbz) - (x[a, 2] + raz)
        along = dx * ax + dy * ay + dz * az
        ex = dx - along * ax
        ey = dy - along * ay
        ez = dz - along * az
        over = 0.0
        if along < lo:
            over = along - lo
        elif along > hi:
            over = along - hi
        ex += over * ax
        ey += over * ay
        ez += over * az
        for i in range(3):
            for j in range(3):
                K3[i, j] = 0.0
        K3[0, 0] = inv_m[a] + inv_m[b]
        K3[1, 1] = inv_m[a] + inv_m[b]
        K3[2, 2] = inv_m[a] + inv_m[b]
        _add_skew_term(K3, Ia, rax, ray, raz)
        _add_skew_term(K3, Ib, rbx, rby, rbz)
        rhs[0] = -ex * baumgarte
        rhs[1] = -ey * baumgarte
        rhs[2] = -ez * baumgarte
        _solve33(K3, rhs, sol)
        _apply_positional(x, q, inv_m, Ia, Ib, a, b, rax, ray, raz, rbx, rby, rbz, sol[0], sol[1], sol[2])


@njit(**JIT)
def _apply_positional(x, q, inv_m, Ia, Ib, a, b, rax, ray, raz, rbx, rby, rbz, jx, jy, jz):
    if inv_m[b] > 0.0:
        x[b, 0] += jx * inv_m[b]
        x[b, 1] += jy * inv_m[b]
        x[b, 2] += jz * inv_m[b]
        cx, cy, cz = _cross(rbx, rby, rbz, jx, jy, jz)
        _integrate_quat(
            q[b],
            Ib[0, 0] * cx + Ib[0, 1] * cy + Ib[0, 2] * cz,
            Ib[1, 0] * cx + Ib[1, 1] * cy + Ib[1, 2] * cz,
            Ib[2, 0] * cx + Ib[2, 1] * cy + Ib[2, 2] * cz,
        )
    if inv_m[a] > 0.0:
        x[a, 0] -= jx * inv_m[a]
        x[a, 1] -= jy * inv_m[a]
        x[a, 2] -= jz * inv_m[a]
        cx, cy, cz = _cross(rax, ray, raz, jx, jy, jz)
        _integrate_quat(
            q[a],
            -(Ia[0, 0] * cx + Ia[0, 1] * cy + Ia[0, 2] * cz),
            -(Ia[1, 0] * cx + Ia[1, 1] * cy + Ia[1, 2] * cz),
            -(Ia[2, 0] * cx + Ia[2, 1] * cy + Ia[2, 2] * cz),
        )


@njit(**JIT)
def _apply_rot_positional(q, inv_m, Ia, Ib, a, b, tx, ty, tz):
    if inv_m[b] > 0.0:
        _integrate_quat(
            q[b],
            Ib[0, 0] * tx + Ib[0, 1] * ty + Ib[0, 2] * tz,
            Ib[1, 0] * tx + Ib[1, 1] * ty + Ib[1, 2] * tz,
            Ib[2, 0] * tx + Ib[2, 1] * ty + Ib[2, 2] * tz,
        )
    if inv_m[a] > 0.0:
        _integrate_quat(
            q[a],
            -(Ia[0, 0] * tx + Ia[0, 1] * ty + Ia[0, 2] * tz),
            -(Ia[1, 0] * tx + Ia[1, 1] * ty + Ia[1, 2] * tz),
            -(Ia[2, 0] * tx + Ia[2, 1] * ty + Ia[2, 2] * tz),
        )
