"""Compiled articulated-dynamics core.

Generalized-coordinate formulation over the kinematic tree: per-link COM
Jacobians assemble the joint-space mass matrix, a zero-acceleration pass
supplies velocity-product and gravity terms, and contacts/PD torques enter
through Jacobian transposes. Joint damping is folded into the mass matrix
diagonal (semi-implicit), everything else integrates with symplectic Euler.

All functions here are numba kernels operating on flat float64 arrays; the
friendly wrappers live in ``sim.py``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

DIVERGE_LIMIT = 1.0e6


@njit(cache=True, inline="always")
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True, inline="always")
def _qmul(a, b, out):
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


@njit(cache=True, inline="always")
def _qrot(q, v, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)


@njit(cache=True, inline="always")
def _qaxis(axis, angle, out):
    h = 0.5 * angle
    s = np.sin(h)
    out[0] = np.cos(h)
    out[1] = s * axis[0]
    out[2] = s * axis[1]
    out[3] = s * axis[2]


@njit(cache=True, inline="always")
def _rotmat(q, R):
    w, x, y, z = q[0], q[1], q[2], q[3]
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True)
def backlash_step(target, anchor, half):
    """Dead-zone filter: returns (effective target, new anchor).

    The anchor tracks the output-side setpoint: commands inside the zone hold
    it, commands outside drag it along offset by the halfwidth.
    """
    d = target - anchor
    if d > half:
        eff = target - half
        return eff, eff
    if d < -half:
        eff = target + half
        return eff, eff
    return anchor, anchor


@njit(cache=True)
def run_ticks(
    parent, attach, mass, com, inertia,
    link_dof_start, link_dof_count, dof_axis,
    contact_link, contact_pos,
    fixed_base,
    base_pos, base_quat, base_vel, base_ang,
    jq, jqd, anchors,
    targets, sim_per_ctrl, dt,
    kp, kd, backlash_half,
    limit_lo, limit_hi, limit_k, limit_c,
    gravity, kn, cn, mu, kt,
    cf_out, pen_out, link_quat_out, link_w_out, torso_acc_out,
):
    """Advance ``targets.shape[0] * sim_per_ctrl`` dynamics ticks in place.

    Returns 0 on success or the 1-based global tick index at which divergence
    was detected (state is left at the last valid tick).
    """
    nL = parent.shape[0]
    nd = jq.shape[0]
    nb = 0 if fixed_base else 6
    N = nb + nd

    X = np.zeros((nL, 3))
    Cw = np.zeros((nL, 3))
    lq = np.zeros((nL, 4))
    R = np.zeros((nL, 3, 3))
    axw = np.zeros((nd, 3))
    w = np.zeros((nL, 3))
    vX = np.zeros((nL, 3))
    al0 = np.zeros((nL, 3))
    aX0 = np.zeros((nL, 3))
    aC0 = np.zeros((nL, 3))
    Jv = np.zeros((nL, 3, N))
    Jw = np.zeros((nL, 3, N))
    M = np.zeros((N, N))
    bias = np.zeros(N)
    Q = np.zeros(N)
    jrow = np.zeros((3, N))
    eff = np.zeros(nd)
    tmp = np.zeros(3)
    tmp2 = np.zeros(3)
    tmp3 = np.zeros(3)
    qtmp = np.zeros(4)
    qtmp2 = np.zeros(4)
    Iw = np.zeros((3, 3))
    gvec = np.zeros(3)
    gvec[2] = -gravity

    bk_pos = np.zeros(3)
    bk_quat = np.zeros(4)
    bk_vel = np.zeros(3)
    bk_ang = np.zeros(3)
    bk_jq = np.zeros(nd)
    bk_jqd = np.zeros(nd)
    bk_anch = np.zeros(nd)

    tick = 0
    for ci in range(targets.shape[0]):
        for k in range(nd):
            e, a = backlash_step(targets[ci, k], anchors[k], backlash_half[k])
            eff[k] = e
            anchors[k] = a

        for _si in range(sim_per_ctrl):
            tick += 1
            bk_pos[:] = base_pos
            bk_quat[:] = base_quat
            bk_vel[:] = base_vel
            bk_ang[:] = base_ang
            bk_jq[:] = jq
            bk_jqd[:] = jqd
            bk_anch[:] = anchors

            _fk_vel(parent, attach, com, link_dof_start, link_dof_count, dof_axis,
                    fixed_base, base_pos, base_quat, base_vel, base_ang, jq, jqd,
                    X, Cw, lq, R, axw, w, vX, qtmp, qtmp2, tmp)

            # Zero-acceleration (velocity-product) pass.
            al0[0, :] = 0.0
            aX0[0, :] = 0.0
            for i in range(1, nL):
                p = parent[i]
                for r in range(3):
                    tmp[r] = X[i, r] - X[p, r]
                _cross(al0[p], tmp, tmp2)
                _cross(w[p], tmp, tmp3)
                _cross(w[p], tmp3, tmp)
                for r in range(3):
                    aX0[i, r] = aX0[p, r] + tmp2[r] + tmp[r]
                for r in range(3):
                    al0[i, r] = al0[p, r]
                    tmp3[r] = w[p, r]  # angular velocity carried so far
                s = link_dof_start[i]
                for k in range(s, s + link_dof_count[i]):
                    _cross(tmp3, axw[k], tmp)
                    for r in range(3):
                        al0[i, r] += jqd[k] * tmp[r]
                        tmp3[r] += jqd[k] * axw[k, r]
            for i in range(nL):
                for r in range(3):
                    tmp[r] = Cw[i, r] - X[i, r]
                _cross(al0[i], tmp, tmp2)
                _cross(w[i], tmp, tmp3)
                _cross(w[i], tmp3, tmp)
                for r in range(3):
                    aC0[i, r] = aX0[i, r] + tmp2[r] + tmp[r]

            # COM Jacobians.
            Jv[:, :, :] = 0.0
            Jw[:, :, :] = 0.0
            for i in range(nL):
                if nb == 6:
                    for r in range(3):
                        Jv[i, r, r] = 1.0
                        Jw[i, r, 3 + r] = 1.0
                    rcx = Cw[i, 0] - X[0, 0]
                    rcy = Cw[i, 1] - X[0, 1]
                    rcz = Cw[i, 2] - X[0, 2]
                    Jv[i, 0, 4] = rcz
                    Jv[i, 0, 5] = -rcy
                    Jv[i, 1, 3] = -rcz
                    Jv[i, 1, 5] = rcx
                    Jv[i, 2, 3] = rcy
                    Jv[i, 2, 4] = -rcx
                j = i
                while j > 0:
                    s = link_dof_start[j]
                    for k in range(s, s + link_dof_count[j]):
                        col = nb + k
                        for r in range(3):
                            Jw[i, r, col] = axw[k, r]
                            tmp[r] = Cw[i, r] - X[j, r]
                        _cross(axw[k], tmp, tmp2)
                        for r in range(3):
                            Jv[i, r, col] = tmp2[r]
                    j = parent[j]

            # Mass matrix and bias forces.
            M[:, :] = 0.0
            bias[:] = 0.0
            for i in range(nL):
                m_i = mass[i]
                # World-frame inertia Iw = R diag(I) R^T.
                for r in range(3):
                    for c in range(3):
                        Iw[r, c] = (R[i, r, 0] * inertia[i, 0] * R[i, c, 0]
                                    + R[i, r, 1] * inertia[i, 1] * R[i, c, 1]
                                    + R[i, r, 2] * inertia[i, 2] * R[i, c, 2])
                # f0 = m (aC0 - g); t0 = Iw al0 + w x Iw w
                for r in range(3):
                    tmp[r] = m_i * (aC0[i, r] - gvec[r])
                for r in range(3):
                    tmp2[r] = (Iw[r, 0] * w[i, 0] + Iw[r, 1] * w[i, 1]
                               + Iw[r, 2] * w[i, 2])
                _cross(w[i], tmp2, tmp3)
                for r in range(3):
                    tmp2[r] = (Iw[r, 0] * al0[i, 0] + Iw[r, 1] * al0[i, 1]
                               + Iw[r, 2] * al0[i, 2]) + tmp3[r]
                for col in range(N):
                    acc = 0.0
                    for r in range(3):
                        acc += Jv[i, r, col] * tmp[r] + Jw[i, r, col] * tmp2[r]
                    bias[col] += acc
                # M += m Jv^T Jv + Jw^T Iw Jw
                for a in range(N):
                    jv0 = Jv[i, 0, a]
                    jv1 = Jv[i, 1, a]
                    jv2 = Jv[i, 2, a]
                    iw0 = Iw[0, 0] * Jw[i, 0, a] + Iw[0, 1] * Jw[i, 1, a] + Iw[0, 2] * Jw[i, 2, a]
                    iw1 = Iw[1, 0] * Jw[i, 0, a] + Iw[1, 1] * Jw[i, 1, a] + Iw[1, 2] * Jw[i, 2, a]
                    iw2 = Iw[2, 0] * Jw[i, 0, a] + Iw[2, 1] * Jw[i, 1, a] + Iw[2, 2] * Jw[i, 2, a]
                    for b in range(a, N):
                        M[a, b] += (m_i * (jv0 * Jv[i, 0, b] + jv1 * Jv[i, 1, b]
                                           + jv2 * Jv[i, 2, b])
                                    + iw0 * Jw[i, 0, b] + iw1 * Jw[i, 1, b]
                                    + iw2 * Jw[i, 2, b])

            # PD torques with implicit joint damping, plus hard-stop springs
            # at the joint limits (the reward penalizes commands beyond the
            # limits; the structure itself resists them here).
            Q[:] = 0.0
            for k in range(nd):
                Q[nb + k] = kp[k] * (eff[k] - jq[k]) - kd[k] * jqd[k]
                M[nb + k, nb + k] += kd[k] * dt
                if jq[k] > limit_hi[k]:
                    Q[nb + k] += -limit_k * (jq[k] - limit_hi[k]) - limit_c * jqd[k]
                    M[nb + k, nb + k] += limit_c * dt
                elif jq[k] < limit_lo[k]:
                    Q[nb + k] += limit_k * (limit_lo[k] - jq[k]) - limit_c * jqd[k]
                    M[nb + k, nb + k] += limit_c * dt

            # Ground contacts at registered points. Damping and sub-saturation
            # friction slopes go in implicitly (rank-1 mass-matrix updates on
            # the point Jacobian rows); otherwise the light feet's rotational
            # modes violate the explicit-damping stability bound.
            for c in range(contact_link.shape[0]):
                i = contact_link[c]
                for r in range(3):
                    tmp[r] = (R[i, r, 0] * contact_pos[c, 0]
                              + R[i, r, 1] * contact_pos[c, 1]
                              + R[i, r, 2] * contact_pos[c, 2])
                px = X[i, 0] + tmp[0]
                py = X[i, 1] + tmp[1]
                pz = X[i, 2] + tmp[2]
                pen = -pz
                pen_out[c] = pen
                if pen <= 0.0:
                    cf_out[c, 0] = 0.0
                    cf_out[c, 1] = 0.0
                    cf_out[c, 2] = 0.0
                    continue
                tmp2[0] = px - X[i, 0]
                tmp2[1] = py - X[i, 1]
                tmp2[2] = pz - X[i, 2]
                _cross(w[i], tmp2, tmp3)
                vpx = vX[i, 0] + tmp3[0]
                vpy = vX[i, 1] + tmp3[1]
                vpz = vX[i, 2] + tmp3[2]

                # Point Jacobian rows (world x/y/z velocity per unit coordinate).
                jrow[:, :] = 0.0
                if nb == 6:
                    jrow[0, 0] = 1.0
                    jrow[1, 1] = 1.0
                    jrow[2, 2] = 1.0
                    rx = px - X[0, 0]
                    ry = py - X[0, 1]
                    rz = pz - X[0, 2]
                    jrow[0, 4] = rz
                    jrow[0, 5] = -ry
                    jrow[1, 3] = -rz
                    jrow[1, 5] = rx
                    jrow[2, 3] = ry
                    jrow[2, 4] = -rx
                j = i
                while j > 0:
                    s = link_dof_start[j]
                    for k in range(s, s + link_dof_count[j]):
                        tmp2[0] = px - X[j, 0]
                        tmp2[1] = py - X[j, 1]
                        tmp2[2] = pz - X[j, 2]
                        _cross(axw[k], tmp2, tmp)
                        jrow[0, nb + k] = tmp[0]
                        jrow[1, nb + k] = tmp[1]
                        jrow[2, nb + k] = tmp[2]
                    j = parent[j]

                fz = kn * pen
                if vpz < 0.0:
                    fz += cn * (-vpz)
                    for a in range(N):
                        ja = cn * dt * jrow[2, a]
                        if ja != 0.0:
                            for b2 in range(a, N):
                                M[a, b2] += ja * jrow[2, b2]
                vt = np.sqrt(vpx * vpx + vpy * vpy)
                fx = 0.0
                fy = 0.0
                if vt > 1e-10:
                    if kt * vt < mu * fz:
                        fx = -kt * vpx
                        fy = -kt * vpy
                        for a in range(N):
                            jxa = kt * dt * jrow[0, a]
                            jya = kt * dt * jrow[1, a]
                            if jxa != 0.0 or jya != 0.0:
                                for b2 in range(a, N):
                                    M[a, b2] += jxa * jrow[0, b2] + jya * jrow[1, b2]
                    else:
                        ft = mu * fz
                        fx = -ft * vpx / vt
                        fy = -ft * vpy / vt
                cf_out[c, 0] = fx
                cf_out[c, 1] = fy
                cf_out[c, 2] = fz
                for a in range(N):
                    Q[a] += jrow[0, a] * fx + jrow[1, a] * fy + jrow[2, a] * fz

            # Mirror upper triangle and solve for accelerations.
            for a in range(N):
                for b2 in range(a + 1, N):
                    M[b2, a] = M[a, b2]
            udot = np.linalg.solve(M, Q - bias)

            # Torso COM acceleration (for the IMU): J v udot + centripetal term.
            tmp2[0] = Cw[0, 0] - X[0, 0]
            tmp2[1] = Cw[0, 1] - X[0, 1]
            tmp2[2] = Cw[0, 2] - X[0, 2]
            if nb == 6:
                _cross(w[0], tmp2, tmp3)
                _cross(w[0], tmp3, tmp)
                tmp3[0] = udot[3]
                tmp3[1] = udot[4]
                tmp3[2] = udot[5]
                _cross(tmp3, tmp2, tmp2)
                torso_acc_out[0] = udot[0] + tmp2[0] + tmp[0]
                torso_acc_out[1] = udot[1] + tmp2[1] + tmp[1]
                torso_acc_out[2] = udot[2] + tmp2[2] + tmp[2]
            else:
                torso_acc_out[0] = 0.0
                torso_acc_out[1] = 0.0
                torso_acc_out[2] = 0.0

            # Semi-implicit Euler.
            if nb == 6:
                for r in range(3):
                    base_vel[r] += udot[r] * dt
                    base_ang[r] += udot[3 + r] * dt
            for k in range(nd):
                jqd[k] += udot[nb + k] * dt
            if nb == 6:
                for r in range(3):
                    base_pos[r] += base_vel[r] * dt
                ang = np.sqrt(base_ang[0] ** 2 + base_ang[1] ** 2 + base_ang[2] ** 2) * dt
                if ang > 1e-12:
                    tmp[0] = base_ang[0]
                    tmp[1] = base_ang[1]
                    tmp[2] = base_ang[2]
                    n = np.sqrt(tmp[0] ** 2 + tmp[1] ** 2 + tmp[2] ** 2)
                    tmp[0] /= n
                    tmp[1] /= n
                    tmp[2] /= n
                    _qaxis(tmp, ang, qtmp)
                    _qmul(qtmp, base_quat, qtmp2)
                    qn = np.sqrt(qtmp2[0] ** 2 + qtmp2[1] ** 2 + qtmp2[2] ** 2
                                 + qtmp2[3] ** 2)
                    for r in range(4):
                        base_quat[r] = qtmp2[r] / qn
            for k in range(nd):
                jq[k] += jqd[k] * dt

            # Divergence guard: restore the last valid state and bail out.
            ok = True
            for r in range(3):
                if not (np.isfinite(base_pos[r]) and abs(base_pos[r]) < DIVERGE_LIMIT):
                    ok = False
                if not (np.isfinite(base_vel[r]) and abs(base_vel[r]) < DIVERGE_LIMIT):
                    ok = False
                if not (np.isfinite(base_ang[r]) and abs(base_ang[r]) < DIVERGE_LIMIT):
                    ok = False
            for k in range(nd):
                if not (np.isfinite(jq[k]) and abs(jq[k]) < DIVERGE_LIMIT):
                    ok = False
                if not (np.isfinite(jqd[k]) and abs(jqd[k]) < DIVERGE_LIMIT):
                    ok = False
            if not ok:
                base_pos[:] = bk_pos
                base_quat[:] = bk_quat
                base_vel[:] = bk_vel
                base_ang[:] = bk_ang
                jq[:] = bk_jq
                jqd[:] = bk_jqd
                anchors[:] = bk_anch
                return tick

    # Final kinematics snapshot for observation/reward consumers.
    _fk_vel(parent, attach, com, link_dof_start, link_dof_count, dof_axis,
            fixed_base, base_pos, base_quat, base_vel, base_ang, jq, jqd,
            X, Cw, lq, R, axw, w, vX, qtmp, qtmp2, tmp)
    for i in range(nL):
        for r in range(4):
            link_quat_out[i, r] = lq[i, r]
        for r in range(3):
            link_w_out[i, r] = w[i, r]
    return 0


@njit(cache=True)
def _fk_vel(parent, attach, com, link_dof_start, link_dof_count, dof_axis,
            fixed_base, base_pos, base_quat, base_vel, base_ang, jq, jqd,
            X, Cw, lq, R, axw, w, vX, qtmp, qtmp2, tmp):
    nL = parent.shape[0]
    for r in range(3):
        X[0, r] = base_pos[r]
    for r in range(4):
        lq[0, r] = base_quat[r]
    _rotmat(base_quat, R[0])
    if fixed_base:
        w[0, :] = 0.0
        vX[0, :] = 0.0
    else:
        for r in range(3):
            w[0, r] = base_ang[r]
            vX[0, r] = base_vel[r]
    for i in range(1, nL):
        p = parent[i]
        _qrot(lq[p], attach[i], tmp)
        for r in range(3):
            X[i, r] = X[p, r] + tmp[r]
        for r in range(4):
            qtmp[r] = lq[p, r]
        s = link_dof_start[i]
        for k in range(s, s + link_dof_count[i]):
            _qrot(qtmp, dof_axis[k], axw[k])
            _qaxis(dof_axis[k], jq[k], qtmp2)
            q0 = qtmp[0] * qtmp2[0] - qtmp[1] * qtmp2[1] - qtmp[2] * qtmp2[2] - qtmp[3] * qtmp2[3]
            q1 = qtmp[0] * qtmp2[1] + qtmp[1] * qtmp2[0] + qtmp[2] * qtmp2[3] - qtmp[3] * qtmp2[2]
            q2 = qtmp[0] * qtmp2[2] - qtmp[1] * qtmp2[3] + qtmp[2] * qtmp2[0] + qtmp[3] * qtmp2[1]
            q3 = qtmp[0] * qtmp2[3] + qtmp[1] * qtmp2[2] - qtmp[2] * qtmp2[1] + qtmp[3] * qtmp2[0]
            qtmp[0] = q0
            qtmp[1] = q1
            qtmp[2] = q2
            qtmp[3] = q3
        qn = np.sqrt(qtmp[0] ** 2 + qtmp[1] ** 2 + qtmp[2] ** 2 + qtmp[3] ** 2)
        for r in range(4):
            lq[i, r] = qtmp[r] / qn
        _rotmat(lq[i], R[i])
        # velocities
        for r in range(3):
            tmp[r] = X[i, r] - X[p, r]
        cx = w[p, 1] * tmp[2] - w[p, 2] * tmp[1]
        cy = w[p, 2] * tmp[0] - w[p, 0] * tmp[2]
        cz = w[p, 0] * tmp[1] - w[p, 1] * tmp[0]
        vX[i, 0] = vX[p, 0] + cx
        vX[i, 1] = vX[p, 1] + cy
        vX[i, 2] = vX[p, 2] + cz
        for r in range(3):
            w[i, r] = w[p, r]
        for k in range(s, s + link_dof_count[i]):
            for r in range(3):
                w[i, r] += jqd[k] * axw[k, r]
    for i in range(nL):
        _qrot(lq[i], com[i], tmp)
        for r in range(3):
            Cw[i, r] = X[i, r] + tmp[r]
