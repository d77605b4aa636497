"""Floating-base articulated rigid-body simulator.

PD-servoed revolute joints with a motor dead-zone (backlash) filter,
spring-damper ground contacts with regularized Coulomb friction at the foot
sole corners, simulated sensors (joint encoders, IMU, foot pressure pads,
clock) with per-episode bias and per-step noise, plus self-collision and
fall queries.

One ``Simulator`` owns its compiled model and is single-threaded; rollout
workers each build their own instance. States are immutable snapshots:
stepping returns a new state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _dynamics, geom
from .skeleton import Box, Capsule, SkeletonModel


class SimulationDiverged(RuntimeError):
    """Dynamics produced non-finite or runaway state; carries the last valid state."""

    def __init__(self, message: str, last_valid_state: "SimState"):
        super().__init__(message)
        self.last_valid_state = last_valid_state


@dataclass(frozen=True)
class SimParams:
    """Simulation configuration; rates must nest as integer multiples."""

    gravity: float = 9.81
    sim_rate: int = 1024
    control_rate: int = 512
    policy_rate: int = 64
    friction_coef: float = 0.25
    youngs_modulus: float = 3.0e4
    contact_length: float = 0.01  # characteristic length: k_n = E * L_c
    tangential_stiffness: float = 400.0
    backlash_halfwidth: float | np.ndarray = 0.0
    pd_kp: float | np.ndarray = 3.0
    pd_kd: float | np.ndarray = 0.08
    limit_stiffness: float = 25.0  # joint hard-stop spring
    limit_damping: float = 0.1
    joint_noise_std: float = 0.002
    gyro_noise_std: float = 0.02
    accel_noise_std: float = 0.1
    pressure_noise_frac: float = 0.02
    joint_bias_std: float = 0.002
    gyro_bias_std: float = 0.02
    accel_bias_std: float = 0.1
    pressure_bias_frac: float = 0.02
    fall_height_floor: float | None = None  # default: half the standing height
    fall_tilt_max: float = math.pi / 3

    def __post_init__(self):
        for name in ("sim_rate", "control_rate", "policy_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.sim_rate % self.control_rate != 0:
            raise ValueError("sim_rate must be an integer multiple of control_rate")
        if self.control_rate % self.policy_rate != 0:
            raise ValueError("control_rate must be an integer multiple of policy_rate")
        if self.friction_coef < 0:
            raise ValueError("friction_coef must be >= 0")
        if self.youngs_modulus <= 0:
            raise ValueError("youngs_modulus must be > 0")

    @property
    def sim_dt(self) -> float:
        return 1.0 / self.sim_rate

    @property
    def sim_per_control(self) -> int:
        return self.sim_rate // self.control_rate

    @property
    def control_per_policy(self) -> int:
        return self.control_rate // self.policy_rate

    @property
    def contact_kn(self) -> float:
        return self.youngs_modulus * self.contact_length


@dataclass
class SimState:
    """Full dynamic state plus per-tick caches (contacts, kinematics, IMU)."""

    base_pos: np.ndarray
    base_quat: np.ndarray
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    joint_q: np.ndarray
    joint_qd: np.ndarray
    backlash_anchor: np.ndarray
    contact_force: np.ndarray  # (n_points, 3) world forces at the last tick
    penetration: np.ndarray  # (n_points,)
    torso_acc: np.ndarray  # world COM acceleration of the root link
    link_quat: np.ndarray  # (n_links, 4)
    link_omega: np.ndarray  # (n_links, 3)
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            self.base_pos.copy(), self.base_quat.copy(), self.base_lin_vel.copy(),
            self.base_ang_vel.copy(), self.joint_q.copy(), self.joint_qd.copy(),
            self.backlash_anchor.copy(), self.contact_force.copy(),
            self.penetration.copy(), self.torso_acc.copy(), self.link_quat.copy(),
            self.link_omega.copy(), self.time,
        )

    def to_json(self) -> str:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
             for k, v in self.__dict__.items()}
        return json.dumps(d)

    @staticmethod
    def from_json(s: str) -> "SimState":
        d = json.loads(s)
        return SimState(**{k: (np.asarray(v, float) if isinstance(v, list) else v)
                           for k, v in d.items()})


@dataclass(frozen=True)
class SensorFrame:
    joint_angles: np.ndarray
    accel: np.ndarray  # torso frame, includes gravity
    gyro: np.ndarray  # torso frame
    foot_pressure: np.ndarray  # one reading per pad
    clock: float


@dataclass(frozen=True)
class SensorBias:
    joint: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    pressure: np.ndarray


def apply_backlash(target: float, anchor: float, halfwidth: float) -> tuple[float, float]:
    """Dead-zone filter for one joint: (effective target, new anchor).

    Targets inside the zone leave the servo setpoint at the anchor; targets
    outside drag it along offset by the halfwidth, so a command must cross
    the full zone width after a reversal before the joint moves again.
    Zero halfwidth is the identity.
    """
    if halfwidth < 0:
        raise ValueError("backlash halfwidth must be >= 0")
    return _dynamics.backlash_step(float(target), float(anchor), float(halfwidth))


def _as_dof_array(v, nd: int, name: str) -> np.ndarray:
    arr = np.asarray(v, float)
    if arr.ndim == 0:
        arr = np.full(nd, float(arr))
    if arr.shape != (nd,):
        raise ValueError(f"{name} must be scalar or shape ({nd},), got {arr.shape}")
    return arr.copy()


class Simulator:
    """Compiled simulator for one skeleton under one parameter set."""

    def __init__(self, skel: SkeletonModel, params: SimParams,
                 fixed_base: bool = False):
        self.skel = skel
        self.params = params
        self.fixed_base = fixed_base
        nL = len(skel.links)
        nd = skel.dof_count
        self.n_links = nL
        self.n_dof = nd

        self._parent = np.array(
            [-1] + [skel.link_index(l.parent) for l in skel.links[1:]], dtype=np.int64
        )
        self._attach = np.array([l.attach for l in skel.links], float)
        self._mass = np.array([l.mass for l in skel.links], float)
        self._com = np.array([l.com for l in skel.links], float)
        self._inertia = np.array([l.inertia for l in skel.links], float)
        starts, counts, axes = [], [], []
        n = 0
        for l in skel.links:
            starts.append(n)
            counts.append(len(l.joint_axes))
            n += len(l.joint_axes)
            axes.extend(l.joint_axes)
        self._dof_start = np.array(starts, dtype=np.int64)
        self._dof_count = np.array(counts, dtype=np.int64)
        self._dof_axis = (np.array(axes, float) if axes else np.zeros((0, 3)))
        self.limits_lo, self.limits_hi = skel.joint_limits()

        # Contact points: sole corners of each designated foot.
        pts, links, foot_of = [], [], []
        for fi, foot in enumerate(skel.feet):
            l = skel.link(foot)
            g = l.geometry
            if not isinstance(g, Box):
                raise ValueError(f"foot link {foot!r} needs box geometry for contacts")
            hx, hy, hz = g.half_extents
            for sx in (-1, 1):
                for sy in (-1, 1):
                    pts.append(g.center + np.array([sx * hx, sy * hy, -hz]))
                    links.append(skel.link_index(foot))
                    foot_of.append(fi)
        self._contact_link = np.array(links, dtype=np.int64)
        self._contact_pos = (np.array(pts, float) if pts else np.zeros((0, 3)))
        self.contact_foot = np.array(foot_of, dtype=np.int64)
        self.n_contacts = len(pts)

        self.kp = _as_dof_array(params.pd_kp, nd, "pd_kp")
        self.kd = _as_dof_array(params.pd_kd, nd, "pd_kd")
        self.backlash_half = _as_dof_array(params.backlash_halfwidth, nd,
                                           "backlash_halfwidth")

        self.total_mass = float(self._mass.sum())
        self.standing_height = _standing_height(skel)
        self.fall_height_floor = (
            params.fall_height_floor
            if params.fall_height_floor is not None
            else 0.5 * self.standing_height
        )
        self.contact_kn = params.contact_kn
        m_support = self.total_mass / max(1, self.n_contacts)
        self.contact_cn = 2.0 * math.sqrt(self.contact_kn * m_support)
        # Per-pad sensor range: a pad's nominal share of the robot's weight.
        self.pressure_full_scale = (
            self.total_mass * params.gravity / max(1, self.n_contacts)
        )

        # Collision geometry in link frames, resolved once, plus enclosing
        # spheres for cheap pair pre-culling.
        self._collision_geoms = {l.name: l.geometry for l in skel.links}
        self._bound_spheres = {}
        for l in skel.links:
            g = l.geometry
            if isinstance(g, Capsule):
                c = 0.5 * (g.p0 + g.p1)
                r = 0.5 * float(np.linalg.norm(g.p1 - g.p0)) + g.radius
            else:
                c = g.center.copy()
                r = float(np.linalg.norm(g.half_extents))
            self._bound_spheres[l.name] = (c, r)
        self._fk_scratch = None

    # -- state construction -------------------------------------------------

    def default_state(self, joint_q=None, base_z: float | None = None,
                      base_xy=(0.0, 0.0), base_yaw: float = 0.0) -> SimState:
        """Standing rest state; base height accounts for static sole compression."""
        nd = self.n_dof
        jq = np.zeros(nd) if joint_q is None else np.asarray(joint_q, float).copy()
        if base_z is None:
            sag = 0.0
            if self.n_contacts and not self.fixed_base:
                sag = self.total_mass * self.params.gravity / (
                    self.contact_kn * self.n_contacts)
            base_z = self.standing_height - sag
        base_pos = np.array([base_xy[0], base_xy[1], base_z])
        base_quat = geom.quat_from_axis_angle([0, 0, 1], base_yaw)
        state = SimState(
            base_pos=base_pos,
            base_quat=base_quat,
            base_lin_vel=np.zeros(3),
            base_ang_vel=np.zeros(3),
            joint_q=jq,
            joint_qd=np.zeros(nd),
            backlash_anchor=jq.copy(),
            contact_force=np.zeros((self.n_contacts, 3)),
            penetration=np.zeros(self.n_contacts),
            torso_acc=np.zeros(3),
            link_quat=np.zeros((self.n_links, 4)),
            link_omega=np.zeros((self.n_links, 3)),
            time=0.0,
        )
        pos, quat, vcom, omega = self.link_states(state)
        state.link_quat = quat
        state.link_omega = omega
        state.penetration = self._penetrations(state)
        return state

    # -- dynamics ------------------------------------------------------------

    def step_dynamics(self, state: SimState, joint_position_targets) -> SimState:
        """Advance one simulation tick (1/sim_rate) toward the given targets."""
        targets = np.asarray(joint_position_targets, float).reshape(1, -1)
        if targets.shape[1] != self.n_dof:
            raise ValueError(f"expected {self.n_dof} joint targets")
        return self._run(state, targets, sim_per_ctrl=1)

    def run_control_ticks(self, state: SimState, control_targets) -> SimState:
        """Advance one full control tick per row of ``control_targets``."""
        targets = np.asarray(control_targets, float)
        if targets.ndim != 2 or targets.shape[1] != self.n_dof:
            raise ValueError(f"expected (n, {self.n_dof}) target array")
        return self._run(state, targets, sim_per_ctrl=self.params.sim_per_control)

    def _run(self, state: SimState, targets: np.ndarray, sim_per_ctrl: int) -> SimState:
        if not np.all(np.isfinite(targets)):
            raise ValueError("joint position targets must be finite")
        s = state.copy()
        code = _dynamics.run_ticks(
            self._parent, self._attach, self._mass, self._com, self._inertia,
            self._dof_start, self._dof_count, self._dof_axis,
            self._contact_link, self._contact_pos,
            self.fixed_base,
            s.base_pos, s.base_quat, s.base_lin_vel, s.base_ang_vel,
            s.joint_q, s.joint_qd, s.backlash_anchor,
            targets, sim_per_ctrl, self.params.sim_dt,
            self.kp, self.kd, self.backlash_half,
            self.limits_lo, self.limits_hi,
            self.params.limit_stiffness, self.params.limit_damping,
            self.params.gravity, self.contact_kn, self.contact_cn,
            self.params.friction_coef, self.params.tangential_stiffness,
            s.contact_force, s.penetration, s.link_quat, s.link_omega, s.torso_acc,
        )
        if code != 0:
            s.time = state.time + (code - 1) * self.params.sim_dt
            raise SimulationDiverged(
                f"simulation diverged at tick {code} (t={s.time:.4f}s)", s
            )
        s.time = state.time + targets.shape[0] * sim_per_ctrl * self.params.sim_dt
        return s

    # -- reference kinematics (numpy; doubles as an oracle for the kernel) ---

    def link_states(self, state: SimState):
        """World (positions, orientations, COM velocities, angular velocities)."""
        skel = self.skel
        pos, quat = skel.fk(state.base_pos, state.base_quat, state.joint_q)
        nL = self.n_links
        w = np.zeros((nL, 3))
        vx = np.zeros((nL, 3))
        if not self.fixed_base:
            w[0] = state.base_ang_vel
            vx[0] = state.base_lin_vel
        dof = 0
        axes_w = []
        for i, l in enumerate(skel.links):
            if i == 0:
                axes_w.append([])
                continue
            p = self._parent[i]
            vx[i] = vx[p] + np.cross(w[p], pos[i] - pos[p])
            w[i] = w[p].copy()
            q = quat[p]
            own = []
            for axis in l.joint_axes:
                a_w = geom.rotate_vec(q, axis)
                own.append(a_w)
                w[i] = w[i] + state.joint_qd[dof] * a_w
                q = geom.quat_mul(q, geom.quat_from_axis_angle(axis, state.joint_q[dof]))
                dof += 1
            axes_w.append(own)
        vcom = np.zeros((nL, 3))
        for i in range(nL):
            r = geom.rotate_vec(quat[i], self.skel.links[i].com)
            vcom[i] = vx[i] + np.cross(w[i], r)
        return pos, quat, vcom, w

    def contact_points_world(self, state: SimState):
        """World positions and velocities of the registered contact points."""
        pos, quat, _, w = self.link_states(state)
        vx = self._origin_velocities(state, pos, w)
        pts = np.zeros((self.n_contacts, 3))
        vels = np.zeros((self.n_contacts, 3))
        for c in range(self.n_contacts):
            i = self._contact_link[c]
            r = geom.rotate_vec(quat[i], self._contact_pos[c])
            pts[c] = pos[i] + r
            vels[c] = vx[i] + np.cross(w[i], r)
        return pts, vels

    def _origin_velocities(self, state, pos, w):
        nL = self.n_links
        vx = np.zeros((nL, 3))
        if not self.fixed_base:
            vx[0] = state.base_lin_vel
        for i in range(1, nL):
            p = self._parent[i]
            vx[i] = vx[p] + np.cross(w[p], pos[i] - pos[p])
        return vx

    def _penetrations(self, state: SimState) -> np.ndarray:
        pts, _ = self.contact_points_world(state)
        return -pts[:, 2] if self.n_contacts else np.zeros(0)

    def contact_forces(self, state: SimState) -> np.ndarray:
        """Ground forces (n_points, 3) the contact model applies at this state."""
        out = np.zeros((self.n_contacts, 3))
        if self.n_contacts == 0:
            return out
        pts, vels = self.contact_points_world(state)
        mu = self.params.friction_coef
        kt = self.params.tangential_stiffness
        for c in range(self.n_contacts):
            pen = -pts[c, 2]
            if pen <= 0:
                continue
            fz = self.contact_kn * pen + self.contact_cn * max(0.0, -vels[c, 2])
            vt = math.hypot(vels[c, 0], vels[c, 1])
            if vt > 1e-10:
                ft = min(mu * fz, kt * vt)
                out[c, 0] = -ft * vels[c, 0] / vt
                out[c, 1] = -ft * vels[c, 1] / vt
            out[c, 2] = fz
        return out

    def energy(self, state: SimState) -> float:
        """Total mechanical energy (kinetic + gravitational potential)."""
        pos, quat, vcom, w = self.link_states(state)
        e = 0.0
        for i, l in enumerate(self.skel.links):
            e += 0.5 * l.mass * float(vcom[i] @ vcom[i])
            R = geom.quat_to_mat(quat[i])
            Iw = R @ np.diag(l.inertia) @ R.T
            e += 0.5 * float(w[i] @ Iw @ w[i])
            com_w = pos[i] + geom.rotate_vec(quat[i], l.com)
            e += l.mass * self.params.gravity * com_w[2]
        return e

    # -- sensors ---------------------------------------------------------------

    def zero_bias(self) -> SensorBias:
        return SensorBias(np.zeros(self.n_dof), np.zeros(3), np.zeros(3),
                          np.zeros(self.n_contacts))

    def sample_sensor_bias(self, rng: np.random.Generator) -> SensorBias:
        """Per-episode sensor bias draw (noise is added per step instead)."""
        p = self.params
        return SensorBias(
            joint=rng.normal(0.0, p.joint_bias_std, self.n_dof),
            accel=rng.normal(0.0, p.accel_bias_std, 3),
            gyro=rng.normal(0.0, p.gyro_bias_std, 3),
            pressure=rng.normal(0.0, p.pressure_bias_frac * self.pressure_full_scale,
                                self.n_contacts),
        )

    def read_sensors(self, state: SimState, rng: np.random.Generator | None = None,
                     bias: SensorBias | None = None) -> SensorFrame:
        """Simulated readings: ideal value + per-episode bias + per-step noise."""
        p = self.params
        bias = bias or self.zero_bias()
        Rt = geom.quat_to_mat(state.base_quat).T
        g_world = np.array([0.0, 0.0, -p.gravity])
        accel = Rt @ (state.torso_acc - g_world)
        gyro = Rt @ state.base_ang_vel
        pressure = state.contact_force[:, 2].copy()
        joints = state.joint_q.copy()
        if rng is not None:
            joints = joints + rng.normal(0.0, p.joint_noise_std, self.n_dof)
            accel = accel + rng.normal(0.0, p.accel_noise_std, 3)
            gyro = gyro + rng.normal(0.0, p.gyro_noise_std, 3)
            pressure = pressure + rng.normal(
                0.0, p.pressure_noise_frac * self.pressure_full_scale, self.n_contacts)
        return SensorFrame(
            joint_angles=joints + bias.joint,
            accel=accel + bias.accel,
            gyro=gyro + bias.gyro,
            foot_pressure=pressure + bias.pressure,
            clock=state.time,
        )

    def foot_pressure_sums(self, sensors: SensorFrame) -> np.ndarray:
        """Per-foot pressure: sum of that foot's pad readings."""
        out = np.zeros(len(self.skel.feet))
        for c in range(self.n_contacts):
            out[self.contact_foot[c]] += sensors.foot_pressure[c]
        return out

    # -- predicates --------------------------------------------------------------

    def check_fall(self, state: SimState) -> bool:
        """True iff the torso is below the height floor or tilted past the limit."""
        if state.base_pos[2] < self.fall_height_floor:
            return True
        up = geom.rotate_vec(state.base_quat, np.array([0.0, 0.0, 1.0]))
        tilt = math.acos(min(1.0, max(-1.0, float(up[2]))))
        return tilt > self.params.fall_tilt_max

    def fk_fast(self, state: SimState):
        """World link positions and orientations from the generalized coords."""
        if self._fk_scratch is None:
            nL, nd = self.n_links, self.n_dof
            self._fk_scratch = tuple(np.zeros(s) for s in (
                (nL, 3), (nL, 3), (nL, 4), (nL, 3, 3), (max(nd, 1), 3),
                (nL, 3), (nL, 3), (4,), (4,), (3,)))
        X, Cw, lq, R, axw, w, vX, qtmp, qtmp2, tmp = self._fk_scratch
        _dynamics._fk_vel(
            self._parent, self._attach, self._com, self._dof_start,
            self._dof_count, self._dof_axis, self.fixed_base,
            state.base_pos, state.base_quat, state.base_lin_vel,
            state.base_ang_vel, state.joint_q, state.joint_qd,
            X, Cw, lq, R, axw, w, vX, qtmp, qtmp2, tmp)
        return X.copy(), lq.copy()

    def check_self_collision(self, state: SimState,
                             collision_pairs=None) -> list[tuple[str, str]]:
        """Labeled pairs whose geometries strictly interpenetrate."""
        pairs = collision_pairs if collision_pairs is not None else self.skel.collision_pairs
        pos, quat = self.fk_fast(state)
        out = []
        for a, b in pairs:
            ia, ib = self.skel.link_index(a), self.skel.link_index(b)
            ca, ra = self._bound_spheres[a]
            cb, rb = self._bound_spheres[b]
            wa = pos[ia] + geom.rotate_vec(quat[ia], ca)
            wb = pos[ib] + geom.rotate_vec(quat[ib], cb)
            if float(np.linalg.norm(wa - wb)) >= ra + rb:
                continue
            ga, gb = self._collision_geoms[a], self._collision_geoms[b]
            if _geoms_collide(ga, pos[ia], quat[ia], gb, pos[ib], quat[ib]):
                out.append((a, b))
        return out


def _standing_height(skel: SkeletonModel) -> float:
    pos, quats = skel.fk(np.zeros(3), geom.quat_identity(), np.zeros(skel.dof_count))
    lowest = 0.0
    for i, l in enumerate(skel.links):
        g = l.geometry
        if isinstance(g, Box):
            corners = g.center + np.array(
                [[sx * g.half_extents[0], sy * g.half_extents[1], sz * g.half_extents[2]]
                 for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
            )
            for cpt in corners:
                z = (pos[i] + geom.rotate_vec(quats[i], cpt))[2]
                lowest = min(lowest, z)
        else:
            for end in (g.p0, g.p1):
                z = (pos[i] + geom.rotate_vec(quats[i], np.asarray(end)))[2] - g.radius
                lowest = min(lowest, z)
    return -lowest


# ---------------------------------------------------------------------------
# Collision primitives
# ---------------------------------------------------------------------------


def _segment_segment_distance(p1, q1, p2, q2) -> float:
    """Minimum distance between segments [p1,q1] and [p2,q2] (Ericson 5.1.9)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-12
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, min(1.0, max(0.0, f / e))
    else:
        c = float(d1 @ r)
        if e <= eps:
            t, s = 0.0, min(1.0, max(0.0, -c / a))
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(1.0, max(0.0, (b * f - c * e) / denom)) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t, s = 1.0, min(1.0, max(0.0, (b - c) / a))
    closest1 = p1 + s * d1
    closest2 = p2 + t * d2
    return float(np.linalg.norm(closest1 - closest2))


def _point_box_signed(px, py, pz, hx, hy, hz) -> float:
    """Signed distance from a point to a box surface in the box frame."""
    dx = abs(px) - hx
    dy = abs(py) - hy
    dz = abs(pz) - hz
    ox = dx if dx > 0.0 else 0.0
    oy = dy if dy > 0.0 else 0.0
    oz = dz if dz > 0.0 else 0.0
    out = math.sqrt(ox * ox + oy * oy + oz * oz)
    if out > 0.0:
        return out
    return max(dx, dy, dz)  # negative: depth inside


def _segment_box_collides(p0, p1, half, radius) -> bool:
    """Strict capsule-box overlap in the box frame via branch-and-bound.

    The point-box distance is 1-Lipschitz along the segment, so an interval
    whose endpoint minimum minus half its arc length stays at or above the
    radius cannot contain a closer point and is pruned.
    """
    hx, hy, hz = float(half[0]), float(half[1]), float(half[2])
    sx, sy, sz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    seg_len = math.sqrt(sx * sx + sy * sy + sz * sz)

    def f(t: float) -> float:
        return _point_box_signed(p0[0] + t * sx, p0[1] + t * sy, p0[2] + t * sz,
                                 hx, hy, hz)

    fa, fb = f(0.0), f(1.0)
    if min(fa, fb) < radius:
        return True
    stack = [(0.0, 1.0, fa, fb)]
    while stack:
        a, b, va, vb = stack.pop()
        if min(va, vb) - seg_len * (b - a) * 0.5 >= radius:
            continue
        if (b - a) * seg_len < 1e-7:
            continue
        m = 0.5 * (a + b)
        vm = f(m)
        if vm < radius:
            return True
        stack.append((a, m, va, vm))
        stack.append((m, b, vm, vb))
    return False


def _box_corners(center, half):
    return center + np.array(
        [[sx * half[0], sy * half[1], sz * half[2]]
         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )


def _obb_overlap(c1, R1, h1, c2, R2, h2) -> bool:
    """Separating-axis test for two oriented boxes (strict overlap)."""
    axes = [R1[:, i] for i in range(3)] + [R2[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            cx = np.cross(R1[:, i], R2[:, j])
            n = np.linalg.norm(cx)
            if n > 1e-9:
                axes.append(cx / n)
    d = c2 - c1
    for ax in axes:
        r1 = sum(h1[i] * abs(float(ax @ R1[:, i])) for i in range(3))
        r2 = sum(h2[i] * abs(float(ax @ R2[:, i])) for i in range(3))
        if abs(float(ax @ d)) >= r1 + r2 - 1e-12:
            return False
    return True


def _geoms_collide(ga, pa, qa, gb, pb, qb) -> bool:
    """Strict interpenetration between two world-posed link geometries."""
    if isinstance(ga, Box) and isinstance(gb, Capsule):
        return _geoms_collide(gb, pb, qb, ga, pa, qa)
    if isinstance(ga, Capsule) and isinstance(gb, Capsule):
        a0 = pa + geom.rotate_vec(qa, ga.p0)
        a1 = pa + geom.rotate_vec(qa, ga.p1)
        b0 = pb + geom.rotate_vec(qb, gb.p0)
        b1 = pb + geom.rotate_vec(qb, gb.p1)
        return _segment_segment_distance(a0, a1, b0, b1) - (ga.radius + gb.radius) < 0
    if isinstance(ga, Capsule) and isinstance(gb, Box):
        Rb = geom.quat_to_mat(qb)
        box_center = pb + Rb @ gb.center
        a0 = Rb.T @ (pa + geom.rotate_vec(qa, ga.p0) - box_center)
        a1 = Rb.T @ (pa + geom.rotate_vec(qa, ga.p1) - box_center)
        return _segment_box_collides(a0, a1, np.asarray(gb.half_extents), ga.radius)
    # box-box
    Ra, Rb = geom.quat_to_mat(qa), geom.quat_to_mat(qb)
    ca = pa + Ra @ ga.center
    cb = pb + Rb @ gb.center
    return _obb_overlap(ca, Ra, np.asarray(ga.half_extents),
                        cb, Rb, np.asarray(gb.half_extents))
