"""Rotation and vector math shared by the simulator, retargeting, and rewards.

Quaternions are float64 arrays ``[w, x, y, z]``; vectors are float64
``[x, y, z]``. Angles are radians. Everything here is pure value math and
safe to call from any thread.
"""

from __future__ import annotations

import math

import numpy as np

# Below this rotation angle, axis-angle extraction returns the fixed axis
# (0, 0, 1) to keep observation features continuous near identity.
ANGLE_EPS = 1e-8

_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
_FALLBACK_AXIS = np.array([0.0, 0.0, 1.0])


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite components: {a!r}")


def quat_identity() -> np.ndarray:
    return _IDENTITY.copy()


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _check_finite("quaternion", q)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = math.sqrt(float(axis @ axis))
    if n < 1e-12:
        raise ValueError("rotation axis must be non-zero")
    h = 0.5 * float(angle)
    s = math.sin(h) / n
    return np.array([math.cos(h), s * axis[0], s * axis[1], s * axis[2]])


def quat_to_axis_angle(q) -> tuple[np.ndarray, float]:
    """Extract (unit axis, angle in [0, pi]) from a normalized quaternion.

    Near-identity rotations return the fixed axis (0, 0, 1) and angle 0;
    rotation sign is canonicalized into the axis.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:  # pick the hemisphere with angle <= pi
        q = -q
    w = min(1.0, max(-1.0, float(q[0])))
    angle = 2.0 * math.acos(w)
    s = math.sqrt(max(0.0, 1.0 - w * w))
    if s < ANGLE_EPS or angle < ANGLE_EPS:
        return _FALLBACK_AXIS.copy(), 0.0
    return q[1:4] / s, angle


def rotate_vec(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q via the sandwich product q v q*."""
    w, x, y, z = q
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    # Expanded form of q * (0, v) * conj(q); avoids two full quat products.
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


def quat_to_mat(q) -> np.ndarray:
    """3x3 rotation matrix equivalent of quaternion q."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_delta(q_a, q_t) -> np.ndarray:
    """Relative rotation conj(q_a) ⊗ q_t, normalized."""
    q_a = np.asarray(q_a, dtype=float)
    q_t = np.asarray(q_t, dtype=float)
    _check_finite("q_a", q_a)
    _check_finite("q_t", q_t)
    return quat_normalize(quat_mul(quat_conj(q_a), q_t))


def quat_dist(q_a, q_t, variant: str = "squared_sum") -> float:
    """Orientation distance between two links.

    The default ``squared_sum`` variant is 2*asin(dx^2 + dy^2 + dz^2) over the
    vector part of the relative quaternion; ``vector_norm`` uses the vector
    norm instead of the squared sum. The asin argument is clamped to [0, 1]
    to guard rounding. Both variants are symmetric in their arguments and
    insensitive to quaternion double cover.
    """
    d = quat_delta(q_a, q_t)
    s = float(d[1] * d[1] + d[2] * d[2] + d[3] * d[3])
    if variant == "vector_norm":
        s = math.sqrt(s)
    elif variant != "squared_sum":
        raise ValueError(f"unknown quat_dist variant: {variant!r}")
    return 2.0 * math.asin(min(1.0, max(0.0, s)))


def axis_dist(e_a, e_t) -> float:
    """Angle between two unit axes, acos of the clamped dot product."""
    e_a = np.asarray(e_a, dtype=float)
    e_t = np.asarray(e_t, dtype=float)
    _check_finite("e_a", e_a)
    _check_finite("e_t", e_t)
    na = math.sqrt(float(e_a @ e_a))
    nt = math.sqrt(float(e_t @ e_t))
    if na < 1e-12 or nt < 1e-12:
        raise ValueError("axis_dist requires non-zero axes")
    dot = float(e_a @ e_t) / (na * nt)
    return math.acos(min(1.0, max(-1.0, dot)))


def slerp(q0, q1, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(1.0, dot)
    theta = math.acos(dot)
    if theta < 1e-9:
        return quat_normalize(q0 + t * (q1 - q0))
    s = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / s) * q0 + (math.sin(t * theta) / s) * q1


def yaw_quat(q) -> np.ndarray:
    """Heading-only part of q: the rotation about world z with the same yaw."""
    fwd = rotate_vec(q, np.array([1.0, 0.0, 0.0]))
    yaw = math.atan2(fwd[1], fwd[0])
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def quat_from_omega(omega, dt: float) -> np.ndarray:
    """Incremental rotation exp(omega * dt) for a world-frame angular velocity."""
    omega = np.asarray(omega, dtype=float)
    angle = math.sqrt(float(omega @ omega)) * dt
    if angle < 1e-12:
        return quat_identity()
    return quat_from_axis_angle(omega, angle)


def rotation_vector(q) -> np.ndarray:
    """Axis-angle as a single 3-vector axis*angle (zero near identity)."""
    axis, angle = quat_to_axis_angle(q)
    return axis * angle
