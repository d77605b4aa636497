"""Action post-processing and observation assembly.

The default control scheme treats network outputs as joint position
derivatives and integrates them into servo targets at the control rate; the
ablation variants (direct position targets, double integration) live behind
the same interface. Observations are fixed-order feature blocks described by
an ``ObservationSpec`` whose hash gates checkpoint compatibility.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geom
from .skeleton import BoundLinkMap, ClipFrame, MotionClip


class ControlMode(Enum):
    INTEGRATE_ONCE = "integrate_once"
    DIRECT_POSITION = "direct_position"
    INTEGRATE_TWICE = "integrate_twice"
    RAW_ACCELERATION_NOTE = "raw_acceleration_note"  # reserved, not runnable


@dataclass
class ControlConfig:
    mode: ControlMode = ControlMode.INTEGRATE_ONCE
    max_joint_speed: float = 8.0  # rad/s, tanh-squashed network output scale
    max_joint_accel: float = 40.0  # rad/s^2, for the double-integration variant
    goal_horizon: int = 2  # future clip frames in the observation
    goal_frame: str = "yaw_relative"  # or "world"


@dataclass
class ActuatorState:
    """Integrator state between the network output and the servo targets."""

    integrated_positions: np.ndarray
    integrated_velocities: np.ndarray
    last_action: np.ndarray  # raw network output at the previous policy tick

    @staticmethod
    def initial(joint_q: np.ndarray, action_dim: int) -> "ActuatorState":
        return ActuatorState(
            integrated_positions=np.asarray(joint_q, float).copy(),
            integrated_velocities=np.zeros(len(joint_q)),
            last_action=np.zeros(action_dim),
        )


def squash_action(raw, cfg: ControlConfig, limits_lo=None, limits_hi=None) -> np.ndarray:
    """Map raw network output to physical action units for the active mode."""
    raw = np.asarray(raw, float)
    if cfg.mode is ControlMode.INTEGRATE_ONCE:
        return np.tanh(raw) * cfg.max_joint_speed
    if cfg.mode is ControlMode.DIRECT_POSITION:
        mid = 0.5 * (limits_lo + limits_hi)
        half = 0.5 * (limits_hi - limits_lo)
        return mid + np.tanh(raw) * half
    if cfg.mode is ControlMode.INTEGRATE_TWICE:
        return np.tanh(raw) * cfg.max_joint_accel
    raise ValueError(f"control mode {cfg.mode} is reserved and cannot be run")


def integrate_action(action, actuator: ActuatorState, dt: float,
                     mode: ControlMode) -> np.ndarray:
    """One control tick of the actuator integrator; returns servo targets.

    Targets are deliberately not clamped to the joint limits: out-of-range
    commands are penalized by the reward and resisted physically by the
    simulator's hard stops.
    """
    action = np.asarray(action, float)
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite values")
    if action.shape != actuator.integrated_positions.shape:
        raise ValueError(
            f"action shape {action.shape} does not match actuator "
            f"{actuator.integrated_positions.shape} for mode {mode.value}"
        )
    if mode is ControlMode.INTEGRATE_ONCE:
        actuator.integrated_positions = actuator.integrated_positions + action * dt
    elif mode is ControlMode.DIRECT_POSITION:
        actuator.integrated_positions = action.copy()
    elif mode is ControlMode.INTEGRATE_TWICE:
        actuator.integrated_velocities = actuator.integrated_velocities + action * dt
        actuator.integrated_positions = (
            actuator.integrated_positions + actuator.integrated_velocities * dt
        )
    else:
        raise ValueError(f"control mode {mode} is reserved and cannot be run")
    return actuator.integrated_positions.copy()


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationSpec:
    """Ordered feature blocks; the layout is part of checkpoint compatibility."""

    blocks: tuple[tuple[str, int], ...]
    goal_horizon: int
    goal_frame: str
    mapped_links: tuple[str, ...]

    @property
    def width(self) -> int:
        return sum(w for _, w in self.blocks)

    @property
    def goal_width(self) -> int:
        return dict(self.blocks)["goals"]

    def block_slice(self, name: str) -> slice:
        start = 0
        for n, w in self.blocks:
            if n == name:
                return slice(start, start + w)
            start += w
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "goal_horizon": self.goal_horizon,
            "goal_frame": self.goal_frame,
            "mapped_links": list(self.mapped_links),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @staticmethod
    def from_dict(d: dict) -> "ObservationSpec":
        return ObservationSpec(
            blocks=tuple((n, int(w)) for n, w in d["blocks"]),
            goal_horizon=int(d["goal_horizon"]),
            goal_frame=d["goal_frame"],
            mapped_links=tuple(d["mapped_links"]),
        )


def make_observation_spec(n_joints: int, n_action: int, n_pads: int,
                          link_map: BoundLinkMap, cfg: ControlConfig) -> ObservationSpec:
    K = cfg.goal_horizon
    n_map = len(link_map)
    return ObservationSpec(
        blocks=(
            ("goals", K * n_map * 3),
            ("joint_angles", n_joints),
            ("prev_action", n_action),
            ("prev_actuator", n_joints),
            ("gravity_local", 3),
            ("accel", 3),
            ("gyro", 3),
            ("foot_pressure", n_pads),
        ),
        goal_horizon=K,
        goal_frame=cfg.goal_frame,
        mapped_links=link_map.agent_links,
    )


def encode_goal_frame(frame: ClipFrame, link_map: BoundLinkMap,
                      torso_quat, goal_frame: str) -> np.ndarray:
    """Axis-angle target orientations for one future frame, (n_map * 3,).

    ``yaw_relative`` expresses targets relative to the agent's current torso
    heading so the policy is invariant to where in the world it walks.
    """
    if goal_frame == "yaw_relative":
        ref = geom.quat_conj(geom.yaw_quat(torso_quat))
    elif goal_frame == "world":
        ref = geom.quat_identity()
    else:
        raise ValueError(f"unknown goal frame {goal_frame!r}")
    out = np.zeros(len(link_map) * 3)
    for i in range(len(link_map)):
        q_t = frame.quats[link_map.actor_index[i]]
        out[3 * i: 3 * i + 3] = geom.rotation_vector(geom.quat_mul(ref, q_t))
    return out


def goal_window(clip: MotionClip, t: float, K: int, policy_dt: float) -> list[ClipFrame]:
    """The next K target frames at policy-tick spacing from time t.

    Orientations are interpolated with shortest-arc blends; loopable clips
    wrap, others clamp to their final frame.
    """
    return [clip.sample(t + i * policy_dt) for i in range(1, K + 1)]


def build_observation(sensors, actuator: ActuatorState, goals, spec: ObservationSpec,
                      torso_quat, gravity: float = 9.81) -> np.ndarray:
    """Concatenate the feature blocks in spec order into one raw vector.

    ``goals`` holds one encoded goal array per horizon step. The local gravity
    block uses the simulator's true torso orientation, not the noisy IMU.
    """
    goal_block = np.concatenate([np.asarray(g, float).ravel() for g in goals]) \
        if goals else np.zeros(0)
    gravity_local = geom.rotate_vec(geom.quat_conj(torso_quat),
                                    np.array([0.0, 0.0, -gravity]))
    values = {
        "goals": goal_block,
        "joint_angles": np.asarray(sensors.joint_angles, float),
        "prev_action": np.asarray(actuator.last_action, float),
        "prev_actuator": np.asarray(actuator.integrated_positions, float),
        "gravity_local": gravity_local,
        "accel": np.asarray(sensors.accel, float),
        "gyro": np.asarray(sensors.gyro, float),
        "foot_pressure": np.asarray(sensors.foot_pressure, float),
    }
    parts = []
    for name, width in spec.blocks:
        v = values[name]
        if v.shape != (width,):
            raise ValueError(
                f"observation block {name!r}: expected width {width}, got {v.shape}"
            )
        parts.append(v)
    return np.concatenate(parts)
