"""Imitation reward terms and early-termination predicates.

The per-tick reward is a sum of four terms: differential link-tracking
progress, a self-collision penalty, a foot-ground interaction reward, and a
joint-limit penalty on the commanded targets. All functions here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geom


@dataclass(frozen=True)
class RewardWeights:
    """Constants for the four reward terms and the termination thresholds.

    ``link_weights`` mirrors the link map order. ``velocity_weight`` mixes a
    small amount of angular-velocity progress into the orientation progress.
    """

    link_weights: np.ndarray
    velocity_weight: float = 0.05
    collision_penalty: float = 0.5
    pressure_reward: float = 0.1  # r_P
    pressure_threshold: float = 0.3  # N, per-foot summed pads
    flat_gain: float = 0.5  # K1
    flat_angle: float = 0.3  # K2, rad
    limit_gain: float = 1.0  # k_joint
    limit_offset: float = 0.2  # C_joint
    fall_penalty: float = 10.0
    divergence_threshold: float = 1.2  # rad, any mapped link distance

    def __post_init__(self):
        object.__setattr__(self, "link_weights",
                           np.asarray(self.link_weights, float))
        if np.any(self.link_weights <= 0):
            raise ValueError("link weights must be > 0")
        if self.velocity_weight < 0:
            raise ValueError("velocity_weight must be >= 0")
        if self.velocity_weight > 0.1 * float(self.link_weights.max()):
            raise ValueError(
                "velocity_weight should stay small: <= 0.1 * max link weight"
            )
        for name in ("collision_penalty", "pressure_reward", "limit_gain",
                     "limit_offset", "fall_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-tick reward decomposition; total = link - collision + ground - limit."""

    r_link: float
    r_collision: float
    r_ground: float
    r_limit: float

    @property
    def r_total(self) -> float:
        return self.r_link - self.r_collision + self.r_ground - self.r_limit


def link_reward(dist_prev, dist_now, veldist_prev, veldist_now,
                weights: RewardWeights) -> float:
    """Weighted tracking progress: positive when distances shrink this tick."""
    d0 = np.asarray(dist_prev, float)
    d1 = np.asarray(dist_now, float)
    v0 = np.asarray(veldist_prev, float)
    v1 = np.asarray(veldist_now, float)
    w = weights.link_weights
    if not (d0.shape == d1.shape == v0.shape == v1.shape == w.shape):
        raise ValueError(
            f"distance lists must align with the link map: "
            f"{d0.shape} vs {d1.shape} vs {v0.shape} vs {v1.shape} vs {w.shape}"
        )
    return float(np.sum(w * (d0 - d1)) + weights.velocity_weight * np.sum(v0 - v1))


def collision_penalty(colliding_pairs, c_col: float) -> float:
    """Constant penalty per labeled pair currently in contact."""
    return c_col * len(colliding_pairs)


def pressure_reward_term(ground_flag: bool, pressure: float,
                         weights: RewardWeights) -> float:
    """Four-case pressure agreement term for one foot."""
    if ground_flag:
        return weights.pressure_reward if pressure > weights.pressure_threshold else 0.0
    return weights.pressure_reward if pressure < weights.pressure_threshold else 0.0


def flatness_term(foot_quat, weights: RewardWeights) -> float:
    """Reward for keeping the foot sole parallel to the ground."""
    up = geom.rotate_vec(foot_quat, np.array([0.0, 0.0, 1.0]))
    alpha = math.acos(min(1.0, max(-1.0, float(up[2]))))
    return weights.flat_gain * (weights.flat_angle - alpha)


def ground_reward(foot_pressures, clip_ground_flags, foot_orientations,
                  weights: RewardWeights) -> float:
    """Foot-ground interaction reward summed over feet.

    Each foot earns the pressure-agreement term, plus the flatness term while
    the clip marks it on the ground.
    """
    total = 0.0
    for pressure, flag, quat in zip(foot_pressures, clip_ground_flags,
                                    foot_orientations):
        total += pressure_reward_term(bool(flag), float(pressure), weights)
        if flag:
            total += flatness_term(quat, weights)
    return total


def limit_penalty(targets, limits_lo, limits_hi, k_joint: float,
                  C_joint: float) -> float:
    """Penalty for commanded joint targets strictly beyond their limits.

    Inside the limits the penalty is exactly zero; crossing a limit jumps by
    ``k_joint * C_joint`` and then grows linearly with the overshoot.
    """
    targets = np.asarray(targets, float)
    lo = np.asarray(limits_lo, float)
    hi = np.asarray(limits_hi, float)
    total = 0.0
    for a, l, h in zip(targets, lo, hi):
        if a > h:
            total += k_joint * (C_joint + (a - h))
        elif a < l:
            total += k_joint * (C_joint + (l - a))
    return total


def total_reward(r_link: float, r_collision: float, r_ground: float,
                 r_limit: float) -> RewardBreakdown:
    return RewardBreakdown(r_link=r_link, r_collision=r_collision,
                           r_ground=r_ground, r_limit=r_limit)


def should_terminate(fallen: bool, dists, weights: RewardWeights) -> tuple[bool, str]:
    """Early-termination predicate: (terminate, reason).

    Reasons: ``fall`` when the torso height/tilt check fired, ``divergence``
    when any mapped link distance exceeds the threshold, else ``none``.
    """
    if fallen:
        return True, "fall"
    d = np.asarray(dists, float)
    if d.size and float(d.max()) > weights.divergence_threshold:
        return True, "divergence"
    return False, "none"
