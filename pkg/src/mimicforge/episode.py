"""One imitation episode: simulator, actuator integrator, reward, termination.

The runner advances one policy tick at a time: the raw network action is
squashed, integrated into servo targets at the control rate, the simulator
advances the nested sim ticks, and the reward compares the new pose against
the clip. Each worker owns its runner; nothing here is shared across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom, reward as rw
from .control import (
    ActuatorState,
    ControlConfig,
    ControlMode,
    ObservationSpec,
    build_observation,
    encode_goal_frame,
    goal_window,
    integrate_action,
    squash_action,
)
from .sim import SimState, SimulationDiverged, Simulator
from .skeleton import BoundLinkMap, MotionClip


@dataclass
class TickInfo:
    reason: str  # none | fall | divergence | sim_error | clip_end | budget
    frame_index: int
    dists: np.ndarray
    dist_sum: float
    below_threshold: bool
    breakdown: rw.RewardBreakdown
    state: SimState | None = None  # snapshot, only for start-pose candidates


class EpisodeRunner:
    def __init__(self, sim: Simulator, clip: MotionClip, link_map: BoundLinkMap,
                 ctrl: ControlConfig, weights: rw.RewardWeights,
                 obs_spec: ObservationSpec, rng: np.random.Generator,
                 episode_seconds: float | None = None,
                 start_pose_threshold: float = 0.5,
                 sensor_noise: bool = True):
        self.sim = sim
        self.clip = clip
        self.map = link_map
        self.ctrl = ctrl
        self.weights = weights
        self.obs_spec = obs_spec
        self.rng = rng
        self.sensor_noise = sensor_noise
        self.episode_seconds = (
            episode_seconds if episode_seconds is not None else clip.duration
        )
        self.start_pose_threshold = start_pose_threshold
        self.policy_dt = 1.0 / sim.params.policy_rate
        self.ctrl_dt = 1.0 / sim.params.control_rate
        self.limits_lo, self.limits_hi = sim.skel.joint_limits()
        self._foot_idx = [sim.skel.link_index(f) for f in sim.skel.feet]
        self._map_links = list(link_map.agent_links)
        self._map_agent_idx = link_map.agent_index
        self._map_actor_idx = link_map.actor_index

        self.state: SimState | None = None
        self.actuator: ActuatorState | None = None
        self.bias = None
        self.clip_time = 0.0
        self.elapsed = 0.0
        self.done = False

    # -- lifecycle -----------------------------------------------------------

    def reset(self, start_frame: int = 0,
              start_state: SimState | None = None) -> np.ndarray:
        """Start an episode at a clip frame; returns the first raw observation."""
        if start_state is None:
            self.state = self.sim.default_state()
        else:
            self.state = start_state.copy()
            self.state.backlash_anchor = self.state.joint_q.copy()
            self.state.time = 0.0
        self.actuator = ActuatorState.initial(self.state.joint_q, self.sim.n_dof)
        self.bias = (self.sim.sample_sensor_bias(self.rng) if self.sensor_noise
                     else self.sim.zero_bias())
        self.clip_time = start_frame / self.clip.frame_rate
        self.elapsed = 0.0
        self.done = False
        self._prev_dists, self._prev_veldists = self._distances()
        self._read_sensors()
        return self._observation()

    # -- internals -----------------------------------------------------------

    def _target_frame(self):
        return self.clip.sample(self.clip_time)

    def _distances(self) -> tuple[np.ndarray, np.ndarray]:
        frame = self._target_frame()
        n = len(self.map)
        dists = np.empty(n)
        veldists = np.empty(n)
        for i in range(n):
            q_a = self.state.link_quat[self._map_agent_idx[i]]
            q_t = frame.quats[self._map_actor_idx[i]]
            if self.map.metrics[i] == "quat":
                dists[i] = geom.quat_dist(q_a, q_t, variant=self.map.quat_variant)
            else:
                e_a = geom.rotate_vec(q_a, self.map.agent_axes[i])
                e_t = geom.rotate_vec(q_t, self.map.actor_axes[i])
                dists[i] = geom.axis_dist(e_a, e_t)
            w_a = self.state.link_omega[self._map_agent_idx[i]]
            w_t = frame.omegas[self._map_actor_idx[i]]
            veldists[i] = float(np.linalg.norm(w_a - w_t))
        return dists, veldists

    def _read_sensors(self):
        self._last_sensors = self.sim.read_sensors(
            self.state, self.rng if self.sensor_noise else None, self.bias)
        return self._last_sensors

    def _observation(self) -> np.ndarray:
        sensors = self._last_sensors
        frames = goal_window(self.clip, self.clip_time, self.ctrl.goal_horizon,
                             self.policy_dt)
        torso = self.state.base_quat
        goals = [encode_goal_frame(f, self.map, torso, self.ctrl.goal_frame)
                 for f in frames]
        return build_observation(sensors, self.actuator, goals, self.obs_spec,
                                 torso, gravity=self.sim.params.gravity)

    # -- stepping --------------------------------------------------------------

    def step(self, raw_action) -> tuple[np.ndarray, float, bool, TickInfo]:
        """Advance one policy tick; returns (raw obs, reward, done, info)."""
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        raw_action = np.asarray(raw_action, float)
        action = squash_action(raw_action, self.ctrl, self.limits_lo, self.limits_hi)
        n_ctrl = self.sim.params.control_per_policy
        targets = np.empty((n_ctrl, self.sim.n_dof))
        for c in range(n_ctrl):
            targets[c] = integrate_action(action, self.actuator, self.ctrl_dt,
                                          self.ctrl.mode)
        sim_error = False
        try:
            self.state = self.sim.run_control_ticks(self.state, targets)
        except SimulationDiverged as e:
            self.state = e.last_valid_state
            sim_error = True
        self.clip_time += self.policy_dt
        self.elapsed += self.policy_dt
        self.actuator.last_action = raw_action.copy()

        frame = self._target_frame()
        dists, veldists = self._distances()
        r_link = rw.link_reward(self._prev_dists, dists, self._prev_veldists,
                                veldists, self.weights)
        self._prev_dists, self._prev_veldists = dists, veldists

        pairs = self.sim.check_self_collision(self.state)
        r_col = rw.collision_penalty(pairs, self.weights.collision_penalty)

        sensors = self._read_sensors()
        foot_press = self.sim.foot_pressure_sums(sensors)
        foot_quats = [self.state.link_quat[i] for i in self._foot_idx]
        r_ground = rw.ground_reward(foot_press, frame.ground, foot_quats,
                                    self.weights)

        r_limit = rw.limit_penalty(self.actuator.integrated_positions,
                                   self.limits_lo, self.limits_hi,
                                   self.weights.limit_gain,
                                   self.weights.limit_offset)

        breakdown = rw.total_reward(r_link, r_col, r_ground, r_limit)
        total = breakdown.r_total

        fallen = self.sim.check_fall(self.state)
        terminate, reason = rw.should_terminate(fallen, dists, self.weights)
        if sim_error:
            terminate, reason = True, "sim_error"
        if reason == "fall":
            total -= self.weights.fall_penalty
        truncated = False
        if not terminate:
            if not self.clip.loopable and self.clip_time >= self.clip.duration:
                truncated, reason = True, "clip_end"
            elif self.elapsed >= self.episode_seconds - 1e-9:
                truncated, reason = True, "clip_end"
        self.done = terminate or truncated

        dist_sum = float(dists.sum())
        below = bool(dists.size and float(dists.max()) < self.start_pose_threshold)
        info = TickInfo(
            reason=reason,
            frame_index=self.clip.frame_index_at(self.clip_time),
            dists=dists,
            dist_sum=dist_sum,
            below_threshold=below,
            breakdown=breakdown,
            state=self.state.copy() if (below and not self.done) else None,
        )
        obs = self._observation()
        return obs, float(total), self.done, info


TERMINAL_REASONS = frozenset({"fall", "divergence", "sim_error"})
