"""PPO training loop: rollouts, GAE, clipped-surrogate updates, start poses.

Rollout collection fans out over W logical workers whose RNG streams derive
from (seed, iteration, worker) seed sequences, so results are bit-identical
whether the workers run inline or in a process pool. Optimization is a
single writer; the metrics CSV is append-only.
"""

from __future__ import annotations

import csv
import logging
import math
import multiprocessing
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import save_checkpoint
from .control import ControlConfig, make_observation_spec
from .episode import TERMINAL_REASONS, EpisodeRunner
from .reward import RewardWeights
from .sim import SimParams, SimState, Simulator
from .skeleton import LinkMap, MotionClip, SkeletonModel, default_link_map

log = logging.getLogger(__name__)

TERMINATION_REASONS = ("none", "fall", "divergence", "sim_error", "clip_end")

METRICS_COLUMNS = (
    "iteration", "return", "train_return_mean", "policy_loss", "value_loss",
    "kl", "clip_fraction", "mean_abs_action", "policy_mean_std",
    "mean_episode_s", "eval_survival_s", "term_none", "term_fall",
    "term_divergence", "term_sim_error", "term_clip_end", "steps", "episodes",
    "start_pose_count",
)

# Stream tags for per-iteration RNG derivation.
_STREAM_RANDOMIZE = 0
_STREAM_COLLECT = 1
_STREAM_UPDATE = 2
_STREAM_EVAL = 3


@dataclass(frozen=True)
class RandomizationConfig:
    """Domain randomization toggles and bounds, resampled per iteration."""

    backlash: bool = True
    friction: bool = True
    youngs: bool = True
    backlash_max_deg: float = 5.0
    backlash_ramp_iters: int = 100
    friction_range: tuple[float, float] = (0.05, 0.5)
    youngs_range: tuple[float, float] = (3.0e3, 3.0e5)
    nominal_backlash_deg: float = 0.0
    nominal_friction: float = 0.25
    nominal_youngs: float = 3.0e4
    per_joint_backlash: bool = True


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    steps_per_iter: int = 4096
    workers: int = 4
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    policy_lr: float = 3.0e-4
    value_lr: float = 1.0e-3
    minibatch: int = 256
    epochs: int = 4
    explore_prob: float = 0.3
    rsi_prob: float = 0.5
    start_pose_threshold: float = 0.5
    episode_seconds: float | None = None
    checkpoint_interval: int = 25
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if not 0 <= self.lam <= 1:
            raise ValueError("lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        for name in ("explore_prob", "rsi_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class TrainSetup:
    """Everything a training run needs besides the output directory."""

    agent: SkeletonModel
    actor: SkeletonModel
    clip: MotionClip
    link_map: LinkMap
    sim: SimParams
    control: ControlConfig
    randomization: RandomizationConfig
    train: TrainConfig
    reward: dict = field(default_factory=dict)  # RewardWeights overrides
    reward_mode: str = "progress"  # or "error": r_link = -sum(w d)
    quat_variant: str = "squared_sum"

    def bound_map(self):
        return self.link_map.bind(self.agent, self.actor, self.quat_variant)

    def weights(self):
        bound = self.bound_map()
        return RewardWeights(link_weights=bound.weights, **self.reward)


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool
    explored: bool
    info: str


@dataclass
class RolloutBatch:
    """Flat transition arrays plus per-episode structure."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    explored: np.ndarray
    episode_lengths: list[int]
    episode_reasons: list[str]
    episode_returns: list[float]
    episode_seconds: list[float]
    bootstraps: list[float]
    raw_stats: nn.RunningNorm
    start_candidates: list[tuple[int, float, SimState]]

    @property
    def size(self) -> int:
        return len(self.rewards)

    def episode_slices(self) -> list[slice]:
        out, start = [], 0
        for n in self.episode_lengths:
            out.append(slice(start, start + n))
            start += n
        return out

    def transitions(self) -> list[Transition]:
        reasons = []
        for n, reason in zip(self.episode_lengths, self.episode_reasons):
            reasons.extend(["none"] * (n - 1) + [reason])
        return [
            Transition(self.obs[i], self.actions[i], float(self.log_probs[i]),
                       float(self.rewards[i]), float(self.values[i]),
                       bool(self.dones[i]), bool(self.explored[i]), reasons[i])
            for i in range(self.size)
        ]

    @staticmethod
    def concatenate(parts: list["RolloutBatch"]) -> "RolloutBatch":
        raw = nn.RunningNorm.zeros(parts[0].raw_stats.mean.shape[0])
        for p in parts:
            raw.merge(p.raw_stats)
        return RolloutBatch(
            obs=np.concatenate([p.obs for p in parts]),
            actions=np.concatenate([p.actions for p in parts]),
            log_probs=np.concatenate([p.log_probs for p in parts]),
            rewards=np.concatenate([p.rewards for p in parts]),
            values=np.concatenate([p.values for p in parts]),
            dones=np.concatenate([p.dones for p in parts]),
            explored=np.concatenate([p.explored for p in parts]),
            episode_lengths=sum((p.episode_lengths for p in parts), []),
            episode_reasons=sum((p.episode_reasons for p in parts), []),
            episode_returns=sum((p.episode_returns for p in parts), []),
            episode_seconds=sum((p.episode_seconds for p in parts), []),
            bootstraps=sum((p.bootstraps for p in parts), []),
            raw_stats=raw,
            start_candidates=sum((p.start_candidates for p in parts), []),
        )


@dataclass
class PolicyBundle:
    """Snapshot of everything needed to act: nets, params, normalizer."""

    spec: nn.MlpSpec
    policy: dict
    value: dict
    normalizer: nn.RunningNorm

    def nets(self):
        return nn.PolicyNet(self.spec), nn.ValueNet(self.spec)


# ---------------------------------------------------------------------------
# Start-pose buffer (reference state initialization)
# ---------------------------------------------------------------------------


@dataclass
class StartPoseBuffer:
    """Best-seen start pose per clip frame, keyed by frame index."""

    entries: dict[int, tuple[float, SimState]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def consider(self, frame: int, dist_sum: float, state: SimState) -> bool:
        cur = self.entries.get(frame)
        if cur is None or dist_sum < cur[0]:
            self.entries[frame] = (dist_sum, state)
            return True
        return False

    def sample(self, rng: np.random.Generator) -> tuple[int, SimState]:
        frames = sorted(self.entries)
        f = frames[int(rng.integers(len(frames)))]
        return f, self.entries[f][1]

    def sums(self) -> dict[int, float]:
        return {f: s for f, (s, _) in self.entries.items()}


def update_start_poses(buffer: StartPoseBuffer,
                       candidates: list[tuple[int, float, SimState]]) -> StartPoseBuffer:
    """Fold per-tick candidates (frame, distance sum, state) into the buffer."""
    for frame, dist_sum, state in candidates:
        buffer.consider(frame, dist_sum, state)
    return buffer


def pick_start(buffer: StartPoseBuffer, clip: MotionClip, rsi_prob: float,
               rng: np.random.Generator) -> tuple[int, SimState | None]:
    """Reference-state initialization: stored pose with probability rsi_prob,
    else the clip start with the default standing state."""
    if len(buffer) and rng.random() < rsi_prob:
        return buffer.sample(rng)
    return 0, None


# ---------------------------------------------------------------------------
# Domain randomization
# ---------------------------------------------------------------------------


def randomize_env(base: SimParams, rcfg: RandomizationConfig, iteration: int,
                  rng: np.random.Generator, n_joints: int) -> SimParams:
    """Per-iteration environment draw per the randomization schedule.

    Backlash is uniform on [0, ramp(iteration)] with the upper bound rising
    linearly to the configured maximum; friction is uniform; the surface
    modulus is log-uniform because its bounds span two decades. Disabled
    parameters pin to their nominal values.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if rcfg.backlash:
        ramp = min(1.0, iteration / max(1, rcfg.backlash_ramp_iters))
        b_max = math.radians(rcfg.backlash_max_deg) * ramp
        size = n_joints if rcfg.per_joint_backlash else None
        backlash = rng.uniform(0.0, b_max, size=size) if b_max > 0 else (
            np.zeros(n_joints) if size else 0.0)
    else:
        backlash = math.radians(rcfg.nominal_backlash_deg)
    if rcfg.friction:
        friction = float(rng.uniform(*rcfg.friction_range))
    else:
        friction = rcfg.nominal_friction
    if rcfg.youngs:
        lo, hi = rcfg.youngs_range
        youngs = float(np.exp(rng.uniform(math.log(lo), math.log(hi))))
    else:
        youngs = rcfg.nominal_youngs
    return replace(base, backlash_halfwidth=backlash, friction_coef=friction,
                   youngs_modulus=youngs)


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap: float = 0.0):
    """Backward GAE recursion for one episode.

    ``dones`` may only flag the final step (episode boundary). The value of
    the state after that step is ``bootstrap``: zero for hard terminations,
    the critic's estimate for truncations. Returns (advantages, returns)
    with returns = advantages + values.
    """
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, bool)
    T = len(rewards)
    if len(values) != T or len(dones) != T:
        raise ValueError("rewards, values, and dones must have equal length")
    if T and dones[:-1].any():
        raise ValueError("interior done flags are not allowed within an episode")
    adv = np.zeros(T)
    next_value = float(bootstrap)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# Rollout collection
# ---------------------------------------------------------------------------


def collect_rollouts(bundle: PolicyBundle, env_factory, cfg: TrainConfig,
                     seed_seq: np.random.SeedSequence, steps: int,
                     start_buffer: StartPoseBuffer | None = None) -> RolloutBatch:
    """Run episodes until the step budget, acting with epsilon-gated exploration.

    Each policy tick samples the Gaussian with probability ``explore_prob``
    and otherwise executes the mean; the explored flag records which. The
    normalizer snapshot stays frozen; raw-observation statistics are returned
    for a deterministic post-collection merge.
    """
    policy_net, value_net = bundle.nets()
    std = np.exp(bundle.policy["log_std"])
    buffer = start_buffer if start_buffer is not None else StartPoseBuffer()
    raw_stats = nn.RunningNorm.zeros(bundle.spec.obs_dim)

    obs_l, act_l, logp_l, rew_l, val_l, done_l, exp_l = [], [], [], [], [], [], []
    ep_lengths, ep_reasons, ep_returns, ep_seconds, bootstraps = [], [], [], [], []
    best_candidates: dict[int, tuple[float, SimState]] = {}

    collected = 0
    ep_index = 0
    while collected < steps:
        ep_seq = np.random.SeedSequence(
            entropy=seed_seq.entropy, spawn_key=seed_seq.spawn_key + (ep_index,))
        ep_rng = np.random.default_rng(ep_seq)
        ep_index += 1
        env = env_factory(ep_rng)
        frame, state = pick_start(buffer, env.clip, cfg.rsi_prob, ep_rng)
        raw_obs = env.reset(frame, state)
        ep_len = 0
        ep_return = 0.0
        reason = "budget"
        bootstrap = 0.0
        while True:
            raw_stats.update(raw_obs[None, :])
            norm_obs = nn.normalize(raw_obs, bundle.normalizer, update=False)
            mean, _, _ = policy_net.mean_std(bundle.policy, norm_obs[None, :])
            mean = mean[0]
            explored = bool(ep_rng.random() < cfg.explore_prob)
            action = nn.sample_action(mean, std, ep_rng) if explored else mean.copy()
            logp = float(nn.log_prob(mean[None, :], std, action[None, :])[0])
            value = float(value_net.value(bundle.value, norm_obs[None, :])[0][0])

            next_raw, reward, done, info = env.step(action)

            obs_l.append(norm_obs)
            act_l.append(action)
            logp_l.append(logp)
            rew_l.append(reward)
            val_l.append(value)
            exp_l.append(explored)
            collected += 1
            ep_len += 1
            ep_return += reward
            if info.state is not None:
                cur = best_candidates.get(info.frame_index)
                if cur is None or info.dist_sum < cur[0]:
                    best_candidates[info.frame_index] = (info.dist_sum, info.state)
            if done or collected >= steps:
                reason = info.reason if done else "budget"
                terminal = reason in TERMINAL_REASONS
                if not terminal:
                    next_norm = nn.normalize(next_raw, bundle.normalizer,
                                             update=False)
                    bootstrap = float(
                        value_net.value(bundle.value, next_norm[None, :])[0][0])
                done_l.extend([False] * (ep_len - 1) + [True])
                ep_lengths.append(ep_len)
                ep_reasons.append("clip_end" if reason == "budget" else reason)
                ep_returns.append(ep_return)
                ep_seconds.append(env.elapsed)
                bootstraps.append(0.0 if terminal else bootstrap)
                break
            raw_obs = next_raw

    return RolloutBatch(
        obs=np.array(obs_l),
        actions=np.array(act_l),
        log_probs=np.array(logp_l),
        rewards=np.array(rew_l),
        values=np.array(val_l),
        dones=np.array(done_l, bool),
        explored=np.array(exp_l, bool),
        episode_lengths=ep_lengths,
        episode_reasons=ep_reasons,
        episode_returns=ep_returns,
        episode_seconds=ep_seconds,
        bootstraps=bootstraps,
        raw_stats=raw_stats,
        start_candidates=[(f, s, st) for f, (s, st) in
                          sorted(best_candidates.items())],
    )


# ---------------------------------------------------------------------------
# PPO update
# ---------------------------------------------------------------------------


def ppo_update(bundle: PolicyBundle, optimizers, batch: RolloutBatch,
               cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate policy step and MSE value step over the batch.

    The policy loss uses only transitions collected with exploration noise;
    the value loss uses everything. On a non-finite loss the previous
    parameters are restored and the update reports itself aborted.
    """
    policy_net, value_net = bundle.nets()
    adam_policy, adam_value = optimizers

    advantages = np.zeros(batch.size)
    returns = np.zeros(batch.size)
    for sl, bootstrap in zip(batch.episode_slices(), batch.bootstraps):
        adv, ret = compute_gae(batch.rewards[sl], batch.values[sl],
                               batch.dones[sl], cfg.gamma, cfg.lam,
                               bootstrap=bootstrap)
        advantages[sl] = adv
        returns[sl] = ret

    explored_idx = np.flatnonzero(batch.explored)
    adv_n = advantages.copy()
    if explored_idx.size > 1:
        sub = advantages[explored_idx]
        adv_n[explored_idx] = (sub - sub.mean()) / max(sub.std(), 1e-8)

    policy_backup = {k: v.copy() for k, v in bundle.policy.items()}
    value_backup = {k: v.copy() for k, v in bundle.value.items()}

    try:
        for _ in range(cfg.epochs):
            if explored_idx.size:
                order = explored_idx[rng.permutation(explored_idx.size)]
                for mb in _chunks(order, cfg.minibatch):
                    obs = batch.obs[mb]
                    acts = batch.actions[mb]
                    old_lp = batch.log_probs[mb]
                    a = adv_n[mb]
                    mean, std, cache = policy_net.mean_std(bundle.policy, obs)
                    lp = nn.log_prob(mean, std, acts)
                    ratio = np.exp(lp - old_lp)
                    unclipped = ratio * a
                    clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * a
                    use = unclipped <= clipped + 1e-12
                    coeff = np.where(use, -a * ratio, 0.0) / len(mb)
                    dmean, dlog_std = nn.log_prob_grads(mean, std, acts, coeff)
                    grads = policy_net.backward(bundle.policy, cache, dmean)
                    grads["log_std"] = dlog_std
                    adam_policy.step(bundle.policy, grads)
            order = rng.permutation(batch.size)
            for mb in _chunks(order, cfg.minibatch):
                obs = batch.obs[mb]
                v, cache = value_net.value(bundle.value, obs)
                err = v - returns[mb]
                grads = value_net.backward(bundle.value, cache,
                                           (2.0 * err / len(mb))[:, None])
                adam_value.step(bundle.value, grads)
        stats = _update_stats(bundle, batch, returns, adv_n, explored_idx, cfg)
        finite = all(np.all(np.isfinite(v)) for v in bundle.policy.values())
        finite = finite and all(np.all(np.isfinite(v)) for v in bundle.value.values())
        finite = finite and np.isfinite(stats["policy_loss"]) \
            and np.isfinite(stats["value_loss"])
    except FloatingPointError:
        finite = False
        stats = {"policy_loss": float("nan"), "value_loss": float("nan"),
                 "kl": float("nan"), "clip_fraction": float("nan"),
                 "mean_abs_action": float(np.abs(batch.actions).mean()),
                 "policy_mean_std": float(np.exp(policy_backup["log_std"]).mean())}
    if not finite:
        bundle.policy.clear()
        bundle.policy.update(policy_backup)
        bundle.value.clear()
        bundle.value.update(value_backup)
        log.warning("non-finite PPO update aborted; parameters restored")
        stats["aborted"] = True
    else:
        stats["aborted"] = False
    return stats


def _chunks(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i: i + size]


def _update_stats(bundle, batch, returns, adv_n, explored_idx, cfg) -> dict:
    policy_net, value_net = bundle.nets()
    v, _ = value_net.value(bundle.value, batch.obs)
    value_loss = float(np.mean((v - returns) ** 2))
    if explored_idx.size:
        obs = batch.obs[explored_idx]
        mean, std, _ = policy_net.mean_std(bundle.policy, obs)
        lp = nn.log_prob(mean, std, batch.actions[explored_idx])
        ratio = np.exp(lp - batch.log_probs[explored_idx])
        a = adv_n[explored_idx]
        policy_loss = float(-np.mean(np.minimum(
            ratio * a, np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * a)))
        kl = float(np.mean(batch.log_probs[explored_idx] - lp))
        clip_fraction = float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps))
    else:
        policy_loss, kl, clip_fraction = 0.0, 0.0, 0.0
    return {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "kl": kl,
        "clip_fraction": clip_fraction,
        "mean_abs_action": float(np.abs(batch.actions).mean()),
        "policy_mean_std": float(np.exp(bundle.policy["log_std"]).mean()),
    }


# ---------------------------------------------------------------------------
# Worker plumbing
# ---------------------------------------------------------------------------

_WORKER_SETUP: TrainSetup | None = None


def _init_worker(setup: TrainSetup) -> None:
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _make_env_factory(setup: TrainSetup, sim_params: SimParams, obs_spec,
                      weights, sensor_noise: bool = True):
    bound = setup.bound_map()

    def factory(rng: np.random.Generator) -> EpisodeRunner:
        sim = Simulator(setup.agent, sim_params)
        return EpisodeRunner(
            sim, setup.clip, bound, setup.control, weights, obs_spec, rng,
            episode_seconds=setup.train.episode_seconds,
            start_pose_threshold=setup.train.start_pose_threshold,
            sensor_noise=sensor_noise,
        )

    return factory


def _collect_worker(args) -> RolloutBatch:
    (setup, iteration, worker_id, quota, sim_params, spec, policy, value,
     norm, buffer_entries) = args
    setup = setup if setup is not None else _WORKER_SETUP
    bundle = PolicyBundle(spec=spec, policy=policy, value=value, normalizer=norm)
    obs_spec = _setup_obs_spec(setup)
    weights = setup.weights()
    factory = _make_env_factory(setup, sim_params, obs_spec, weights)
    if setup.reward_mode == "error":
        factory = _wrap_error_reward(factory, weights)
    buffer = StartPoseBuffer(dict(buffer_entries))
    seq = np.random.SeedSequence(
        entropy=(setup.train.seed, iteration, _STREAM_COLLECT, worker_id))
    return collect_rollouts(bundle, factory, setup.train, seq, quota,
                            start_buffer=buffer)


def _setup_obs_spec(setup: TrainSetup):
    bound = setup.bound_map()
    n_pads = 4 * len(setup.agent.feet)
    return make_observation_spec(setup.agent.dof_count, setup.agent.dof_count,
                                 n_pads, bound, setup.control)


def _wrap_error_reward(factory, weights: RewardWeights):
    """Ablation: replace progress-based tracking with an error-based term."""

    def wrapped(rng):
        env = factory(rng)
        orig_step = env.step

        def step(action):
            obs, total, done, info = orig_step(action)
            b = info.breakdown
            err_term = -float(np.sum(weights.link_weights * info.dists))
            new_total = err_term - b.r_collision + b.r_ground - b.r_limit
            if info.reason == "fall":
                new_total -= weights.fall_penalty
            return obs, new_total, done, info

        env.step = step
        return env

    return wrapped


# ---------------------------------------------------------------------------
# Deterministic evaluation episode (nominal environment, mean actions)
# ---------------------------------------------------------------------------


def run_eval_episode(setup: TrainSetup, bundle: PolicyBundle, rng,
                     sim_params: SimParams | None = None,
                     episode_seconds: float | None = None):
    """One deterministic-policy episode from the clip start.

    Returns (return, survival seconds, reason, mean tracking distance).
    """
    obs_spec = _setup_obs_spec(setup)
    weights = setup.weights()
    params = sim_params if sim_params is not None else _nominal_params(setup)
    factory = _make_env_factory(setup, params, obs_spec, weights)
    if setup.reward_mode == "error":
        factory = _wrap_error_reward(factory, weights)
    env = factory(rng)
    if episode_seconds is not None:
        env.episode_seconds = episode_seconds
    policy_net, _ = bundle.nets()
    raw = env.reset(0, None)
    total, reason = 0.0, "clip_end"
    dist_means = []
    while True:
        norm_obs = nn.normalize(raw, bundle.normalizer, update=False)
        mean, _, _ = policy_net.mean_std(bundle.policy, norm_obs[None, :])
        raw, r, done, info = env.step(mean[0])
        total += r
        dist_means.append(float(info.dists.mean()))
        if done:
            reason = info.reason
            break
    return total, env.elapsed, reason, float(np.mean(dist_means))


def _nominal_params(setup: TrainSetup) -> SimParams:
    r = setup.randomization
    return replace(setup.sim,
                   backlash_halfwidth=math.radians(r.nominal_backlash_deg),
                   friction_coef=r.nominal_friction,
                   youngs_modulus=r.nominal_youngs)


# ---------------------------------------------------------------------------
# Training driver
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    out_dir: Path
    metrics_path: Path
    checkpoints: list[Path]
    iterations_run: int
    final_eval_return: float


def run_training(setup: TrainSetup, out_dir, jobs: int = 1,
                 stop_fn=None) -> RunResult:
    """Full training run: randomize -> collect -> GAE -> PPO -> start poses.

    Writes ``metrics.csv`` and periodic checkpoints under ``out_dir``. With
    ``jobs > 1`` rollout workers run in a process pool; results are identical
    to the sequential path. ``stop_fn(iteration, row) -> bool`` may stop early.
    """
    cfg = setup.train
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obs_spec = _setup_obs_spec(setup)
    (out_dir / "obs_spec.json").write_text(
        __import__("json").dumps(obs_spec.to_dict(), indent=1))

    spec = nn.MlpSpec(goal_dim=obs_spec.goal_width,
                      rest_dim=obs_spec.width - obs_spec.goal_width,
                      action_dim=setup.agent.dof_count)
    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    bundle = PolicyBundle(
        spec=spec,
        policy=nn.PolicyNet(spec).init_params(init_rng),
        value=nn.ValueNet(spec).init_params(init_rng),
        normalizer=nn.RunningNorm.zeros(spec.obs_dim),
    )
    optimizers = (nn.Adam(cfg.policy_lr), nn.Adam(cfg.value_lr))
    buffer = StartPoseBuffer()

    metrics_path = out_dir / "metrics.csv"
    checkpoints: list[Path] = []
    meta = {"obs_spec_hash": obs_spec.hash(), "seed": cfg.seed}

    def save(iteration: int) -> Path:
        path = out_dir / f"ckpt_{iteration:06d}.bin"
        digest = save_checkpoint(path, bundle.policy, bundle.value,
                                 bundle.normalizer, dict(meta, iteration=iteration))
        (out_dir / "latest.json").write_text(__import__("json").dumps(
            {"iteration": iteration, "path": path.name, "content_hash": digest,
             **meta}, sort_keys=True))
        checkpoints.append(path)
        return path

    pool = None
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        pool = ctx.Pool(processes=jobs, initializer=_init_worker,
                        initargs=(setup,))

    save(0)
    final_eval = float("nan")
    rows_written = 0
    try:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
            fh.flush()
            for iteration in range(cfg.iterations):
                t0 = time.time()
                rand_rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=(cfg.seed, iteration, _STREAM_RANDOMIZE)))
                sim_params = randomize_env(setup.sim, setup.randomization,
                                           iteration, rand_rng,
                                           setup.agent.dof_count)
                quotas = _split_quota(cfg.steps_per_iter, cfg.workers)
                snapshot = list(buffer.entries.items())
                args = [
                    (None if pool else setup, iteration, w, quotas[w], sim_params,
                     bundle.spec, bundle.policy, bundle.value, bundle.normalizer,
                     snapshot)
                    for w in range(cfg.workers)
                ]
                if pool:
                    parts = pool.map(_collect_worker, args)
                else:
                    parts = [_collect_worker(a) for a in args]
                batch = RolloutBatch.concatenate(parts)

                update_start_poses(buffer, batch.start_candidates)
                bundle.normalizer.merge(batch.raw_stats)

                upd_rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=(cfg.seed, iteration, _STREAM_UPDATE)))
                stats = ppo_update(bundle, optimizers, batch, cfg, upd_rng)

                if cfg.eval_every and iteration % cfg.eval_every == 0:
                    eval_rng = np.random.default_rng(np.random.SeedSequence(
                        entropy=(cfg.seed, iteration, _STREAM_EVAL)))
                    eval_ret, eval_surv, _, _ = run_eval_episode(
                        setup, bundle, eval_rng)
                    final_eval = eval_ret
                else:
                    eval_ret, eval_surv = float("nan"), float("nan")

                hist = {r: 0 for r in TERMINATION_REASONS}
                for r in batch.episode_reasons:
                    hist[r] = hist.get(r, 0) + 1
                log.info("iteration %d: %.1fs", iteration, time.time() - t0)
                row = {
                    "iteration": iteration,
                    "return": eval_ret,
                    "train_return_mean": float(np.mean(batch.episode_returns)),
                    "policy_loss": stats["policy_loss"],
                    "value_loss": stats["value_loss"],
                    "kl": stats["kl"],
                    "clip_fraction": stats["clip_fraction"],
                    "mean_abs_action": stats["mean_abs_action"],
                    "policy_mean_std": stats["policy_mean_std"],
                    "mean_episode_s": float(np.mean(batch.episode_seconds)),
                    "eval_survival_s": eval_surv,
                    "term_none": hist["none"],
                    "term_fall": hist["fall"],
                    "term_divergence": hist["divergence"],
                    "term_sim_error": hist["sim_error"],
                    "term_clip_end": hist["clip_end"],
                    "steps": batch.size,
                    "episodes": len(batch.episode_lengths),
                    "start_pose_count": len(buffer),
                }
                writer.writerow([row[c] for c in METRICS_COLUMNS])
                fh.flush()
                rows_written += 1

                if cfg.checkpoint_interval and \
                        (iteration + 1) % cfg.checkpoint_interval == 0:
                    save(iteration + 1)
                if stop_fn is not None and stop_fn(iteration, row):
                    break
            if not checkpoints or checkpoints[-1].name != \
                    f"ckpt_{rows_written:06d}.bin":
                save(rows_written)
    except Exception:
        save_checkpoint(out_dir / "ckpt_error.bin", bundle.policy, bundle.value,
                        bundle.normalizer, dict(meta, iteration=-1))
        raise
    finally:
        if pool:
            pool.close()
            pool.join()

    return RunResult(out_dir=out_dir, metrics_path=metrics_path,
                     checkpoints=checkpoints, iterations_run=rows_written,
                     final_eval_return=final_eval)


def _split_quota(total: int, workers: int) -> list[int]:
    base = total // workers
    out = [base] * workers
    for i in range(total - base * workers):
        out[i] += 1
    return out
