"""Experiment configuration files: strict schema, overrides, hashing.

A config is one JSON document holding asset references plus every tunable
(simulation, control, reward, randomization, training). Unknown keys are
rejected anywhere in the tree; ``--set dotted.key=value`` overrides may only
touch existing keys. The canonical-JSON hash names run directories and is
embedded in artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from . import assets as assets_mod
from .control import ControlConfig, ControlMode
from .sim import SimParams
from .skeleton import LinkMap, MotionClip, SkeletonModel, load_clip, load_skeleton
from .skeleton import default_link_map
from .trainer import RandomizationConfig, TrainConfig, TrainSetup

CONFIG_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "format_version": CONFIG_FORMAT_VERSION,
    "name": "experiment",
    "assets": {
        "agent_skeleton": "bundled:biped9",
        "actor_skeleton": "bundled:actor9",
        "clip": {"generator": "balance", "duration": 8.0, "rate": 50.0},
        "link_map": None,
    },
    "sim": {
        "gravity": 9.81,
        "sim_rate": 1024,
        "control_rate": 512,
        "policy_rate": 64,
        "tangential_stiffness": 400.0,
        "contact_length": 0.01,
        "pd_kp": 3.0,
        "pd_kd": 0.08,
        "limit_stiffness": 25.0,
        "limit_damping": 0.1,
        "joint_noise_std": 0.002,
        "gyro_noise_std": 0.02,
        "accel_noise_std": 0.1,
        "pressure_noise_frac": 0.02,
        "joint_bias_std": 0.002,
        "gyro_bias_std": 0.02,
        "accel_bias_std": 0.1,
        "pressure_bias_frac": 0.02,
        "fall_height_floor": None,
        "fall_tilt_max": math.pi / 3,
    },
    "control": {
        "mode": "integrate_once",
        "max_joint_speed": 8.0,
        "max_joint_accel": 40.0,
        "goal_horizon": 2,
        "goal_frame": "yaw_relative",
    },
    "reward": {
        "velocity_weight": 0.05,
        "collision_penalty": 0.5,
        "pressure_reward": 0.1,
        "pressure_threshold": 0.3,
        "flat_gain": 0.5,
        "flat_angle": 0.3,
        "limit_gain": 1.0,
        "limit_offset": 0.2,
        "fall_penalty": 10.0,
        "divergence_threshold": 1.2,
    },
    "reward_mode": "progress",
    "quat_dist_norm_variant": "squared_sum",
    "randomization": {
        "backlash": True,
        "friction": True,
        "youngs": True,
        "backlash_max_deg": 5.0,
        "backlash_ramp_iters": 100,
        "friction_range": [0.05, 0.5],
        "youngs_range": [3.0e3, 3.0e5],
        "nominal_backlash_deg": 0.0,
        "nominal_friction": 0.25,
        "nominal_youngs": 3.0e4,
        "per_joint_backlash": True,
    },
    "train": {
        "iterations": 500,
        "steps_per_iter": 4096,
        "workers": 4,
        "gamma": 0.99,
        "lam": 0.95,
        "clip_eps": 0.2,
        "policy_lr": 3.0e-4,
        "value_lr": 1.0e-3,
        "minibatch": 256,
        "epochs": 4,
        "explore_prob": 0.3,
        "rsi_prob": 0.5,
        "start_pose_threshold": 0.5,
        "episode_seconds": None,
        "checkpoint_interval": 25,
        "eval_every": 1,
    },
    "seeds": [0],
}

_CLIP_GENERATORS = {
    "balance": assets_mod.make_balance_clip,
    "wave": assets_mod.make_wave_clip,
    "walk": assets_mod.make_walk_clip,
}


def _merge_strict(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> "ExperimentConfig":
    """Parse and validate a config file against the full schema."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir=None) -> "ExperimentConfig":
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    version = raw.get("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {version!r}")
    merged = _merge_strict(DEFAULT_CONFIG, raw)
    cfg = ExperimentConfig(raw=merged, base_dir=Path(base_dir) if base_dir else Path.cwd())
    cfg.validate()
    return cfg


def apply_overrides(cfg: "ExperimentConfig", pairs: list[str]) -> "ExperimentConfig":
    """Apply ``dotted.key=value`` overrides; values parse as JSON, else string."""
    raw = copy.deepcopy(cfg.raw)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, text = pair.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key: {key!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key!r}")
        node[parts[-1]] = value
    out = ExperimentConfig(raw=raw, base_dir=cfg.base_dir)
    out.validate()
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:8]

    def validate(self) -> None:
        # Constructing the dataclasses runs their invariant checks.
        self._sim_params()
        self._control()
        self._randomization()
        self._train(seed=0)
        if self.raw["reward_mode"] not in ("progress", "error"):
            raise ConfigError(f"bad reward_mode {self.raw['reward_mode']!r}")
        if self.raw["quat_dist_norm_variant"] not in ("squared_sum", "vector_norm"):
            raise ConfigError(
                f"bad quat_dist_norm_variant {self.raw['quat_dist_norm_variant']!r}")
        clip = self.raw["assets"]["clip"]
        if isinstance(clip, dict):
            gen = clip.get("generator")
            if gen not in _CLIP_GENERATORS:
                raise ConfigError(f"unknown clip generator {gen!r}")

    # -- section builders --------------------------------------------------

    def _sim_params(self) -> SimParams:
        try:
            return SimParams(**self.raw["sim"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"sim section: {e}") from e

    def _control(self) -> ControlConfig:
        c = dict(self.raw["control"])
        try:
            c["mode"] = ControlMode(c["mode"])
            return ControlConfig(**c)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"control section: {e}") from e

    def _randomization(self) -> RandomizationConfig:
        r = dict(self.raw["randomization"])
        for k in ("friction_range", "youngs_range"):
            r[k] = tuple(float(x) for x in r[k])
        try:
            return RandomizationConfig(**r)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"randomization section: {e}") from e

    def _train(self, seed: int) -> TrainConfig:
        try:
            return TrainConfig(seed=seed, **self.raw["train"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"train section: {e}") from e

    def _resolve_skeleton(self, ref: str) -> SkeletonModel:
        if ref.startswith("bundled:"):
            return assets_mod.load_bundled_skeleton(ref.split(":", 1)[1])
        return load_skeleton(self.base_dir / ref)

    def load_assets(self) -> tuple[SkeletonModel, SkeletonModel, MotionClip, LinkMap]:
        agent = self._resolve_skeleton(self.raw["assets"]["agent_skeleton"])
        actor = self._resolve_skeleton(self.raw["assets"]["actor_skeleton"])
        clip_ref = self.raw["assets"]["clip"]
        if isinstance(clip_ref, dict):
            kwargs = {k: v for k, v in clip_ref.items() if k != "generator"}
            clip = _CLIP_GENERATORS[clip_ref["generator"]](actor, **kwargs)
        else:
            clip = load_clip(self.base_dir / clip_ref, actor)
        map_rows = self.raw["assets"]["link_map"]
        link_map = (LinkMap.from_list(map_rows) if map_rows
                    else default_link_map(agent, actor))
        link_map.validate(agent, actor)
        return agent, actor, clip, link_map

    def build_setup(self, seed: int) -> TrainSetup:
        agent, actor, clip, link_map = self.load_assets()
        return TrainSetup(
            agent=agent,
            actor=actor,
            clip=clip,
            link_map=link_map,
            sim=self._sim_params(),
            control=self._control(),
            randomization=self._randomization(),
            train=self._train(seed),
            reward=dict(self.raw["reward"]),
            reward_mode=self.raw["reward_mode"],
            quat_variant=self.raw["quat_dist_norm_variant"],
        )

    def run_dir_name(self, seed: int) -> str:
        return f"{self.name}-{self.hash()}-s{seed}"

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=1, sort_keys=True)
