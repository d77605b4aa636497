"""From-scratch policy/value networks with exact reverse-mode gradients.

Both networks share a topology: the goal block of the observation passes
through a two-layer leaky-ReLU encoder, its latent is concatenated with the
remaining features, and a three-layer softsign trunk feeds a linear head.
The policy head outputs per-action Gaussian means with an observation-
independent log-std vector; the value head outputs a scalar.

Everything is plain numpy; parameters live in name->array dicts so gradient
checking, Adam, and serialization stay trivial.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    """Layer layout: observation split, encoder/trunk widths, action size."""

    goal_dim: int
    rest_dim: int
    action_dim: int
    goal_widths: tuple[int, ...] = (128, 64)
    trunk_widths: tuple[int, ...] = (128, 128, 128)
    leaky_slope: float = 0.01

    def __post_init__(self):
        if min(self.goal_widths) <= 0 or min(self.trunk_widths) <= 0:
            raise ValueError("layer widths must be > 0")

    @property
    def obs_dim(self) -> int:
        return self.goal_dim + self.rest_dim


def _softsign(x):
    return x / (1.0 + np.abs(x))


def _softsign_grad(x):
    return 1.0 / (1.0 + np.abs(x)) ** 2


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x >= 0, 1.0, slope)


def _orthogonal(rng: np.random.Generator, shape, gain=1.0) -> np.ndarray:
    a = rng.normal(size=(max(shape), max(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return gain * q[: shape[0], : shape[1]].copy()


class _Net:
    """Shared encoder+trunk+linear-head network with cached backprop."""

    def __init__(self, spec: MlpSpec, head_dim: int):
        self.spec = spec
        self.head_dim = head_dim
        self._layers = []
        w_in = spec.goal_dim
        for i, w in enumerate(spec.goal_widths):
            self._layers.append((f"genc{i}", w_in, w, "leaky"))
            w_in = w
        trunk_in = spec.goal_widths[-1] + spec.rest_dim
        w_in = trunk_in
        for i, w in enumerate(spec.trunk_widths):
            self._layers.append((f"trunk{i}", w_in, w, "softsign"))
            w_in = w
        self._layers.append(("head", w_in, head_dim, "linear"))

    def init_params(self, rng: np.random.Generator,
                    head_scale: float = 1.0) -> dict[str, np.ndarray]:
        params = {}
        for name, n_in, n_out, act in self._layers:
            gain = head_scale if name == "head" else 1.0
            params[f"{name}.W"] = _orthogonal(rng, (n_in, n_out), gain)
            params[f"{name}.b"] = np.zeros(n_out)
        return params

    def forward(self, params: dict, obs: np.ndarray):
        """Returns (head output (B, head_dim), cache for backward)."""
        obs = np.atleast_2d(np.asarray(obs, float))
        goal = obs[:, : self.spec.goal_dim]
        rest = obs[:, self.spec.goal_dim:]
        cache = {"obs": obs, "pre": {}, "inp": {}}
        x = goal
        for name, _, _, act in self._layers:
            if name == "trunk0":
                x = np.concatenate([x, rest], axis=1)
            cache["inp"][name] = x
            z = x @ params[f"{name}.W"] + params[f"{name}.b"]
            cache["pre"][name] = z
            if act == "leaky":
                x = _leaky(z, self.spec.leaky_slope)
            elif act == "softsign":
                x = _softsign(z)
            else:
                x = z
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activations at layer {name}")
        return x, cache

    def backward(self, params: dict, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Exact gradients of sum(dout * head_output) w.r.t. every parameter."""
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        grads = {}
        d = np.atleast_2d(np.asarray(dout, float))
        rest_grad_sink = None
        for name, _, _, act in reversed(self._layers):
            z = cache["pre"][name]
            if act == "leaky":
                d = d * _leaky_grad(z, self.spec.leaky_slope)
            elif act == "softsign":
                d = d * _softsign_grad(z)
            x = cache["inp"][name]
            grads[f"{name}.W"] = x.T @ d
            grads[f"{name}.b"] = d.sum(axis=0)
            d = d @ params[f"{name}.W"].T
            if name == "trunk0":
                # Split the concatenated input gradient; only the goal-encoder
                # branch keeps backpropagating.
                enc_w = self.spec.goal_widths[-1]
                rest_grad_sink = d[:, enc_w:]
                d = d[:, :enc_w]
        grads["_dobs_rest"] = rest_grad_sink
        return grads


class PolicyNet(_Net):
    """Gaussian policy: observation-dependent mean, shared log-std vector."""

    def __init__(self, spec: MlpSpec):
        super().__init__(spec, spec.action_dim)

    def init_params(self, rng: np.random.Generator,
                    log_std_init: float = math.log(0.3)) -> dict:
        # Final layer scaled way down so the initial mean action is tiny:
        # with the integrator control scheme even a 0.1-scale raw output is a
        # persistent joint-velocity bias that walks the pose off the clip.
        params = super().init_params(rng, head_scale=0.001)
        params["log_std"] = np.full(self.spec.action_dim, log_std_init)
        return params

    def mean_std(self, params: dict, obs: np.ndarray):
        mean, cache = self.forward(params, obs)
        return mean, np.exp(params["log_std"]), cache


class ValueNet(_Net):
    def __init__(self, spec: MlpSpec):
        super().__init__(spec, 1)

    def value(self, params: dict, obs: np.ndarray):
        v, cache = self.forward(params, obs)
        return v[:, 0], cache


# ---------------------------------------------------------------------------
# Gaussian policy head math
# ---------------------------------------------------------------------------


def sample_action(mean, std, rng: np.random.Generator) -> np.ndarray:
    """Diagonal-Gaussian draw: mean + std * standard normal."""
    mean = np.asarray(mean, float)
    return mean + np.asarray(std, float) * rng.standard_normal(mean.shape)


def log_prob(mean, std, action) -> np.ndarray:
    """Diagonal-Gaussian log density, one scalar per batch row."""
    mean = np.atleast_2d(np.asarray(mean, float))
    action = np.atleast_2d(np.asarray(action, float))
    std = np.asarray(std, float)
    z = (action - mean) / std
    return -0.5 * (z * z).sum(axis=1) - np.log(std).sum() - 0.5 * mean.shape[1] * LOG_2PI


def log_prob_grads(mean, std, action, coeff):
    """Gradients of sum(coeff * log_prob) w.r.t. mean and log_std.

    ``coeff`` is one scalar weight per batch row (e.g. PPO surrogate factors).
    """
    mean = np.atleast_2d(np.asarray(mean, float))
    action = np.atleast_2d(np.asarray(action, float))
    std = np.asarray(std, float)
    c = np.asarray(coeff, float)[:, None]
    z = (action - mean) / std
    dmean = c * z / std
    dlog_std = (c * (z * z - 1.0)).sum(axis=0)
    return dmean, dlog_std


# ---------------------------------------------------------------------------
# Running input normalizer
# ---------------------------------------------------------------------------


@dataclass
class RunningNorm:
    """Streaming mean/variance tracker with parallel (Chan) merging."""

    count: float
    mean: np.ndarray
    m2: np.ndarray

    @staticmethod
    def zeros(dim: int) -> "RunningNorm":
        return RunningNorm(0.0, np.zeros(dim), np.zeros(dim))

    @property
    def std(self) -> np.ndarray:
        if self.count <= 0:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 0.0))

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, float))
        if batch.shape[1] != self.mean.shape[0]:
            raise ValueError(
                f"feature width mismatch: {batch.shape[1]} vs {self.mean.shape[0]}"
            )
        n = batch.shape[0]
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        self.merge(RunningNorm(float(n), b_mean, b_m2))

    def merge(self, other: "RunningNorm") -> None:
        """Fold another tracker's statistics into this one (order-stable)."""
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self.m2 = other.m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / total)
        self.count = total

    def copy(self) -> "RunningNorm":
        return RunningNorm(self.count, self.mean.copy(), self.m2.copy())


def normalize(raw_obs, normalizer: RunningNorm, update: bool = False) -> np.ndarray:
    """Standardize observations against the running statistics, clipped to ±10.

    With ``update`` the batch is folded into the statistics first, so the very
    first sample normalizes to zeros.
    """
    raw = np.asarray(raw_obs, float)
    batch = np.atleast_2d(raw)
    if batch.shape[1] != normalizer.mean.shape[0]:
        raise ValueError(
            f"feature width mismatch: {batch.shape[1]} vs {normalizer.mean.shape[0]}"
        )
    if update:
        normalizer.update(batch)
    out = (batch - normalizer.mean) / np.maximum(normalizer.std, 1e-6)
    out = np.clip(out, -10.0, 10.0)
    return out[0] if raw.ndim == 1 else out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if k.startswith("_") or k not in params:
                continue
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1**self.t)
            vh = self.v[k] / (1 - b2**self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def params_hash(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()[:16]
