"""Synchronous n-step actor-critic training for the tree policy."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .env import EnvConfig, PackingEnv
from .policy import (LEAVES_PER_ORIENTATION, Descriptor, Policy, backward, describe, forward, loss_terms,
                     sample_index, zeros_like)


@dataclass
class TrainingConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    k_p: int = 8
    k_s: int = 5
    lr: float = 3e-4
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    entropy: float = 0.0
    max_grad_norm: float = 0.5
    optimizer: str = "adam"  # adam | sgd
    seed: int = 0
    updates: int | None = None
    time_limit: float | None = None  # seconds
    window: int = 50  # completed episodes averaged into the curve

    def __post_init__(self):
        if self.k_p < 1 or self.k_s < 1:
            raise ValueError("k_p and k_s must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.updates is None and self.time_limit is None:
            raise ValueError("set updates or time_limit")


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mh = self.m[k] / (1 - self.b1 ** self.t)
            vh = self.v[k] / (1 - self.b2 ** self.t)
            params[k] -= self.lr * mh / (np.sqrt(vh) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def training_env_config(env: EnvConfig) -> EnvConfig:
    if env.leaf_limit is None:
        return replace(env, leaf_limit=LEAVES_PER_ORIENTATION * env.n_orientations)
    return env


@dataclass
class CurveRow:
    update: int
    mean_uti: float
    loss: float
    episodes: int
    seconds: float


def train(config: TrainingConfig, policy: Policy | None = None, callback=None) -> tuple[Policy, list[CurveRow]]:
    """Train in place (or from scratch) and return the policy with its learning curve.

    ``callback(update, policy, row)`` may return ``True`` to stop early.
    """
    env_cfg = training_env_config(config.env)
    desc = Descriptor.for_config(env_cfg)
    policy = policy or Policy.create(desc, config.seed)
    params = policy.params
    opt = Adam(params, config.lr) if config.optimizer == "adam" else SGD(params, config.lr)
    seeds = np.random.SeedSequence(config.seed)
    env_seed, act_seed = seeds.spawn(2)
    act_rng = np.random.default_rng(act_seed)
    episode_seeds = np.random.default_rng(env_seed)
    envs = [PackingEnv(env_cfg, int(episode_seeds.integers(2**62))) for _ in range(config.k_p)]
    finished: list[float] = []
    curve: list[CurveRow] = []
    start = time.perf_counter()
    update = 0
    while True:
        if config.updates is not None and update >= config.updates:
            break
        if config.time_limit is not None and time.perf_counter() - start >= config.time_limit:
            break
        grads = zeros_like(params)
        total_loss = 0.0
        count = 0
        for i, env in enumerate(envs):
            traj = []
            for _ in range(config.k_s):
                fwd = forward(params, *describe(env.tree, env.item, env.leaves, desc))
                a = sample_index(fwd.probs, act_rng)
                res = env.step(a)
                traj.append((fwd, a, res.reward))
                if res.done:
                    break
            if env.done:
                ret = 0.0
                finished.append(env.utilization)
                envs[i] = env = PackingEnv(env_cfg, int(episode_seeds.integers(2**62)))
            else:
                ret = forward(params, *describe(env.tree, env.item, env.leaves, desc)).value
            for fwd, a, r in reversed(traj):
                ret = r + config.gamma * ret
                adv = ret - fwd.value
                loss, g_logp, g_value = loss_terms(fwd, a, adv, ret, config.alpha, config.beta, config.entropy)
                backward(params, fwd, g_logp, g_value, grads)
                total_loss += loss
                count += 1
        if not math.isfinite(total_loss):
            raise FloatingPointError(f"non-finite loss at update {update}")
        for g in grads.values():
            g /= max(count, 1)
        clip_grads(grads, config.max_grad_norm)
        opt.step(params, grads)
        update += 1
        recent = finished[-config.window:]
        row = CurveRow(update, float(np.mean(recent)) if recent else float("nan"), total_loss / max(count, 1),
                       len(finished), time.perf_counter() - start)
        curve.append(row)
        if callback is not None and callback(update, policy, row):
            break
    return policy, curve


def write_curve(path, curve: list[CurveRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "mean_uti", "loss"])
        for row in curve:
            w.writerow([row.update, f"{row.mean_uti:.6f}", f"{row.loss:.6f}"])


def evaluate_policy(policy: Policy, env_cfg: EnvConfig, seeds, mode: str = "argmax") -> list[float]:
    """Utilisation per seeded episode with the full (or configured) leaf set."""
    from .policy import act

    out = []
    for s in seeds:
        env = PackingEnv(env_cfg, int(s))
        rng = np.random.default_rng([int(s), 3])
        while not env.done:
            env.step(act(env, policy, mode, rng))
        out.append(env.utilization)
    return out
