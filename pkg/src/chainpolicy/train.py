"""Mixture training: Adam on batches drawn from two labeled pools.

Each batch slot flips a coin with the mixture ratio to pick the action-free
pool or the action-labeled pool, so co-training needs no epoch bookkeeping.
The loss factors into action, reasoning, and action-free reasoning parts
that share one denominator; every step logs all three so their sum can be
checked against the total exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import seeding
from .codec import PAD_ID, SUP_NONE, EncodedSample
from .errors import EmptyDataset, NonFiniteGradient, RangeError
from .model import ModelConfig, Params, init_params, loss_and_grads


@dataclass(frozen=True)
class MixtureSpec:
    """Two pools of encoded samples and the probability of the second."""

    ratio: float                                  # P(slot is action-free)
    robot: tuple[EncodedSample, ...]
    action_free: tuple[EncodedSample, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise RangeError(f"mixture ratio {self.ratio} outside [0, 1]")
        if self.ratio < 1.0 and not self.robot:
            raise EmptyDataset("mixture draws from an empty action-labeled pool")
        if self.ratio > 0.0 and not self.action_free:
            raise EmptyDataset("mixture draws from an empty action-free pool")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch: int = 32
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 1.0
    seed: int = 0
    snapshot_every: int = 0   # 0 disables periodic snapshots

    def __post_init__(self):
        if self.steps <= 0 or self.batch <= 0:
            raise RangeError("steps and batch must be positive")
        if self.lr <= 0 or self.clip <= 0:
            raise RangeError("lr and clip must be positive")
        if self.snapshot_every < 0:
            raise RangeError("snapshot_every must be non-negative")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: Params) -> AdamState:
    zeros = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    return AdamState(m=zeros,
                     v={name: np.zeros_like(arr)
                        for name, arr in params.arrays.items()})


def sample_batch(mix: MixtureSpec, size: int, rng) -> list[EncodedSample]:
    """Per-slot Bernoulli choice of pool, then a uniform draw within it."""
    take_free = rng.random(size) < mix.ratio
    out = []
    for free in take_free:
        pool = mix.action_free if free else mix.robot
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def collate(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad a batch to its longest sequence."""
    if not samples:
        raise EmptyDataset("cannot collate an empty batch")
    width = max(len(s.ids) for s in samples)
    ids = np.full((len(samples), width), PAD_ID, dtype=np.int32)
    targets = np.full((len(samples), width), PAD_ID, dtype=np.int32)
    sup = np.full((len(samples), width), SUP_NONE, dtype=np.int8)
    for row, s in enumerate(samples):
        ids[row, :len(s.ids)] = s.ids
        targets[row, :len(s.targets)] = s.targets
        sup[row, :len(s.supervision)] = s.supervision
    return ids, targets, sup


def clip_gradients(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale gradients to a global norm cap; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * np.asarray(scale, dtype=g.dtype)
            for name, g in grads.items()}, norm


def adam_step(params: Params, grads: dict, state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, applied to the arrays in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, arr in params.arrays.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        arr -= (config.lr * mhat / (np.sqrt(vhat) + config.eps)).astype(arr.dtype)


def metrics_row(step: int, stats: dict, grad_norm: float) -> dict:
    """Shared-denominator loss components; absent components become nan."""
    count = stats["count"]

    def part(total, n):
        return total / count if n > 0 else float("nan")

    return {
        "step": step,
        "loss_total": stats["total_sum"] / count,
        "loss_action": part(stats["action_sum"], stats["action_count"]),
        "loss_reasoning": part(stats["reasoning_sum"], stats["reasoning_count"]),
        "loss_free": part(stats["free_sum"], stats["free_count"]),
        "grad_norm": grad_norm,
    }


@dataclass
class TrainResult:
    params: Params
    metrics: list[dict] = field(default_factory=list)


def train_run(mix: MixtureSpec, model_config: ModelConfig,
              train_config: TrainConfig,
              params: Optional[Params] = None,
              snapshot=None) -> TrainResult:
    """Train from scratch (or continue from params) over the mixture.

    When `snapshot` is given and `train_config.snapshot_every` is K > 0,
    `snapshot(step, params)` fires after every K-th optimizer step.
    """
    rng = seeding.stream(train_config.seed, "train")
    if params is None:
        params = init_params(model_config)
    state = init_adam(params)
    rows = []
    for step in range(train_config.steps):
        batch = sample_batch(mix, train_config.batch, rng)
        ids, targets, sup = collate(batch)
        grads, stats = loss_and_grads(params, ids, targets, sup)
        grads, norm = clip_gradients(grads, train_config.clip)
        adam_step(params, grads, state, train_config)
        rows.append(metrics_row(step, stats, norm))
        every = train_config.snapshot_every
        if snapshot is not None and every and (step + 1) % every == 0:
            snapshot(step + 1, params)
    return TrainResult(params=params, metrics=rows)
