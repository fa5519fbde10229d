"""Seeded random chain generator shared by grammar, codec, and gate tests."""

from __future__ import annotations

import numpy as np

from chainpolicy.chain import (
    ACTION_BINS,
    COORD_GRID,
    GRIP_WORDS,
    MOVE_PRIMITIVES,
    DiscreteAction,
    ReasoningChain,
    ReasoningStep,
    StepKind,
)

WORDS = (
    "move", "to", "the", "cup", "grasp", "lift", "block", "place", "on",
    "book", "plate", "gripper", "is", "empty", "holding", "above", "near",
    "left", "right", "forward", "so", "first", "then", "object", "target",
)
NAMES = ("cup", "block", "book", "plate", "sushi", "banana", "bottle", "sponge")


def random_text(rng: np.random.Generator) -> str:
    n = int(rng.integers(1, 7))
    return " ".join(WORDS[int(i)] for i in rng.integers(0, len(WORDS), size=n))


def random_box(rng: np.random.Generator) -> tuple[int, int, int, int]:
    x0, x1 = sorted(int(v) for v in rng.integers(0, COORD_GRID, size=2))
    y0, y1 = sorted(int(v) for v in rng.integers(0, COORD_GRID, size=2))
    return (x0, y0, x1, y1)


def random_step(rng: np.random.Generator, kind: StepKind) -> ReasoningStep:
    if kind in (StepKind.TASK_PLAN, StepKind.SUBTASK_REASONING,
                StepKind.SUBTASK, StepKind.MOVE_REASONING):
        return ReasoningStep(kind, random_text(rng))
    if kind == StepKind.MOVE_PRIMITIVE:
        return ReasoningStep(kind, MOVE_PRIMITIVES[int(rng.integers(len(MOVE_PRIMITIVES)))])
    if kind == StepKind.GRIPPER_POSITION:
        x, y = rng.integers(0, COORD_GRID, size=2)
        return ReasoningStep(kind, (int(x), int(y)))
    entries = tuple(
        (NAMES[int(rng.integers(len(NAMES)))], random_box(rng))
        for _ in range(int(rng.integers(0, 5)))
    )
    return ReasoningStep(kind, entries)


def random_chain(rng: np.random.Generator, prefix_len: int | None = None,
                 with_action: bool | None = None) -> ReasoningChain:
    if prefix_len is None:
        prefix_len = int(rng.integers(1, 8))
    steps = tuple(random_step(rng, StepKind(r)) for r in range(1, prefix_len + 1))
    action = None
    if prefix_len == 7:
        if with_action is None:
            with_action = bool(rng.integers(2))
        if with_action:
            bins = tuple(int(b) for b in rng.integers(0, ACTION_BINS, size=3))
            action = DiscreteAction(bins, GRIP_WORDS[int(rng.integers(len(GRIP_WORDS)))])
    return ReasoningChain(steps, action)
