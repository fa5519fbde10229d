"""Reasoning-chain grammar: step kinds, canonical text format, parsing.

A chain is an ordered prefix of seven reasoning steps followed by an optional
discretized action.  The canonical text format is one line per step,
``TAG: payload``, in rank order, with a final ``ACTION:`` line when an action
is attached.  The format is byte-deterministic so golden files and token
boundaries are stable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

from .errors import InvariantViolation, ParseError, RangeError


class StepKind(enum.IntEnum):
    """The seven reasoning steps, rank-ordered from plan to percepts."""

    TASK_PLAN = 1
    SUBTASK_REASONING = 2
    SUBTASK = 3
    MOVE_REASONING = 4
    MOVE_PRIMITIVE = 5
    GRIPPER_POSITION = 6
    VISIBLE_OBJECTS = 7


TAGS = {
    StepKind.TASK_PLAN: "PLAN",
    StepKind.SUBTASK_REASONING: "SUBTASK_REASONING",
    StepKind.SUBTASK: "SUBTASK",
    StepKind.MOVE_REASONING: "MOVE_REASONING",
    StepKind.MOVE_PRIMITIVE: "MOVE",
    StepKind.GRIPPER_POSITION: "GRIPPER",
    StepKind.VISIBLE_OBJECTS: "OBJECTS",
}
ACTION_TAG = "ACTION"
KIND_BY_TAG = {tag: kind for kind, tag in TAGS.items()}

# Translation and gripper primitives.  Rotations are deliberately absent.
MOVE_PRIMITIVES = (
    "stop",
    "move forward",
    "move backward",
    "move left",
    "move right",
    "move up",
    "move down",
    "close gripper",
    "open gripper",
)

COORD_GRID = 256          # rank-6/7 coordinates live on [0, COORD_GRID)
ACTION_BINS = 11          # per-axis displacement bins, center bin = zero
GRIP_WORDS = ("open", "close", "hold")

# Payload for rank 7: ((name, (x0, y0, x1, y1)), ...)
Box = tuple[int, int, int, int]
Payload = Union[str, tuple[int, int], tuple[tuple[str, Box], ...]]


@dataclass(frozen=True)
class DiscreteAction:
    """Discretized end-effector delta: three bin indices plus a grip word."""

    bins: tuple[int, int, int]
    grip: str

    def text(self) -> str:
        return f"{self.bins[0]} {self.bins[1]} {self.bins[2]} {self.grip}"


@dataclass(frozen=True)
class ReasoningStep:
    kind: StepKind
    payload: Payload


@dataclass(frozen=True)
class ReasoningChain:
    """A strict rank prefix of reasoning steps, optionally ending in an action."""

    steps: tuple[ReasoningStep, ...]
    action: Optional[DiscreteAction] = None

    @property
    def prefix_len(self) -> int:
        return len(self.steps)

    def step(self, kind: StepKind) -> ReasoningStep:
        for s in self.steps:
            if s.kind == kind:
                return s
        raise KeyError(kind)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def _canonical_text(s: str) -> bool:
    return s == " ".join(s.split()) and s != ""


def _check_coord(v, out: list[Violation]) -> None:
    if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v < COORD_GRID:
        out.append(Violation("CoordinateOutOfRange", f"coordinate {v!r} outside [0, {COORD_GRID - 1}]"))


def validate_chain(chain: ReasoningChain) -> list[Violation]:
    """Return one record per violated invariant; empty list means valid."""
    out: list[Violation] = []
    ranks = [int(s.kind) for s in chain.steps]
    if len(chain.steps) == 0:
        out.append(Violation("EmptyChain", "chain must contain at least the rank-1 step"))
    if sorted(set(ranks)) != ranks:
        out.append(Violation("OutOfOrderRanks", f"ranks {ranks} are not strictly increasing"))
    elif ranks != list(range(1, len(ranks) + 1)):
        out.append(Violation("NonPrefixRanks", f"ranks {ranks} are not the prefix 1..{len(ranks)}"))

    for s in chain.steps:
        if s.kind in (StepKind.TASK_PLAN, StepKind.SUBTASK_REASONING,
                      StepKind.SUBTASK, StepKind.MOVE_REASONING):
            if not isinstance(s.payload, str) or not _canonical_text(s.payload):
                out.append(Violation("BadPayload", f"{TAGS[s.kind]} payload must be non-empty single-spaced text"))
        elif s.kind == StepKind.MOVE_PRIMITIVE:
            if s.payload not in MOVE_PRIMITIVES:
                out.append(Violation("UnknownPrimitive", f"{s.payload!r} not in primitive vocabulary"))
        elif s.kind == StepKind.GRIPPER_POSITION:
            p = s.payload
            if not (isinstance(p, tuple) and len(p) == 2):
                out.append(Violation("BadPayload", "GRIPPER payload must be a coordinate pair"))
            else:
                for v in p:
                    _check_coord(v, out)
        elif s.kind == StepKind.VISIBLE_OBJECTS:
            p = s.payload
            if not isinstance(p, tuple):
                out.append(Violation("BadPayload", "OBJECTS payload must be a tuple of (name, box)"))
                continue
            for entry in p:
                if not (isinstance(entry, tuple) and len(entry) == 2
                        and isinstance(entry[0], str) and _canonical_text(entry[0])
                        and " " not in entry[0]
                        and isinstance(entry[1], tuple) and len(entry[1]) == 4):
                    out.append(Violation("BadPayload", f"OBJECTS entry {entry!r} malformed"))
                    continue
                for v in entry[1]:
                    _check_coord(v, out)
                x0, y0, x1, y1 = entry[1]
                if isinstance(x0, int) and isinstance(x1, int) and (x0 > x1 or y0 > y1):
                    out.append(Violation("BadPayload", f"box {entry[1]} has min > max"))

    if chain.action is not None:
        if len(chain.steps) != 7:
            out.append(Violation("ActionWithoutFullChain",
                                 f"action attached to prefix of length {len(chain.steps)}"))
        a = chain.action
        if len(a.bins) != 3 or any(not 0 <= b < ACTION_BINS for b in a.bins):
            out.append(Violation("ActionBinOutOfRange", f"bins {a.bins} outside [0, {ACTION_BINS - 1}]"))
        if a.grip not in GRIP_WORDS:
            out.append(Violation("UnknownGrip", f"grip {a.grip!r} not in {GRIP_WORDS}"))
    return out


def _payload_text(step: ReasoningStep) -> str:
    if step.kind == StepKind.GRIPPER_POSITION:
        x, y = step.payload
        return f"{x} {y}"
    if step.kind == StepKind.VISIBLE_OBJECTS:
        parts = []
        for name, (x0, y0, x1, y1) in step.payload:
            parts.append(f"{name} {x0} {y0} {x1} {y1}")
        return " ".join(parts)
    return step.payload


def serialize_chain(chain: ReasoningChain) -> str:
    """Canonical text: one ``TAG: payload`` line per step in rank order."""
    violations = validate_chain(chain)
    if violations:
        raise InvariantViolation("; ".join(f"{v.code}: {v.detail}" for v in violations))
    lines = []
    for step in chain.steps:
        payload = _payload_text(step)
        lines.append(f"{TAGS[step.kind]}: {payload}" if payload else f"{TAGS[step.kind]}:")
    if chain.action is not None:
        lines.append(f"{ACTION_TAG}: {chain.action.text()}")
    return "\n".join(lines) + "\n"


def _parse_int(word: str, lineno: int) -> int:
    if not word.isdigit():
        raise ParseError(lineno, f"expected integer, got {word!r}")
    v = int(word)
    if not 0 <= v < COORD_GRID:
        raise ParseError(lineno, f"coordinate {v} outside [0, {COORD_GRID - 1}]")
    return v


def _parse_payload(kind: StepKind, text: str, lineno: int) -> Payload:
    if kind in (StepKind.TASK_PLAN, StepKind.SUBTASK_REASONING,
                StepKind.SUBTASK, StepKind.MOVE_REASONING):
        if not _canonical_text(text):
            raise ParseError(lineno, f"{TAGS[kind]} payload must be non-empty single-spaced text")
        return text
    if kind == StepKind.MOVE_PRIMITIVE:
        if text not in MOVE_PRIMITIVES:
            raise ParseError(lineno, f"{text!r} not in primitive vocabulary")
        return text
    if kind == StepKind.GRIPPER_POSITION:
        words = text.split()
        if len(words) != 2:
            raise ParseError(lineno, "GRIPPER payload must be exactly two coordinates")
        return (_parse_int(words[0], lineno), _parse_int(words[1], lineno))
    # VISIBLE_OBJECTS: zero or more (name x0 y0 x1 y1) groups
    words = text.split()
    if len(words) % 5 != 0:
        raise ParseError(lineno, "OBJECTS payload must be (name x0 y0 x1 y1) groups")
    entries = []
    for i in range(0, len(words), 5):
        name = words[i]
        if name.isdigit():
            raise ParseError(lineno, f"object name {name!r} looks like a coordinate")
        box = tuple(_parse_int(w, lineno) for w in words[i + 1:i + 5])
        if box[0] > box[2] or box[1] > box[3]:
            raise ParseError(lineno, f"box {box} has min > max")
        entries.append((name, box))
    return tuple(entries)


def _parse_action(text: str, lineno: int) -> DiscreteAction:
    words = text.split()
    if len(words) != 4:
        raise ParseError(lineno, "ACTION payload must be three bins and a grip word")
    bins = []
    for w in words[:3]:
        if not w.isdigit() or not 0 <= int(w) < ACTION_BINS:
            raise ParseError(lineno, f"action bin {w!r} outside [0, {ACTION_BINS - 1}]")
        bins.append(int(w))
    if words[3] not in GRIP_WORDS:
        raise ParseError(lineno, f"grip {words[3]!r} not in {GRIP_WORDS}")
    return DiscreteAction((bins[0], bins[1], bins[2]), words[3])


def parse_chain(text: str) -> ReasoningChain:
    """Inverse of serialize_chain; validates ordering, vocabulary, and ranges."""
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(1, "empty chain text")

    steps: list[ReasoningStep] = []
    action: Optional[DiscreteAction] = None
    for i, line in enumerate(lines, start=1):
        head, sep, rest = line.partition(":")
        if not sep:
            raise ParseError(i, f"missing ':' in {line!r}")
        if rest.startswith(" "):
            payload_text = rest[1:]
        elif rest == "":
            payload_text = ""
        else:
            raise ParseError(i, "tag must be followed by ': ' or bare ':'")
        if action is not None:
            raise ParseError(i, "content after ACTION line")
        if head == ACTION_TAG:
            if len(steps) != 7:
                raise ParseError(i, f"ACTION after prefix of length {len(steps)}")
            action = _parse_action(payload_text, i)
            continue
        kind = KIND_BY_TAG.get(head)
        if kind is None:
            raise ParseError(i, f"unknown tag {head!r}")
        expected = len(steps) + 1
        if int(kind) != expected:
            raise ParseError(i, f"tag {head} has rank {int(kind)}, expected rank {expected}")
        steps.append(ReasoningStep(kind, _parse_payload(kind, payload_text, i)))

    chain = ReasoningChain(tuple(steps), action)
    violations = validate_chain(chain)
    if violations:  # belt and braces; the line checks above should be complete
        raise ParseError(len(lines), "; ".join(v.code for v in violations))
    return chain


def truncate_chain(chain: ReasoningChain, prefix_len: int, keep_action: bool = False) -> ReasoningChain:
    """Keep ranks 1..prefix_len; the action survives only a full-length keep."""
    if not 1 <= prefix_len <= chain.prefix_len:
        raise RangeError(f"prefix_len {prefix_len} outside [1, {chain.prefix_len}]")
    action = chain.action if (keep_action and prefix_len == 7) else None
    return ReasoningChain(chain.steps[:prefix_len], action)
