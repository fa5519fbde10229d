"""Token vocabulary and sample encoding for the sequence model.

A fixed reserved block covers structural tokens (padding, section tags, grip
words, action bins, aperture buckets, numeric coordinates); everything else
is corpus text assigned ids in sorted order.
Encoded samples carry a per-position supervision code so the loss can be
split into action, reasoning, and action-free reasoning components that sum
exactly to the total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import (
    ACTION_BINS,
    ACTION_TAG,
    GRIP_WORDS,
    MOVE_PRIMITIVES,
    TAGS,
    DiscreteAction,
    ReasoningChain,
    StepKind,
    parse_chain,
)
from .errors import (
    ContextOverflow,
    InvariantViolation,
    MalformedAction,
    OutOfRange,
    UnknownToken,
    VocabOverflow,
)
from .world import MAX_DPOS, Action

PAD, BOS = "<pad>", "<bos>"
TAG_TOKENS = tuple(TAGS[StepKind(r)] for r in range(1, 8)) + (ACTION_TAG,)
GRIP_TOKENS = tuple(f"g:{w}" for w in GRIP_WORDS)
BIN_TOKENS = tuple(f"b{i}" for i in range(ACTION_BINS))
APERTURE_TOKENS = tuple(f"a{i}" for i in range(6))
COORD_TOKENS = tuple(f"c{i}" for i in range(256))

RESERVED = (PAD, BOS) + TAG_TOKENS + GRIP_TOKENS + BIN_TOKENS \
    + APERTURE_TOKENS + COORD_TOKENS
PAD_ID, BOS_ID = 0, 1
MAX_VOCAB = 1024

ACTION_STEP = 0.01        # displacement per bin
ZERO_BIN = 5              # bin index encoding zero displacement

# Supervision codes attached to each target position.
SUP_NONE = 0
SUP_ACTION = 1
SUP_REASONING = 2
SUP_FREE = 3              # reasoning positions from action-free sources


class Vocabulary:
    """Bijective token-id table with the reserved block at the bottom."""

    def __init__(self, id_to_token):
        self.id_to_token = tuple(id_to_token)
        if self.id_to_token[:len(RESERVED)] != RESERVED:
            raise InvariantViolation("vocabulary must start with the reserved block")
        self._ids = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self._ids) != len(self.id_to_token):
            raise InvariantViolation("duplicate token in vocabulary")
        if len(self.id_to_token) > MAX_VOCAB:
            raise VocabOverflow(f"{len(self.id_to_token)} tokens exceeds {MAX_VOCAB}")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} not in vocabulary") from None

    def token(self, i: int) -> str:
        if not 0 <= i < len(self.id_to_token):
            raise OutOfRange(f"id {i} outside vocabulary of {len(self.id_to_token)}")
        return self.id_to_token[i]


def chain_to_tokens(chain: ReasoningChain) -> list[str]:
    """Flatten a chain to tokens: each section is its tag then payload tokens."""
    out: list[str] = []
    for step in chain.steps:
        out.append(TAGS[step.kind])
        if step.kind == StepKind.GRIPPER_POSITION:
            x, y = step.payload
            out.extend([f"c{x}", f"c{y}"])
        elif step.kind == StepKind.VISIBLE_OBJECTS:
            for name, box in step.payload:
                out.append(name)
                out.extend(f"c{v}" for v in box)
        else:
            out.extend(step.payload.split())
    if chain.action is not None:
        out.append(ACTION_TAG)
        out.extend(f"b{b}" for b in chain.action.bins)
        out.append(f"g:{chain.action.grip}")
    return out


def tokens_to_chain(tokens) -> ReasoningChain:
    """Rebuild a chain from tokens by reconstructing its canonical text."""
    lines: list[str] = []
    words: list[str] = []
    section = None

    def flush() -> None:
        if section is not None:
            lines.append(f"{section}: {' '.join(words)}" if words else f"{section}:")

    for tok in tokens:
        if tok in TAG_TOKENS:
            flush()
            section, words = tok, []
            continue
        if section is None:
            raise MalformedAction(f"token {tok!r} before any section tag")
        if section in ("GRIPPER", "OBJECTS") and tok.startswith("c") and tok[1:].isdigit():
            words.append(tok[1:])
        elif section == ACTION_TAG and tok.startswith("b") and tok[1:].isdigit():
            words.append(tok[1:])
        elif section == ACTION_TAG and tok.startswith("g:"):
            words.append(tok[2:])
        else:
            words.append(tok)
    flush()
    return parse_chain("\n".join(lines) + "\n")


# Words every vocabulary carries so a policy can name any movement
# primitive at decode time, even when a corpus never exercised one.
CORE_WORDS = tuple(sorted({w for p in MOVE_PRIMITIVES for w in p.split()}))


def build_vocab(samples) -> Vocabulary:
    """Reserved block plus every corpus token seen, in sorted order."""
    corpus: set[str] = set(CORE_WORDS)
    for s in samples:
        corpus.update(s.obs_tokens)
        corpus.update(s.goal.split())
        corpus.update(chain_to_tokens(s.chain))
    corpus -= set(RESERVED)
    return Vocabulary(RESERVED + tuple(sorted(corpus)))


def vocab_to_text(vocab: Vocabulary) -> str:
    return "".join(f"{t}\t{i}\n" for i, t in enumerate(vocab.id_to_token))


def vocab_from_text(text: str) -> Vocabulary:
    tokens: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[1].isdigit():
            raise InvariantViolation(f"vocab line {lineno} is not token<TAB>id")
        if int(parts[1]) != lineno - 1:
            raise InvariantViolation(f"vocab ids must be contiguous from 0, line {lineno}")
        tokens.append(parts[0])
    return Vocabulary(tuple(tokens))


def quantize_delta(x: float) -> int:
    return int(np.clip(np.round(x / ACTION_STEP), -ZERO_BIN, ZERO_BIN)) + ZERO_BIN


def dequantize_delta(b: int) -> float:
    if not 0 <= b < ACTION_BINS:
        raise MalformedAction(f"bin {b} outside [0, {ACTION_BINS - 1}]")
    return (b - ZERO_BIN) * ACTION_STEP


def discretize_action(action: Action) -> DiscreteAction:
    if action.grip not in GRIP_WORDS:
        raise MalformedAction(f"grip {action.grip!r} not in {GRIP_WORDS}")
    d = np.asarray(action.dpos, dtype=float)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise MalformedAction(f"dpos {action.dpos!r} must be three finite numbers")
    if np.any(np.abs(d) > MAX_DPOS + 1e-9):
        raise MalformedAction(f"dpos {action.dpos} exceeds bound {MAX_DPOS}")
    bins = tuple(quantize_delta(float(v)) for v in d)
    return DiscreteAction(bins, action.grip)


def undiscretize_action(da: DiscreteAction) -> Action:
    if da.grip not in GRIP_WORDS:
        raise MalformedAction(f"grip {da.grip!r} not in {GRIP_WORDS}")
    return Action(tuple(dequantize_delta(b) for b in da.bins), da.grip)


@dataclass
class EncodedSample:
    ids: np.ndarray          # int32 [L], starts with BOS
    targets: np.ndarray      # int32 [L], next token at each position
    supervision: np.ndarray  # int8 [L], SUP_* code for each target
    source: str


def encode_prefix(obs_tokens, goal: str, vocab: Vocabulary) -> np.ndarray:
    ids = [BOS_ID]
    ids.extend(vocab.id(t) for t in obs_tokens)
    ids.extend(vocab.id(w) for w in goal.split())
    return np.asarray(ids, dtype=np.int32)


def encode_sample(sample, vocab: Vocabulary, context: int = 256) -> EncodedSample:
    """Encode a labeled sample (anything with obs_tokens, goal, chain, source)."""
    prefix = encode_prefix(sample.obs_tokens, sample.goal, vocab)
    chain_tokens = chain_to_tokens(sample.chain)
    ids = np.concatenate([
        prefix,
        np.asarray([vocab.id(t) for t in chain_tokens], dtype=np.int32),
    ])
    if len(ids) > context:
        raise ContextOverflow(f"sample of {len(ids)} tokens exceeds context {context}")

    targets = np.concatenate([ids[1:], np.asarray([PAD_ID], dtype=np.int32)])
    supervision = np.zeros(len(ids), dtype=np.int8)
    chain_start = len(prefix)
    n_action = 5 if sample.chain.action is not None else 0
    reasoning_code = SUP_REASONING if sample.source == "robot" else SUP_FREE
    for t in range(len(ids) - 1):
        j = t + 1
        if j < chain_start:
            continue
        if n_action and j >= len(ids) - n_action:
            supervision[t] = SUP_ACTION
        else:
            supervision[t] = reasoning_code
    return EncodedSample(ids, targets, supervision, sample.source)
