"""Grammar-constrained greedy decoding of reasoning chains.

A finite-state machine walks the chain sections in rank order and exposes,
at every step, exactly the token ids that keep the output parseable: section
tags in sequence, free text with a length cap, the movement-primitive
sub-grammar, coordinate pairs, name-plus-box groups, then the action tokens.
Decoding masks the logits to the allowed set and takes the argmax, so every
completed decode parses by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import PAD_ID, RESERVED, Vocabulary
from .errors import DecodeOverflow, InvariantViolation
from .model import LN_EPS, Params
from .world import CATEGORY_HALF

_TAG_IDS = {r: r + 1 for r in range(1, 8)}   # rank r tag token id
_ACTION_TAG_ID = 9
_GRIP_IDS = (10, 11, 12)
_BIN_IDS = tuple(range(13, 24))
_COORD_LO = RESERVED.index("c0")
_COORD_HI = _COORD_LO + 256

_DIRECTIONS = ("forward", "backward", "left", "right", "up", "down")


@dataclass(frozen=True)
class _State:
    section: int      # 1..7 chain sections, 8 action, 9 done
    sub: int          # -1 awaiting tag, else progress within the section
    extra: int        # primitive branch or completed rank-7 groups
    c0: int = 0       # pending box minimum along x, constrains the maximum
    c1: int = 0       # pending box minimum along y


class ChainGrammar:
    """Allowed-token sets and transitions for constrained chain decoding."""

    def __init__(self, vocab: Vocabulary, names=None,
                 payload_cap: int = 24, max_groups: int = 8):
        self.payload_cap = payload_cap
        self.max_groups = max_groups
        n_reserved = len(RESERVED)
        self.text_ids = tuple(range(n_reserved, len(vocab)))
        if not self.text_ids:
            raise InvariantViolation("vocabulary has no text tokens")

        def wid(word: str):
            return vocab.id(word) if word in vocab else None

        self.stop_id = wid("stop")
        self.move_id = wid("move")
        self.close_id = wid("close")
        self.open_id = wid("open")
        self.gripper_id = wid("gripper")
        self.dir_ids = tuple(i for i in (wid(w) for w in _DIRECTIONS) if i is not None)
        starts = [i for i in (self.stop_id, self.move_id, self.close_id, self.open_id)
                  if i is not None]
        if not starts:
            raise InvariantViolation("vocabulary cannot express any movement primitive")
        self.prim_start_ids = tuple(starts)
        names = CATEGORY_HALF.keys() if names is None else names
        self.name_ids = tuple(sorted(vocab.id(n) for n in names if n in vocab))
        self.coord_ids = tuple(range(_COORD_LO, _COORD_HI))

    def initial(self) -> _State:
        return _State(1, -1, 0)

    def is_done(self, state: _State) -> bool:
        return state.section == 9

    def allowed_ids(self, state: _State) -> tuple[int, ...]:
        s = state
        if s.section == 9:
            return ()
        if s.sub == -1:
            return (_TAG_IDS[s.section],)
        if s.section in (1, 2, 3, 4):
            if s.sub == 0:
                return self.text_ids
            nxt = _TAG_IDS[s.section + 1]
            if s.sub >= self.payload_cap:
                return (nxt,)
            return self.text_ids + (nxt,)
        if s.section == 5:
            if s.sub == 0:
                return self.prim_start_ids
            if s.extra == 1:                      # after "move"
                return self.dir_ids
            if s.extra == 2:                      # after "close"/"open"
                return (self.gripper_id,)
            return (_TAG_IDS[6],)
        if s.section == 6:
            if s.sub < 2:
                return self.coord_ids
            return (_TAG_IDS[7],)
        if s.section == 7:
            if s.sub == 0:
                if state.extra >= self.max_groups:
                    return (_ACTION_TAG_ID,)
                return self.name_ids + (_ACTION_TAG_ID,)
            if s.sub == 3:
                return tuple(range(_COORD_LO + s.c0, _COORD_HI))
            if s.sub == 4:
                return tuple(range(_COORD_LO + s.c1, _COORD_HI))
            return self.coord_ids
        # action section: three bins then a grip word
        if s.sub < 3:
            return _BIN_IDS
        return _GRIP_IDS

    def advance(self, state: _State, token: int) -> _State:
        if token not in self.allowed_ids(state):
            raise InvariantViolation(f"token {token} not allowed in state {state}")
        s = state
        if s.sub == -1:
            return _State(s.section, 0, 0)
        if s.section in (1, 2, 3, 4):
            if token == _TAG_IDS[s.section + 1]:
                return _State(s.section + 1, 0, 0)
            return _State(s.section, s.sub + 1, 0)
        if s.section == 5:
            if s.sub == 0:
                if token == self.stop_id:
                    return _State(5, 1, 3)
                if token == self.move_id:
                    return _State(5, 1, 1)
                return _State(5, 1, 2)
            if s.extra in (1, 2):
                return _State(5, 2, 3)
            return _State(6, 0, 0)               # consumed the GRIPPER tag
        if s.section == 6:
            if s.sub < 2:
                return _State(6, s.sub + 1, 0)
            return _State(7, 0, 0)               # consumed the OBJECTS tag
        if s.section == 7:
            if s.sub == 0:
                if token == _ACTION_TAG_ID:
                    return _State(8, 0, 0)
                return _State(7, 1, s.extra)
            if s.sub == 1:
                return _State(7, 2, s.extra, token - _COORD_LO, 0)
            if s.sub == 2:
                return _State(7, 3, s.extra, s.c0, token - _COORD_LO)
            if s.sub == 3:
                return _State(7, 4, s.extra, s.c0, s.c1)
            return _State(7, 0, s.extra + 1)     # group complete
        if s.sub < 3:
            return _State(8, s.sub + 1, 0)
        return _State(9, 0, 0)


_GELU_C = math.sqrt(2.0 / math.pi)


def _ln(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class _Decoder:
    """Incremental transformer inference with per-layer key/value caches.

    Prefill runs one full pass over the padded prompts and stores every
    key and value; each generated token then costs a single-position pass
    that attends over the cache, instead of recomputing the whole prefix.
    """

    def __init__(self, params: Params, batch: int):
        config = params.config
        self.a = params.arrays
        self.config = config
        self.hd = config.width // config.heads
        shape = (batch, config.heads, config.context, self.hd)
        self.k = [np.zeros(shape, dtype=config.dtype) for _ in range(config.layers)]
        self.v = [np.zeros(shape, dtype=config.dtype) for _ in range(config.layers)]
        self.lens = np.zeros(batch, dtype=np.int64)

    def prefill(self, ids: np.ndarray, lens: np.ndarray) -> np.ndarray:
        a, cfg = self.a, self.config
        b, t = ids.shape
        d, nh, hd = cfg.width, cfg.heads, self.hd
        h = a["tok_emb"][ids] + a["pos_emb"][:t]
        causal = np.triu(np.full((t, t), -1e9, dtype=cfg.dtype), k=1)
        for i in range(cfg.layers):
            p = f"l{i}."
            x = _ln(h, a[p + "ln1.g"], a[p + "ln1.b"])
            qkv = x @ a[p + "attn.wqkv"] + a[p + "attn.bqkv"]
            q = qkv[:, :, :d].reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
            k = qkv[:, :, d:2 * d].reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
            v = qkv[:, :, 2 * d:].reshape(b, t, nh, hd).transpose(0, 2, 1, 3)
            self.k[i][:, :, :t] = k
            self.v[i][:, :, :t] = v
            scores = q @ k.swapaxes(-1, -2) * (1.0 / math.sqrt(hd)) + causal
            ctx = (_softmax(scores) @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
            h = h + (ctx @ a[p + "attn.wo"] + a[p + "attn.bo"])
            x = _ln(h, a[p + "ln2.g"], a[p + "ln2.b"])
            x = _gelu(x @ a[p + "mlp.w1"] + a[p + "mlp.b1"])
            h = h + (x @ a[p + "mlp.w2"] + a[p + "mlp.b2"])
        last = _ln(h[np.arange(b), lens - 1], a["lnf.g"], a["lnf.b"])
        self.lens = lens.astype(np.int64).copy()
        return last @ a["head.w"]

    def step(self, tokens: np.ndarray, active: np.ndarray) -> np.ndarray:
        """Append one token per row and return next-token logits.

        Inactive rows overwrite their own last slot so their caches never
        grow; their logits are meaningless and must be ignored.
        """
        a, cfg = self.a, self.config
        b = tokens.shape[0]
        d, nh, hd = cfg.width, cfg.heads, self.hd
        pos = np.where(active, self.lens, self.lens - 1)
        rows = np.arange(b)
        h = a["tok_emb"][tokens] + a["pos_emb"][pos]
        width = int(pos.max()) + 1
        reach = np.arange(width)[None, None, :] > pos[:, None, None]
        for i in range(cfg.layers):
            p = f"l{i}."
            x = _ln(h, a[p + "ln1.g"], a[p + "ln1.b"])
            qkv = x @ a[p + "attn.wqkv"] + a[p + "attn.bqkv"]
            q = qkv[:, :d].reshape(b, nh, hd)
            self.k[i][rows, :, pos] = qkv[:, d:2 * d].reshape(b, nh, hd)
            self.v[i][rows, :, pos] = qkv[:, 2 * d:].reshape(b, nh, hd)
            keys = self.k[i][:, :, :width]
            scores = np.einsum("bhd,bhwd->bhw", q, keys) * (1.0 / math.sqrt(hd))
            scores = np.where(reach, np.asarray(-1e9, dtype=cfg.dtype), scores)
            att = _softmax(scores)
            ctx = np.einsum("bhw,bhwd->bhd", att, self.v[i][:, :, :width])
            h = h + (ctx.reshape(b, d) @ a[p + "attn.wo"] + a[p + "attn.bo"])
            x = _ln(h, a[p + "ln2.g"], a[p + "ln2.b"])
            x = _gelu(x @ a[p + "mlp.w1"] + a[p + "mlp.b1"])
            h = h + (x @ a[p + "mlp.w2"] + a[p + "mlp.b2"])
        out = _ln(h, a["lnf.g"], a["lnf.b"]) @ a["head.w"]
        self.lens = np.where(active, self.lens + 1, self.lens)
        return out


def decode_batch(params: Params, prefixes, grammar: ChainGrammar):
    """Greedy constrained decode for several prefixes in lockstep.

    Returns one token-id list per prefix, or None where the model context
    would be exceeded.  All sequences share one incremental forward pass
    per generated token; rows retire as their grammars complete.
    """
    context = params.config.context
    n = len(prefixes)
    lens = np.array([len(p) for p in prefixes], dtype=np.int64)
    failed = [int(lens[i]) >= context for i in range(n)]
    done = [False] * n
    outs: list[list[int]] = [[] for _ in range(n)]
    states = [grammar.initial() for _ in range(n)]
    if all(failed):
        return [None] * n

    width = int(min(lens.max(), context))
    padded = np.full((n, width), PAD_ID, dtype=np.int64)
    for i, prefix in enumerate(prefixes):
        row = np.asarray(prefix, dtype=np.int64)[:width]
        padded[i, :len(row)] = row
    dec = _Decoder(params, n)
    logits = dec.prefill(padded, np.minimum(lens, width))

    while True:
        chosen = np.zeros(n, dtype=np.int64)
        active = np.zeros(n, dtype=bool)
        for i in range(n):
            if done[i] or failed[i]:
                continue
            if int(dec.lens[i]) >= context:
                failed[i] = True
                continue
            allowed = grammar.allowed_ids(states[i])
            token = int(allowed[int(np.argmax(logits[i, np.asarray(allowed)]))])
            outs[i].append(token)
            states[i] = grammar.advance(states[i], token)
            chosen[i] = token
            active[i] = True
            if grammar.is_done(states[i]):
                done[i] = True
        if not active.any():
            break
        if all(done[i] or failed[i] for i in range(n)):
            # final tokens need no further prediction
            break
        logits = dec.step(chosen, active)
    return [None if failed[i] else outs[i] for i in range(n)]


def decode(params: Params, prefix, grammar: ChainGrammar) -> list[int]:
    out = decode_batch(params, [prefix], grammar)[0]
    if out is None:
        raise DecodeOverflow("decode exceeded the model context")
    return out
