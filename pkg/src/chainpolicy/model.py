"""Decoder-only transformer policy over token sequences.

Pre-norm blocks, learned positional embeddings, tanh-approximation GELU, and
a bias-free output head.  The loss is a masked next-token cross entropy whose
per-position supervision codes split it into action, reasoning, and
action-free reasoning components sharing one denominator, so the components
sum exactly to the total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import seeding
from .codec import SUP_ACTION, SUP_FREE, SUP_REASONING
from .errors import EmptySupervision, InvariantViolation

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    width: int = 128
    context: int = 256
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise InvariantViolation("width must be divisible by heads")
        if self.vocab_size < 2 or self.layers < 1 or self.context < 2:
            raise InvariantViolation("degenerate model configuration")
        if self.dtype not in ("float32", "float64"):
            raise InvariantViolation(f"unsupported dtype {self.dtype!r}")


@dataclass
class Params:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def init_params(config: ModelConfig) -> Params:
    """Seeded normal init; residual output projections are scaled down."""
    rng = seeding.stream(config.seed, "init")
    dt = np.dtype(config.dtype)
    d, v = config.width, config.vocab_size
    std = 0.02
    residual_std = std / math.sqrt(2.0 * config.layers)

    def normal(shape, scale):
        return rng.normal(0.0, scale, size=shape).astype(dt)

    def zeros(shape):
        return np.zeros(shape, dtype=dt)

    def ones(shape):
        return np.ones(shape, dtype=dt)

    arrays: dict[str, np.ndarray] = {
        "tok_emb": normal((v, d), std),
        "pos_emb": normal((config.context, d), std),
        "lnf.g": ones(d), "lnf.b": zeros(d),
        "head.w": normal((d, v), std),
    }
    for i in range(config.layers):
        p = f"l{i}."
        arrays[p + "ln1.g"] = ones(d)
        arrays[p + "ln1.b"] = zeros(d)
        arrays[p + "attn.wqkv"] = normal((d, 3 * d), std)
        arrays[p + "attn.bqkv"] = zeros(3 * d)
        arrays[p + "attn.wo"] = normal((d, d), residual_std)
        arrays[p + "attn.bo"] = zeros(d)
        arrays[p + "ln2.g"] = ones(d)
        arrays[p + "ln2.b"] = zeros(d)
        arrays[p + "mlp.w1"] = normal((d, 4 * d), std)
        arrays[p + "mlp.b1"] = zeros(4 * d)
        arrays[p + "mlp.w2"] = normal((4 * d, d), residual_std)
        arrays[p + "mlp.b2"] = zeros(d)
    return Params(config, arrays)


def cast_params(params: Params, dtype: str) -> Params:
    config = replace(params.config, dtype=dtype)
    return Params(config, {k: v.astype(dtype) for k, v in params.arrays.items()})


def param_tensors(params: Params) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=True) for k, v in params.arrays.items()}


def _layer_norm(x, g, b):
    m = ad.mean(x, axis=-1, keepdims=True)
    xc = x - m
    var = ad.mean(xc * xc, axis=-1, keepdims=True)
    return xc / ad.sqrt(var + LN_EPS) * g + b


def forward_tensors(tensors: dict[str, ad.Tensor], config: ModelConfig,
                    ids: np.ndarray) -> ad.Tensor:
    """Logits over the vocabulary at every position; ids is (T,) or (B, T)."""
    ids = np.asarray(ids)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    b, t = ids.shape
    if t > config.context:
        raise InvariantViolation(f"sequence of {t} exceeds context {config.context}")

    h = ad.embedding(tensors["tok_emb"], ids) + tensors["pos_emb"][:t]
    d, nh = config.width, config.heads
    hd = d // nh
    causal = np.triu(np.full((t, t), -1e9, dtype=config.dtype), k=1)

    for i in range(config.layers):
        p = f"l{i}."
        x = _layer_norm(h, tensors[p + "ln1.g"], tensors[p + "ln1.b"])
        qkv = x @ tensors[p + "attn.wqkv"] + tensors[p + "attn.bqkv"]

        def split(lo):
            part = qkv[:, :, lo:lo + d]
            return ad.transpose(ad.reshape(part, (b, t, nh, hd)), (0, 2, 1, 3))

        q, k, v = split(0), split(d), split(2 * d)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(hd)) + causal
        att = ad.softmax(scores, axis=-1)
        ctx = ad.reshape(ad.transpose(att @ v, (0, 2, 1, 3)), (b, t, d))
        h = h + (ctx @ tensors[p + "attn.wo"] + tensors[p + "attn.bo"])

        x = _layer_norm(h, tensors[p + "ln2.g"], tensors[p + "ln2.b"])
        x = ad.gelu(x @ tensors[p + "mlp.w1"] + tensors[p + "mlp.b1"])
        h = h + (x @ tensors[p + "mlp.w2"] + tensors[p + "mlp.b2"])

    x = _layer_norm(h, tensors["lnf.g"], tensors["lnf.b"])
    logits = x @ tensors["head.w"]
    return logits[0] if squeeze else logits


def forward(params: Params, ids: np.ndarray) -> ad.Tensor:
    return forward_tensors(param_tensors(params), params.config, ids)


def masked_loss(logits: ad.Tensor, targets: np.ndarray,
                supervision: np.ndarray) -> tuple[ad.Tensor, dict]:
    """Cross entropy over supervised positions, with exact component sums.

    Every component shares the same denominator (the supervised position
    count), so action + reasoning + action-free reasoning equals the total.
    Stats are float64 sums independent of the training dtype.
    """
    targets = np.asarray(targets)
    supervision = np.asarray(supervision)
    v = logits.shape[-1]
    flat = ad.reshape(logits, (-1, v))
    logp = ad.log_softmax(flat, axis=-1)
    nll = -ad.gather_last(logp, targets.reshape(-1))
    mask = (supervision.reshape(-1) > 0)
    count = int(mask.sum())
    if count == 0:
        raise EmptySupervision("batch has no supervised positions")
    loss = ad.sum_(nll * mask.astype(logits.dtype)) * (1.0 / count)

    nll64 = nll.data.astype(np.float64)
    sup = supervision.reshape(-1)
    stats = {
        "count": count,
        "total_sum": float(nll64[mask].sum()),
        "action_sum": float(nll64[sup == SUP_ACTION].sum()),
        "reasoning_sum": float(nll64[sup == SUP_REASONING].sum()),
        "free_sum": float(nll64[sup == SUP_FREE].sum()),
        "action_count": int((sup == SUP_ACTION).sum()),
        "reasoning_count": int((sup == SUP_REASONING).sum()),
        "free_count": int((sup == SUP_FREE).sum()),
    }
    return loss, stats


def loss_and_grads(params: Params, ids: np.ndarray, targets: np.ndarray,
                   supervision: np.ndarray) -> tuple[dict[str, np.ndarray], dict]:
    """One differentiated pass over a batch; grads keyed like the params."""
    tensors = param_tensors(params)
    logits = forward_tensors(tensors, params.config, ids)
    loss, stats = masked_loss(logits, targets, supervision)
    loss.backward()
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in tensors.items()
    }
    stats["loss"] = float(loss.data)
    return grads, stats
