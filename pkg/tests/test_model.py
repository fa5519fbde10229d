import math

import numpy as np
import pytest

from chainpolicy import autodiff as ad
from chainpolicy.codec import SUP_ACTION, SUP_FREE, SUP_REASONING
from chainpolicy.errors import EmptySupervision, InvariantViolation
from chainpolicy.model import (
    ModelConfig,
    cast_params,
    forward,
    init_params,
    loss_and_grads,
    masked_loss,
)

from gradcheck import max_rel_err, random_batch

TINY = ModelConfig(vocab_size=20, layers=1, heads=2, width=8, context=16,
                   seed=0, dtype="float64")
SMALL = ModelConfig(vocab_size=64, layers=2, heads=2, width=16, context=32, seed=1)


def test_config_validation():
    with pytest.raises(InvariantViolation):
        ModelConfig(vocab_size=10, heads=3, width=8)
    with pytest.raises(InvariantViolation):
        ModelConfig(vocab_size=10, dtype="float16")


def test_init_deterministic():
    a = init_params(SMALL)
    b = init_params(SMALL)
    assert sorted(a.arrays) == sorted(b.arrays)
    for k in a.arrays:
        assert np.array_equal(a.arrays[k], b.arrays[k])
    c = init_params(ModelConfig(vocab_size=64, layers=2, heads=2, width=16,
                                context=32, seed=2))
    assert not np.array_equal(a.arrays["tok_emb"], c.arrays["tok_emb"])


def test_init_shapes_and_residual_scaling():
    p = init_params(SMALL)
    d, v = SMALL.width, SMALL.vocab_size
    assert p.arrays["tok_emb"].shape == (v, d)
    assert p.arrays["pos_emb"].shape == (SMALL.context, d)
    assert p.arrays["l0.attn.wqkv"].shape == (d, 3 * d)
    assert p.arrays["l1.mlp.w2"].shape == (4 * d, d)
    assert p.arrays["head.w"].shape == (d, v)
    assert p.arrays["tok_emb"].dtype == np.float32
    wide = np.std(p.arrays["l0.attn.wqkv"])
    narrow = np.std(p.arrays["l0.attn.wo"])
    assert narrow < wide * 0.7


def test_forward_shapes_and_batching():
    p = init_params(SMALL)
    ids = np.arange(10, dtype=np.int32) % SMALL.vocab_size
    with ad.no_grad():
        single = forward(p, ids)
        batched = forward(p, np.stack([ids, ids]))
    assert single.shape == (10, SMALL.vocab_size)
    assert batched.shape == (2, 10, SMALL.vocab_size)
    assert np.array_equal(single.data, batched.data[0])
    assert np.array_equal(batched.data[0], batched.data[1])


def test_forward_rejects_overlong_input():
    p = init_params(SMALL)
    with pytest.raises(InvariantViolation):
        with ad.no_grad():
            forward(p, np.zeros(SMALL.context + 1, dtype=np.int32))


def test_initial_loss_near_uniform():
    p = init_params(SMALL)
    rng = np.random.default_rng(3)
    ids, targets, sup = random_batch(rng, SMALL.vocab_size, 4, 20)
    with ad.no_grad():
        loss, _ = masked_loss(forward(p, ids), targets, sup)
    assert abs(float(loss.data) - math.log(SMALL.vocab_size)) < 0.1 * math.log(SMALL.vocab_size)


def test_causal_masking_exact():
    p = init_params(SMALL)
    rng = np.random.default_rng(4)
    ids = rng.integers(0, SMALL.vocab_size, size=12).astype(np.int32)
    with ad.no_grad():
        base = forward(p, ids).data.copy()
    changed = ids.copy()
    changed[8] = (changed[8] + 1) % SMALL.vocab_size
    with ad.no_grad():
        out = forward(p, changed).data
    assert np.array_equal(base[:8], out[:8])
    assert not np.array_equal(base[8:], out[8:])


def test_masked_loss_matches_manual_cross_entropy():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(2, 4, 7))
    targets = rng.integers(0, 7, size=(2, 4))
    sup = np.array([[0, 2, 1, 0], [3, 0, 0, 2]], dtype=np.int8)
    loss, stats = masked_loss(ad.Tensor(logits), targets, sup)

    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    manual = -picked[sup > 0].sum() / (sup > 0).sum()
    assert float(loss.data) == pytest.approx(manual, rel=1e-12)
    assert stats["count"] == 4


def test_masked_positions_contribute_exactly_nothing():
    p = init_params(SMALL)
    rng = np.random.default_rng(6)
    ids, targets, sup = random_batch(rng, SMALL.vocab_size, 2, 16)
    with ad.no_grad():
        base, _ = masked_loss(forward(p, ids), targets, sup)
    perturbed = targets.copy()
    masked_at = np.argwhere(sup == 0)
    for r, c in masked_at:
        perturbed[r, c] = (perturbed[r, c] + 7) % SMALL.vocab_size
    with ad.no_grad():
        after, _ = masked_loss(forward(p, ids), perturbed, sup)
    assert abs(float(base.data) - float(after.data)) <= 1e-12


def test_component_sums_partition_total():
    p = init_params(SMALL)
    rng = np.random.default_rng(7)
    ids, targets, sup = random_batch(rng, SMALL.vocab_size, 3, 18)
    with ad.no_grad():
        _, stats = masked_loss(forward(p, ids), targets, sup)
    total = stats["action_sum"] + stats["reasoning_sum"] + stats["free_sum"]
    assert abs(total - stats["total_sum"]) <= 1e-9
    assert stats["action_count"] + stats["reasoning_count"] + stats["free_count"] \
        == stats["count"]


def test_empty_supervision_raises():
    p = init_params(SMALL)
    ids = np.zeros((1, 4), dtype=np.int32)
    with pytest.raises(EmptySupervision):
        with ad.no_grad():
            masked_loss(forward(p, ids), ids, np.zeros((1, 4), dtype=np.int8))


def test_gradients_match_finite_differences():
    params = init_params(TINY)
    rng = np.random.default_rng(8)
    ids, targets, sup = random_batch(rng, TINY.vocab_size, 2, 7)
    assert max_rel_err(params, ids, targets, sup) <= 1e-4


def test_loss_and_grads_finite_and_complete():
    p = init_params(SMALL)
    rng = np.random.default_rng(9)
    ids, targets, sup = random_batch(rng, SMALL.vocab_size, 2, 12)
    grads, stats = loss_and_grads(p, ids, targets, sup)
    assert sorted(grads) == sorted(p.arrays)
    for k, g in grads.items():
        assert g.shape == p.arrays[k].shape
        assert np.all(np.isfinite(g)), k
    assert math.isfinite(stats["loss"])


def test_cast_params():
    p = init_params(SMALL)
    q = cast_params(p, "float64")
    assert q.config.dtype == "float64"
    assert q.arrays["tok_emb"].dtype == np.float64
    assert np.allclose(q.arrays["tok_emb"], p.arrays["tok_emb"])
