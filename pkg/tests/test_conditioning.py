import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from braingen.conditioning import (
    ConditionEmbedding,
    CrossAttentionWeights,
    FusionMode,
    attention_rows,
    cross_attention,
    fuse_addition,
    fuse_concatenation,
)
from braingen.errors import DataError, ShapeError

T = torch.float64


def _weights(d_model=6, cond_dim=4, heads=1, seed=0):
    gen = torch.Generator().manual_seed(seed)

    def mk(*shape):
        return torch.randn(*shape, generator=gen, dtype=T)

    return CrossAttentionWeights(
        w_q=mk(d_model, d_model), w_k=mk(cond_dim, d_model),
        w_v=mk(cond_dim, d_model), w_out=mk(d_model, d_model), heads=heads,
    )


def test_condition_embedding_promotes_vectors():
    c = ConditionEmbedding(tokens=np.arange(4.0))
    assert c.tokens.shape == (1, 4)
    assert c.dim == 4


def test_condition_embedding_rejects_non_finite():
    with pytest.raises(DataError):
        ConditionEmbedding(tokens=np.array([1.0, np.nan]))


def test_head_divisibility():
    with pytest.raises(ShapeError):
        _weights(d_model=6, heads=4)
    assert _weights(d_model=6, heads=3).d_k == 2


def test_single_key_returns_value_row_exactly():
    # One condition token: softmax over a single logit is exactly 1, so the
    # attention output is the value row regardless of queries and keys.
    w = _weights()
    h = torch.randn(5, 6, generator=torch.Generator().manual_seed(1), dtype=T)
    token = torch.randn(1, 4, generator=torch.Generator().manual_seed(2), dtype=T)
    v = token @ w.w_v
    out = attention_rows(h, token, w)
    assert torch.allclose(out, v.expand(5, 6), atol=0, rtol=0)
    fused = cross_attention(h, token, w)
    assert torch.allclose(fused, h + v @ w.w_out, atol=1e-14)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_token_permutation_invariance(seed):
    gen = torch.Generator().manual_seed(seed)
    w = _weights(seed=seed)
    h = torch.randn(3, 6, generator=gen, dtype=T)
    tokens = torch.randn(5, 4, generator=gen, dtype=T)
    perm = torch.randperm(5, generator=gen)
    a = cross_attention(h, tokens, w)
    b = cross_attention(h, tokens[perm], w)
    assert torch.allclose(a, b, atol=1e-6)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=100, deadline=None)
def test_attention_output_within_value_range(seed):
    # Each attention coordinate is a convex combination of value rows.
    gen = torch.Generator().manual_seed(seed)
    w = _weights(heads=2, seed=seed)
    h = torch.randn(4, 6, generator=gen, dtype=T)
    tokens = torch.randn(7, 4, generator=gen, dtype=T)
    out = attention_rows(h, tokens, w)
    v = (tokens @ w.w_v)  # (7, 6); heads split column-wise
    lo = v.min(dim=0).values - 1e-12
    hi = v.max(dim=0).values + 1e-12
    assert torch.all(out >= lo) and torch.all(out <= hi)


def test_cross_attention_width_mismatch():
    w = _weights()
    h = torch.zeros(2, 6, dtype=T)
    with pytest.raises(ShapeError):
        cross_attention(h, torch.zeros(1, 5, dtype=T), w)


def test_fuse_addition_adds_projected_mean_everywhere():
    gen = torch.Generator().manual_seed(3)
    h = torch.randn(4, 6, generator=gen, dtype=T)
    tokens = torch.randn(3, 5, generator=gen, dtype=T)
    proj = torch.randn(5, 6, generator=gen, dtype=T)
    out = fuse_addition(h, tokens, proj)
    shift = tokens.mean(dim=0) @ proj
    assert torch.allclose(out - h, shift.expand(4, 6), atol=1e-14)


def test_fuse_addition_linear_in_tokens():
    gen = torch.Generator().manual_seed(4)
    h = torch.zeros(2, 6, dtype=T)
    a = torch.randn(3, 5, generator=gen, dtype=T)
    b = torch.randn(3, 5, generator=gen, dtype=T)
    proj = torch.randn(5, 6, generator=gen, dtype=T)
    lhs = fuse_addition(h, a + b, proj)
    rhs = fuse_addition(h, a, proj) + fuse_addition(h, b, proj)
    assert torch.allclose(lhs, rhs, atol=1e-12)


def test_fuse_concatenation_projection_shape():
    h = torch.zeros(2, 6, dtype=T)
    tokens = torch.zeros(1, 5, dtype=T)
    with pytest.raises(ShapeError):
        fuse_concatenation(h, tokens, torch.zeros(10, 6, dtype=T))
    out = fuse_concatenation(h, tokens, torch.zeros(11, 6, dtype=T))
    assert out.shape == (2, 6)


@pytest.mark.parametrize("fuse", ["attention", "addition", "concatenation"])
def test_batched_matches_per_sample(fuse):
    # A batch of activation planes with a batch of conditions must equal the
    # per-sample computation stacked back together.
    gen = torch.Generator().manual_seed(9)
    h = torch.randn(3, 4, 6, generator=gen, dtype=T)
    tokens = torch.randn(3, 2, 5, generator=gen, dtype=T)
    if fuse == "attention":
        w = _weights(d_model=6, cond_dim=5, heads=2)
        run = lambda hh, tt: cross_attention(hh, tt, w)
    elif fuse == "addition":
        proj = torch.randn(5, 6, generator=gen, dtype=T)
        run = lambda hh, tt: fuse_addition(hh, tt, proj)
    else:
        proj = torch.randn(11, 6, generator=gen, dtype=T)
        run = lambda hh, tt: fuse_concatenation(hh, tt, proj)
    batched = run(h, tokens)
    stacked = torch.stack([run(h[i], tokens[i]) for i in range(3)])
    assert torch.allclose(batched, stacked, atol=1e-12)


def test_fusion_mode_values():
    assert FusionMode("cross_attention") is FusionMode.CROSS_ATTENTION
    assert {m.value for m in FusionMode} == {
        "cross_attention", "addition", "concatenation"
    }
