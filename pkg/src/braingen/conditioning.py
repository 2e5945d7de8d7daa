"""Fusion of visual-embedding tokens into brain-signal activations.

Three interchangeable strategies: cross-attention (default), addition,
and concatenation. All operate on activations of shape (..., L, d_model)
with condition tokens of shape (S, cond_dim).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DataError, ShapeError
from .substrate import softmax_rows


class FusionMode(enum.Enum):
    CROSS_ATTENTION = "cross_attention"
    ADDITION = "addition"
    CONCATENATION = "concatenation"


@dataclass
class ConditionEmbedding:
    """S x cond_dim visual-embedding tokens for one image."""

    tokens: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        self.tokens = np.atleast_2d(np.asarray(self.tokens, dtype=np.float64))
        if self.tokens.shape[0] < 1:
            raise DataError(f"condition for {self.image_id!r} has no tokens")
        if not np.all(np.isfinite(self.tokens)):
            raise DataError(f"condition for {self.image_id!r} contains non-finite values")

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass
class CrossAttentionWeights:
    w_q: torch.Tensor   # d_model x d_attn
    w_k: torch.Tensor   # cond_dim x d_attn
    w_v: torch.Tensor   # cond_dim x d_attn
    w_out: torch.Tensor  # d_attn x d_model
    heads: int = 1

    def __post_init__(self):
        if self.w_q.shape[1] % self.heads != 0:
            raise ShapeError(
                f"attention width {self.w_q.shape[1]} not divisible by {self.heads} heads"
            )

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1] // self.heads


def _as_tokens(cond, dtype, device) -> torch.Tensor:
    if isinstance(cond, ConditionEmbedding):
        return torch.as_tensor(cond.tokens, dtype=dtype, device=device)
    return cond


def attention_rows(h_brain: torch.Tensor, tokens: torch.Tensor, w: CrossAttentionWeights) -> torch.Tensor:
    """Multi-head attention output before the final projection.

    Each row is a convex combination of value rows (per head), so every
    coordinate stays within the value-column range.
    """
    q = h_brain @ w.w_q
    k = tokens @ w.w_k
    v = tokens @ w.w_v

    def split(x):  # (..., L, d_attn) -> (..., heads, L, d_k)
        return x.reshape(*x.shape[:-1], w.heads, w.d_k).transpose(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    logits = qh @ kh.transpose(-2, -1) / math.sqrt(w.d_k)
    att = softmax_rows(logits) @ vh  # (..., heads, L, d_k)
    return att.transpose(-3, -2).reshape(*h_brain.shape[:-1], w.heads * w.d_k)


def cross_attention(h_brain: torch.Tensor, cond, w: CrossAttentionWeights) -> torch.Tensor:
    """Queries from activations, keys/values from condition tokens; residual add."""
    tokens = _as_tokens(cond, h_brain.dtype, h_brain.device)
    if tokens.shape[-1] != w.w_k.shape[0]:
        raise ShapeError(
            f"condition width {tokens.shape[-1]} does not match key projection {tuple(w.w_k.shape)}"
        )
    return h_brain + attention_rows(h_brain, tokens, w) @ w.w_out


def fuse_addition(h_brain: torch.Tensor, cond, proj: torch.Tensor) -> torch.Tensor:
    """Add the projected token mean to every position."""
    tokens = _as_tokens(cond, h_brain.dtype, h_brain.device)
    if tokens.shape[-1] != proj.shape[0]:
        raise ShapeError(
            f"condition width {tokens.shape[-1]} does not match projection {tuple(proj.shape)}"
        )
    if proj.shape[1] != h_brain.shape[-1]:
        raise ShapeError(
            f"projection {tuple(proj.shape)} does not match activation width {h_brain.shape[-1]}"
        )
    pooled = tokens.mean(dim=-2) @ proj
    return h_brain + pooled.unsqueeze(-2)


def fuse_concatenation(h_brain: torch.Tensor, cond, proj: torch.Tensor) -> torch.Tensor:
    """Concatenate the token mean to every position, then map back to d_model."""
    tokens = _as_tokens(cond, h_brain.dtype, h_brain.device)
    d_model = h_brain.shape[-1]
    cond_dim = tokens.shape[-1]
    if proj.shape[0] != d_model + cond_dim or proj.shape[1] != d_model:
        raise ShapeError(
            f"projection {tuple(proj.shape)} does not match concat width "
            f"{d_model}+{cond_dim} -> {d_model}"
        )
    pooled = tokens.mean(dim=-2).unsqueeze(-2)
    expanded = pooled.expand(*h_brain.shape[:-1], cond_dim)
    return torch.cat([h_brain, expanded], dim=-1) @ proj
