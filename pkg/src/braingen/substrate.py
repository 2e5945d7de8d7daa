"""Differentiable numeric building blocks.

Backed by torch (CPU); the contracts below are what the rest of the
package relies on, independent of the backend. 64-bit mode means every
tensor involved is float64, which is required for gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ConfigError, NumericError, ShapeError

DTYPE64 = torch.float64


@dataclass
class Param:
    """A named learnable tensor with its accumulated gradient."""

    name: str
    value: torch.Tensor

    def __post_init__(self):
        self.value.requires_grad_(True)

    @property
    def gradient(self) -> torch.Tensor:
        if self.value.grad is None:
            return torch.zeros_like(self.value)
        return self.value.grad


def affine_map(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """y[i, j] = sum_k x[i, k] * weight[k, j] + bias[j]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"affine_map: input width {tuple(x.shape)} does not match weight {tuple(weight.shape)}"
        )
    if bias.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"affine_map: bias {tuple(bias.shape)} does not match weight {tuple(weight.shape)}"
        )
    return x @ weight + bias


def conv2d(x: torch.Tensor, kernel: torch.Tensor, stride: int = 1, pad: int = 0) -> torch.Tensor:
    """Cross-correlation over a (C_in, H, W) or (B, C_in, H, W) input.

    Output extent (H + 2*pad - k) / stride + 1 must be integral.
    """
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {tuple(kernel.shape)}")
    k = kernel.shape[-1]
    if k % 2 == 0:
        raise ConfigError(f"conv2d: kernel extent must be odd, got {k}")
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d: invalid stride={stride} pad={pad}")
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv2d: input channels {tuple(x.shape)} vs kernel {tuple(kernel.shape)}"
        )
    for extent in (x.shape[2], x.shape[3]):
        if (extent + 2 * pad - k) % stride != 0:
            raise ShapeError(
                f"conv2d: non-integral output extent for input {extent}, k={k}, "
                f"stride={stride}, pad={pad}"
            )
    y = torch.nn.functional.conv2d(x, kernel, stride=stride, padding=pad)
    return y.squeeze(0) if squeeze else y


def softmax_rows(m: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax with max subtraction for stability."""
    shifted = m - m.max(dim=-1, keepdim=True).values
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def silu(x: torch.Tensor) -> torch.Tensor:
    return x * torch.sigmoid(x)


def group_count(channels: int, max_groups: int = 32) -> int:
    """Group-norm group count: 32, reduced to the channel count when smaller.

    Falls back to the largest divisor of `channels` not exceeding the target
    so the grouping is always valid.
    """
    target = min(max_groups, channels)
    for g in range(target, 0, -1):
        if channels % g == 0:
            return g
    return 1


def finite_diff_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[Param],
    eps: float = 1e-5,
    sample_count: int = 100,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of `loss_fn` against central differences.

    Samples `sample_count` scalar coordinates uniformly across all params and
    returns the worst relative error, with denominator
    max(|analytic|, |numeric|, 1e-8). Requires 64-bit params.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ConfigError(f"finite_diff_check: eps {eps} outside [1e-7, 1e-3]")
    for p in params:
        if p.value.dtype != DTYPE64:
            raise ConfigError(f"finite_diff_check requires float64 params, {p.name} is {p.value.dtype}")
        if p.value.grad is not None:
            p.value.grad = None

    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericError(f"finite_diff_check: non-finite loss {loss.item()}")
    loss.backward()
    analytic = {p.name: p.gradient.detach().clone() for p in params}

    rng = np.random.default_rng(seed)
    sizes = np.array([p.value.numel() for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(sample_count, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for flat_idx in picks:
            pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
            ci = int(flat_idx - offsets[pi])
            p = params[pi]
            flat = p.value.view(-1)
            orig = flat[ci].item()

            flat[ci] = orig + eps
            with torch.enable_grad():
                lp = loss_fn()
            flat[ci] = orig - eps
            with torch.enable_grad():
                lm = loss_fn()
            flat[ci] = orig
            if not (torch.isfinite(lp) and torch.isfinite(lm)):
                raise NumericError("finite_diff_check: non-finite perturbed loss")

            numeric = (lp.item() - lm.item()) / (2.0 * eps)
            a = analytic[p.name].view(-1)[ci].item()
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
