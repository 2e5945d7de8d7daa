"""Noise-prediction network: a 4-level encoder-decoder over the
(1 x channels x time) signal plane with condition fusion in the deep levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .conditioning import (
    ConditionEmbedding,
    CrossAttentionWeights,
    FusionMode,
    cross_attention,
    fuse_addition,
    fuse_concatenation,
)
from .errors import ConfigError, NumericError, ShapeError
from .substrate import DTYPE64, Param, group_count, silu

DOWN_FACTOR = 8  # three stride-2 downsamples


@dataclass
class DenoiserConfig:
    sample_shape: tuple[int, int]
    level_channels: tuple[int, int, int, int] = (128, 256, 512, 512)
    attn_levels: tuple[int, ...] = (3, 4)   # mid block always fuses
    cross_attn_dim: int = 768
    heads: int = 8
    time_embed_dim: int = 128
    fusion: FusionMode = FusionMode.CROSS_ATTENTION
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if isinstance(self.fusion, str):
            self.fusion = FusionMode(self.fusion)
        self.level_channels = tuple(self.level_channels)
        self.attn_levels = tuple(self.attn_levels)
        self.sample_shape = tuple(self.sample_shape)
        if len(self.level_channels) != 4:
            raise ConfigError(f"need 4 level channels, got {self.level_channels}")
        if self.time_embed_dim % 2 != 0:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        for lvl in self.attn_levels:
            if self.level_channels[lvl - 1] % self.heads != 0:
                raise ConfigError(
                    f"level {lvl} width {self.level_channels[lvl - 1]} not divisible "
                    f"by {self.heads} heads"
                )

    @property
    def padded_shape(self) -> tuple[int, int]:
        n_c, n_t = self.sample_shape
        return (_next_multiple(n_c, DOWN_FACTOR), _next_multiple(n_t, DOWN_FACTOR))


@dataclass(frozen=True)
class PadSpec:
    original: tuple[int, int]
    padded: tuple[int, int]
    offsets: tuple[int, int] = (0, 0)


def _next_multiple(n: int, m: int) -> int:
    return ((n + m - 1) // m) * m


def pad_to_grid(y: torch.Tensor) -> tuple[torch.Tensor, PadSpec]:
    """Zero-pad the trailing two axes up to the next multiple of 8."""
    n_c, n_t = y.shape[-2], y.shape[-1]
    pc, pt = _next_multiple(n_c, DOWN_FACTOR), _next_multiple(n_t, DOWN_FACTOR)
    spec = PadSpec(original=(n_c, n_t), padded=(pc, pt))
    if (pc, pt) == (n_c, n_t):
        return y, spec
    padded = torch.nn.functional.pad(y, (0, pt - n_t, 0, pc - n_c))
    return padded, spec


def crop_to_original(y: torch.Tensor, spec: PadSpec) -> torch.Tensor:
    n_c, n_t = spec.original
    return y[..., :n_c, :n_t]


def time_embed(t, dim: int) -> torch.Tensor:
    """Raw sinusoidal embedding: half sin, half cos, geometric frequency
    spacing over [1, 1e4]. Accepts a scalar step or a batch of steps."""
    if dim % 2 != 0:
        raise ConfigError(f"time embedding dim must be even, got {dim}")
    t = torch.as_tensor(t, dtype=DTYPE64)
    scalar = t.ndim == 0
    if scalar:
        t = t.unsqueeze(0)
    half = dim // 2
    if half == 1:
        freqs = torch.ones(1, dtype=DTYPE64)
    else:
        exponent = torch.arange(half, dtype=DTYPE64) / (half - 1)
        freqs = torch.pow(torch.tensor(1e4, dtype=DTYPE64), -exponent)
    angles = t[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    return emb[0] if scalar else emb


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, dtype=DTYPE64):
        super().__init__()
        self.norm1 = nn.GroupNorm(group_count(c_in), c_in, dtype=dtype)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1, dtype=dtype)
        self.time_proj = nn.Linear(time_dim, c_out, dtype=dtype)
        self.norm2 = nn.GroupNorm(group_count(c_out), c_out, dtype=dtype)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, dtype=dtype)
        self.skip = (
            nn.Conv2d(c_in, c_out, 1, dtype=dtype) if c_in != c_out else nn.Identity()
        )

    def forward(self, x, temb):
        h = self.conv1(silu(self.norm1(x)))
        h = h + self.time_proj(silu(temb))[:, :, None, None]
        h = self.conv2(silu(self.norm2(h)))
        return h + self.skip(x)


class FusionBlock(nn.Module):
    """Injects the condition into a (B, C, H, W) activation, mode-dependent."""

    def __init__(self, channels: int, cond_dim: int, heads: int, mode: FusionMode,
                 dtype=DTYPE64):
        super().__init__()
        self.mode = mode
        self.heads = heads
        if mode is FusionMode.CROSS_ATTENTION:
            self.w_q = nn.Parameter(torch.empty(channels, channels, dtype=dtype))
            self.w_k = nn.Parameter(torch.empty(cond_dim, channels, dtype=dtype))
            self.w_v = nn.Parameter(torch.empty(cond_dim, channels, dtype=dtype))
            self.w_out = nn.Parameter(torch.empty(channels, channels, dtype=dtype))
        elif mode is FusionMode.ADDITION:
            self.proj = nn.Parameter(torch.empty(cond_dim, channels, dtype=dtype))
        else:
            self.proj = nn.Parameter(torch.empty(channels + cond_dim, channels, dtype=dtype))

    def forward(self, x, tokens):
        b, c, h, w = x.shape
        seq = x.reshape(b, c, h * w).transpose(1, 2)  # (B, L, C)
        if self.mode is FusionMode.CROSS_ATTENTION:
            weights = CrossAttentionWeights(self.w_q, self.w_k, self.w_v, self.w_out,
                                            heads=self.heads)
            seq = cross_attention(seq, tokens, weights)
        elif self.mode is FusionMode.ADDITION:
            seq = fuse_addition(seq, tokens, self.proj)
        else:
            seq = fuse_concatenation(seq, tokens, self.proj)
        return seq.transpose(1, 2).reshape(b, c, h, w)


class Downsample(nn.Module):
    def __init__(self, channels: int, dtype=DTYPE64):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Nearest-neighbor x2 followed by a conv that also changes width."""

    def __init__(self, c_in: int, c_out: int, dtype=DTYPE64):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(torch.nn.functional.interpolate(x, scale_factor=2, mode="nearest"))


class _Level(nn.Module):
    """Two residual units, each optionally followed by a fusion block."""

    def __init__(self, c_ins, c_out, cfg: DenoiserConfig, fused: bool, dtype=DTYPE64):
        super().__init__()
        self.res = nn.ModuleList(
            [ResBlock(c_in, c_out, cfg.time_embed_dim, dtype=dtype) for c_in in c_ins]
        )
        self.fusions = nn.ModuleList(
            [
                FusionBlock(c_out, cfg.cross_attn_dim, cfg.heads, cfg.fusion, dtype=dtype)
                for _ in c_ins
            ]
            if fused
            else []
        )


class Denoiser(nn.Module):
    """eps_theta(y_t, t, h_img) over padded single-channel signal planes."""

    def __init__(self, cfg: DenoiserConfig, dtype=DTYPE64):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.level_channels
        chans = cfg.level_channels
        ted = cfg.time_embed_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(ted, ted, dtype=dtype), nn.SiLU(), nn.Linear(ted, ted, dtype=dtype)
        )
        self.stem = nn.Conv2d(cfg.in_channels, c1, 3, padding=1, dtype=dtype)

        self.enc = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = c1
        for lvl in range(1, 5):
            c = chans[lvl - 1]
            self.enc.append(
                _Level((prev, c), c, cfg, fused=lvl in cfg.attn_levels, dtype=dtype)
            )
            prev = c
            if lvl < 4:
                self.downs.append(Downsample(c, dtype=dtype))

        self.mid_res1 = ResBlock(c4, c4, ted, dtype=dtype)
        self.mid_fusion = FusionBlock(c4, cfg.cross_attn_dim, cfg.heads, cfg.fusion,
                                      dtype=dtype)
        self.mid_res2 = ResBlock(c4, c4, ted, dtype=dtype)

        self.dec = nn.ModuleList()
        self.ups = nn.ModuleList()
        for lvl in range(4, 0, -1):
            c = chans[lvl - 1]
            self.dec.append(
                _Level((2 * c, 2 * c), c, cfg, fused=lvl in cfg.attn_levels, dtype=dtype)
            )
            if lvl > 1:
                self.ups.append(Upsample(c, chans[lvl - 2], dtype=dtype))

        self.out_norm = nn.GroupNorm(group_count(c1), c1, dtype=dtype)
        self.out_conv = nn.Conv2d(c1, cfg.out_channels, 3, padding=1, dtype=dtype)

    def reset_parameters(self, seed: int) -> None:
        """normal(0, 0.02) weights, zero biases/norms-as-default, zero output conv."""
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if p.ndim >= 2:
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            else:
                kind = name.rsplit(".", 1)[-1]
                with torch.no_grad():
                    if "norm" in name and kind == "weight":
                        p.fill_(1.0)
                    else:
                        p.zero_()
        with torch.no_grad():
            self.out_conv.weight.zero_()
            self.out_conv.bias.zero_()

    def _run_level(self, level: _Level, h, temb, tokens, skips=None, push=None):
        for i, res in enumerate(level.res):
            if skips is not None:
                h = torch.cat([h, skips.pop()], dim=1)
            h = res(h, temb)
            if level.fusions:
                h = level.fusions[i](h, tokens)
            if push is not None:
                push.append(h)
        return h

    def forward(self, y_t: torch.Tensor, t, tokens: torch.Tensor) -> torch.Tensor:
        squeeze = y_t.ndim == 3
        if squeeze:
            y_t = y_t.unsqueeze(0)
        b = y_t.shape[0]
        t = torch.as_tensor(t, dtype=y_t.dtype)
        if t.ndim == 0:
            t = t.expand(b)
        temb = self.time_mlp(time_embed(t, self.cfg.time_embed_dim).to(y_t.dtype))

        h = self.stem(y_t)
        skips: list[torch.Tensor] = []
        for lvl in range(4):
            h = self._run_level(self.enc[lvl], h, temb, tokens, push=skips)
            if lvl < 3:
                h = self.downs[lvl](h)

        h = self.mid_res1(h, temb)
        h = self.mid_fusion(h, tokens)
        h = self.mid_res2(h, temb)

        for i in range(4):
            h = self._run_level(self.dec[i], h, temb, tokens, skips=skips)
            if i < 3:
                h = self.ups[i](h)

        out = self.out_conv(silu(self.out_norm(h)))
        return out.squeeze(0) if squeeze else out


def build_denoiser(cfg: DenoiserConfig, seed: int, dtype=DTYPE64) -> Denoiser:
    model = Denoiser(cfg, dtype=dtype)
    model.reset_parameters(seed)
    return model


def named_params(model: nn.Module) -> list[Param]:
    return [Param(name, p) for name, p in model.named_parameters()]


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def predict_noise(model: Denoiser, y_t: torch.Tensor, t, cond) -> torch.Tensor:
    """Validated forward pass; output shape equals input shape."""
    cfg = model.cfg
    if isinstance(cond, ConditionEmbedding):
        if cond.dim != cfg.cross_attn_dim:
            raise ShapeError(
                f"condition width {cond.dim} != configured {cfg.cross_attn_dim}"
            )
        tokens = torch.as_tensor(cond.tokens, dtype=next(model.parameters()).dtype)
    else:
        tokens = cond
    if y_t.shape[-2:] != cfg.padded_shape:
        raise ShapeError(
            f"input plane {tuple(y_t.shape[-2:])} != padded shape {cfg.padded_shape}"
        )
    eps_hat = model(y_t, t, tokens)
    if not torch.all(torch.isfinite(eps_hat)):
        raise NumericError("denoiser produced non-finite activations in the output block")
    return eps_hat
