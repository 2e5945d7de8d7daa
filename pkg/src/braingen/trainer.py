"""Noise-prediction training: loss, AdamW with decoupled weight decay,
and the epoch loop with checkpointing and loss logging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericError
from .schedule import NoiseSchedule
from .store import Archive, compute_stats, make_batches, normalize
from .substrate import Param
from .unet import Denoiser, named_params, pad_to_grid


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    max_steps: int | None = None       # optional cap for smoke runs
    grad_clip: float | None = None     # off unless set
    checkpoint_every: int = 1          # epochs

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError(
                f"invalid rates lr={self.learning_rate} wd={self.weight_decay}"
            )
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class LossTrace:
    records: list[tuple[int, int, int, float]] = field(default_factory=list)

    def add(self, epoch: int, step: int, t_bucket: int, loss: float) -> None:
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
        if self.records and step <= self.records[-1][1]:
            raise NumericError(f"step counter went backwards at {step}")
        self.records.append((epoch, step, t_bucket, loss))

    @property
    def losses(self) -> list[float]:
        return [r[3] for r in self.records]


def draw_timesteps_noise(shape, sched: NoiseSchedule, generator: torch.Generator,
                         dtype=torch.float64):
    """Uniform t in [1, T] per sample plus standard-normal noise of `shape`."""
    b = shape[0]
    t = torch.randint(1, sched.T + 1, (b,), generator=generator)
    eps = torch.randn(shape, generator=generator, dtype=dtype)
    return t, eps


def diffusion_loss_given(model: Denoiser, y0: torch.Tensor, tokens: torch.Tensor,
                         t: torch.Tensor, eps: torch.Tensor,
                         sched: NoiseSchedule) -> torch.Tensor:
    """Deterministic noise-prediction MSE for fixed (t, eps) draws."""
    abar = torch.as_tensor(sched.alpha_bars, dtype=y0.dtype)[t - 1]
    abar = abar.view(-1, *([1] * (y0.ndim - 1)))
    y_t = torch.sqrt(abar) * y0 + torch.sqrt(1.0 - abar) * eps
    eps_hat = model(y_t, t.to(y0.dtype), tokens)
    per_sample = ((eps - eps_hat) ** 2).mean(dim=tuple(range(1, y0.ndim)))
    if not torch.all(torch.isfinite(per_sample)):
        bad = int(torch.nonzero(~torch.isfinite(per_sample))[0])
        raise NumericError(f"non-finite diffusion loss for sample {bad}")
    return per_sample.mean()


def diffusion_loss(model: Denoiser, y0: torch.Tensor, tokens: torch.Tensor,
                   sched: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Per sample: t ~ U[1, T], eps ~ N(0, I), MSE between eps and eps_hat."""
    if y0.shape[0] == 0:
        raise ConfigError("diffusion_loss: empty batch")
    t, eps = draw_timesteps_noise(y0.shape, sched, generator, dtype=y0.dtype)
    return diffusion_loss_given(model, y0, tokens, t, eps, sched)


class AdamWState:
    def __init__(self, params: list[Param]):
        self.step = 0
        self.m = {p.name: torch.zeros_like(p.value) for p in params}
        self.v = {p.name: torch.zeros_like(p.value) for p in params}


def adamw_step(params: list[Param], state: AdamWState, lr: float,
               weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """One AdamW update; weight decay applied directly to weights."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for p in params:
            grad = p.value.grad
            if grad is None:
                grad = torch.zeros_like(p.value)
            if weight_decay:
                p.value.mul_(1.0 - lr * weight_decay)
            m, v = state.m[p.name], state.v[p.name]
            m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.value.addcdiv_(m, denom, value=-lr / bc1)


def _t_bucket(t: torch.Tensor, T: int) -> int:
    return min(9, int(10 * (float(t.to(torch.float64).mean()) - 1) / T))


def train(cfg: TrainConfig, model: Denoiser, archive: Archive, provider,
          sched: NoiseSchedule, out_dir, subject: str,
          schedule_params: dict | None = None, split: str = "train"):
    """Full training run; returns (final checkpoint path, LossTrace).

    Batching order, t draws, and noise draws all derive from cfg.seed, so a
    re-run with the same seed reproduces checkpoints bit for bit.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule_params = schedule_params or {
        "T": sched.T,
        "beta_start": float(sched.betas[0]),
        "beta_end": float(sched.betas[-1]),
    }
    stats = compute_stats(archive, subject, split)
    params = named_params(model)
    state = AdamWState(params)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 0x5EED)
    trace = LossTrace()
    dtype = next(model.parameters()).dtype

    step = 0
    best_loss = math.inf
    log_path = out_dir / "loss_log.txt"
    final_path = out_dir / "checkpoint_final.bgck"
    with open(log_path, "w", encoding="utf-8") as log:
        stop = False
        for epoch in range(1, cfg.epochs + 1):
            epoch_losses: list[float] = []
            for signals, image_ids in make_batches(archive, subject, split,
                                                   cfg.batch_size, cfg.seed, epoch):
                y0 = normalize(signals, stats)
                y0 = torch.as_tensor(y0, dtype=dtype).unsqueeze(1)
                y0, _ = pad_to_grid(y0)
                tokens = torch.stack([
                    torch.as_tensor(provider.get(i).tokens, dtype=dtype)
                    for i in image_ids
                ])
                t, eps = draw_timesteps_noise(y0.shape, sched, noise_gen, dtype=dtype)
                loss = diffusion_loss_given(model, y0, tokens, t, eps, sched)

                for p in params:
                    p.value.grad = None
                loss.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_([p.value for p in params], cfg.grad_clip)
                adamw_step(params, state, cfg.learning_rate, cfg.weight_decay)

                step += 1
                value = float(loss.detach())
                epoch_losses.append(value)
                trace.add(epoch, step, _t_bucket(t, sched.T), value)
                log.write(f"{epoch}\t{step}\t{value:.6f}\n")
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    stop = True
                    break
            epoch_mean = sum(epoch_losses) / len(epoch_losses)
            if epoch_mean < best_loss:
                best_loss = epoch_mean
                save_checkpoint(out_dir / "checkpoint_best.bgck", model,
                                schedule_params, cfg.seed, epoch, stats)
            if epoch % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch:04d}.bgck", model,
                                schedule_params, cfg.seed, epoch, stats)
            if stop:
                break
    save_checkpoint(final_path, model, schedule_params, cfg.seed, epoch, stats)
    return final_path, trace
