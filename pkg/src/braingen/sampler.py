"""Ancestral reverse-process generation from Gaussian noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import ConditionEmbedding
from .errors import BrainGenError, ConfigError, NumericError
from .schedule import NoiseSchedule
from .store import NormalizationStats, denormalize
from .unet import Denoiser, crop_to_original, pad_to_grid, predict_noise


@dataclass
class SamplerState:
    y_t: torch.Tensor
    t: int
    generator: torch.Generator
    last_noise: torch.Tensor | None = None


def reverse_step(state: SamplerState, eps_hat: torch.Tensor,
                 sched: NoiseSchedule) -> SamplerState:
    """y_{t-1} = (y_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t) + sigma_t z.

    z is a fresh standard-normal draw, forced to zero at t = 1.
    """
    t = state.t
    if t < 1:
        raise BrainGenError(f"sampler already terminal at t={t}")
    if eps_hat.shape != state.y_t.shape:
        raise ConfigError(f"eps_hat {tuple(eps_hat.shape)} vs state {tuple(state.y_t.shape)}")
    alpha = sched.alpha(t)
    abar = sched.alpha_bar(t)
    mean = (state.y_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    sigma = sched.sigma(t)
    if t == 1 or sigma == 0.0:
        z = torch.zeros_like(state.y_t)
    else:
        z = torch.randn(state.y_t.shape, generator=state.generator,
                        dtype=state.y_t.dtype)
    y_prev = mean + sigma * z
    if not torch.all(torch.isfinite(y_prev)):
        raise NumericError(f"non-finite sample state at t={t - 1}")
    return SamplerState(y_t=y_prev, t=t - 1, generator=state.generator, last_noise=z)


def generate(model: Denoiser, cond: ConditionEmbedding, sched: NoiseSchedule,
             seed: int, n_samples: int, stats: NormalizationStats | None = None,
             view: str = "physical") -> list[np.ndarray]:
    """Draw n_samples signals of shape cfg.sample_shape for one condition.

    Each sample runs on an independent rng stream derived from (seed, index).
    `view` selects de-normalized physical units ("physical", needs stats) or
    the normalized scale the model was trained on ("normalized").
    """
    if view not in ("physical", "normalized"):
        raise ConfigError(f"unknown view {view!r}")
    if view == "physical" and stats is None:
        raise ConfigError("physical view requires normalization stats")
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    probe = torch.zeros((1, 1) + cfg.sample_shape, dtype=dtype)
    _, spec = pad_to_grid(probe)
    tokens = torch.as_tensor(cond.tokens, dtype=dtype)

    out: list[np.ndarray] = []
    with torch.no_grad():
        for i in range(n_samples):
            gen = torch.Generator().manual_seed(
                int(np.random.SeedSequence([seed & 0xFFFFFFFF, i]).generate_state(1)[0])
            )
            state = SamplerState(
                y_t=torch.randn((1, 1) + spec.padded, generator=gen, dtype=dtype),
                t=sched.T,
                generator=gen,
            )
            while state.t >= 1:
                eps_hat = predict_noise(model, state.y_t, state.t, tokens)
                state = reverse_step(state, eps_hat, sched)
            y0 = crop_to_original(state.y_t, spec)[0, 0].numpy()
            if view == "physical":
                y0 = denormalize(y0, stats)
            out.append(np.asarray(y0, dtype=np.float64))
    return out
