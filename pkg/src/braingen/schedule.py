"""Diffusion variance schedule and the forward (noising) process.

Time steps are 1-based: t runs over 1..T, matching the usual notation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray          # beta_t, index t-1
    alphas: np.ndarray         # 1 - beta_t
    alpha_bars: np.ndarray     # cumulative product of alphas
    posterior_vars: np.ndarray = field(repr=False, default=None)  # sigma_t^2, sigma_1^2 = 0

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return float(np.sqrt(self.posterior_vars[t - 1]))

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise IndexError(f"time step {t} outside [1, {self.T}]")


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from beta_start (t=1) to beta_end (t=T)."""
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    # Posterior variance beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t,
    # with abar_0 = 1, which forces sigma_1^2 = 0 (deterministic final step).
    alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior_vars = (1.0 - alpha_bars_prev) / (1.0 - alpha_bars) * betas
    posterior_vars[0] = 0.0
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         posterior_vars=posterior_vars)


def q_sample(y0, t: int, eps, sched: NoiseSchedule):
    """Closed-form forward process: y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps."""
    if getattr(y0, "shape", None) != getattr(eps, "shape", None):
        raise ShapeError(f"q_sample: y0 {getattr(y0, 'shape', '?')} vs eps {getattr(eps, 'shape', '?')}")
    abar = sched.alpha_bar(t)
    return np.sqrt(abar) * y0 + np.sqrt(1.0 - abar) * eps


def forward_step(y_prev, t: int, noise, sched: NoiseSchedule):
    """One forward Markov step: y_t = sqrt(1 - beta_t) y_prev + sqrt(beta_t) noise."""
    if getattr(y_prev, "shape", None) != getattr(noise, "shape", None):
        raise ShapeError(
            f"forward_step: y_prev {getattr(y_prev, 'shape', '?')} vs noise {getattr(noise, 'shape', '?')}"
        )
    beta = sched.beta(t)
    return np.sqrt(1.0 - beta) * y_prev + np.sqrt(beta) * noise
