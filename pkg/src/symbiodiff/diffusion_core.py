"""Noise schedule, forward diffusion and the deterministic (eta = 0) DDIM update.

All tensors follow the (batch, channel, height, width) layout. Schedule tables
are kept in float64 and cast to the working dtype on use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch


@dataclass(frozen=True)
class DiffusionSchedule:
    num_train_steps: int
    betas: torch.Tensor  # float64, (T,)
    alpha_bars: torch.Tensor  # float64, (T,)
    inference_steps: int

    @property
    def timesteps(self) -> list[int]:
        """Descending sampler grid, evenly strided over ``{0..T-1}`` ending at ``T-1``."""
        return inference_timesteps(self.num_train_steps, self.inference_steps)

    def with_inference_steps(self, n: int) -> "DiffusionSchedule":
        if not 1 <= n <= self.num_train_steps:
            raise ValueError(f"inference_steps must be in [1, {self.num_train_steps}], got {n}")
        return DiffusionSchedule(self.num_train_steps, self.betas, self.alpha_bars, n)

    def alpha_bar(self, t) -> torch.Tensor:
        """ᾱ_t for an int or integer tensor; ``t = -1`` maps to 1 (clean data)."""
        t = torch.as_tensor(t, dtype=torch.long)
        padded = torch.cat([self.alpha_bars.new_ones(1), self.alpha_bars])
        return padded[t + 1]


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                  inference_steps: int = 20) -> DiffusionSchedule:
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if not 1 <= inference_steps <= T:
        raise ValueError(f"inference_steps must be in [1, {T}], got {inference_steps}")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha_bars = torch.cumprod(1.0 - betas, dim=0)
    return DiffusionSchedule(T, betas, alpha_bars, inference_steps)


def inference_timesteps(T: int, n: int) -> list[int]:
    stride = T // n
    return [T - 1 - i * stride for i in range(n)]


def _coef(sched: DiffusionSchedule, t, like: torch.Tensor) -> torch.Tensor:
    a = sched.alpha_bar(t).to(dtype=like.dtype, device=like.device)
    if a.ndim == 0:
        return a
    return a.view(-1, *([1] * (like.ndim - 1)))


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """Sample ``z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` may be per-sample."""
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    tt = torch.as_tensor(t)
    if (tt < 0).any() or (tt >= sched.num_train_steps).any():
        raise ValueError(f"timestep out of range [0, {sched.num_train_steps})")
    a = _coef(sched, t, z0)
    return a.sqrt() * z0 + (1.0 - a).sqrt() * eps


def predict_x0(z_t: torch.Tensor, t, eps_pred: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    a = _coef(sched, t, z_t)
    return (z_t - (1.0 - a).sqrt() * eps_pred) / a.sqrt()


def ddim_transfer(z: torch.Tensor, t_from: int, t_to: int, eps_pred: torch.Tensor,
                  sched: DiffusionSchedule) -> torch.Tensor:
    """Move ``z`` from noise level ``t_from`` to ``t_to`` along the eta=0 DDIM path.

    Works in both directions; ``-1`` denotes clean data.
    """
    if t_from == t_to:
        return z.clone()
    x0 = predict_x0(z, t_from, eps_pred, sched)
    if t_to == -1:
        return x0
    a_to = _coef(sched, t_to, z)
    return a_to.sqrt() * x0 + (1.0 - a_to).sqrt() * eps_pred


def sampler_step(z_t: torch.Tensor, t: int, t_prev: int, eps_pred: torch.Tensor,
                 sched: DiffusionSchedule, clip: Optional[float] = None) -> torch.Tensor:
    """One eta=0 step from ``t`` to ``t_prev``.

    With ``clip`` set, the implied clean estimate is clamped to ``[-clip, clip]``
    and the noise re-derived from it, which keeps early high-noise steps from
    amplifying prediction error when the data range is known.
    """
    if eps_pred.shape != z_t.shape:
        raise ValueError(f"eps_pred shape {tuple(eps_pred.shape)} != z_t shape {tuple(z_t.shape)}")
    if t_prev > t or t_prev < -1 or t >= sched.num_train_steps:
        raise ValueError(f"non-monotone or out-of-range timesteps: t={t}, t_prev={t_prev}")
    if clip is not None:
        a = _coef(sched, t, z_t)
        x0 = predict_x0(z_t, t, eps_pred, sched).clamp(-clip, clip)
        eps_pred = (z_t - a.sqrt() * x0) / (1.0 - a).sqrt()
    return ddim_transfer(z_t, t, t_prev, eps_pred, sched)


def previous_timesteps(steps: list[int]) -> list[int]:
    return steps[1:] + [-1]


EpsFn = Callable[[torch.Tensor, int], torch.Tensor]


@torch.no_grad()
def sample_loop(z_T: torch.Tensor, denoiser: EpsFn, sched: DiffusionSchedule) -> torch.Tensor:
    """Run the deterministic sampler from ``z_T`` down to clean data."""
    steps = sched.timesteps
    z = z_T
    for t, t_prev in zip(steps, previous_timesteps(steps)):
        z = sampler_step(z, t, t_prev, denoiser(z, t), sched)
    return z


@torch.no_grad()
def sampler_invert(z0: torch.Tensor, denoiser: EpsFn, sched: DiffusionSchedule) -> torch.Tensor:
    """Approximate inverse of :func:`sample_loop`.

    Forward-Euler inversion: the noise at the target level is estimated from the
    current (less noisy) state, evaluated with the target timestep label.
    """
    steps = sched.timesteps[::-1]
    z = z0
    t_from = -1
    for t in steps:
        z = ddim_transfer(z, t_from, t, denoiser(z, t), sched)
        t_from = t
    return z
