"""Sampling loops: region customisation, outpainting and signature sweeps.

After every sampler update the preserved part of the latent is overwritten by
the scene, forward-diffused to the new level (the clean scene after the final
step). The decoded image is composited once more at pixel level, so preserved
pixels are returned exactly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import torch

from .diffusion_core import DiffusionSchedule, forward_diffuse, previous_timesteps, sampler_step
from .instrumentation import AttentionTrace
from .recycling import cfg_combine

_SPARSE_STREAM = 0x5EED


@dataclass
class CustomizationRequest:
    scene: torch.Tensor  # (B, C, H, W) pixels in [-1, 1]
    mask: torch.Tensor  # (B, 1, H, W), 1 = preserve scene
    subject: torch.Tensor  # (B, C, H, W) pixels in [-1, 1]
    guidance: float = 1.0
    lam_inf: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mask.shape[-2:] != self.scene.shape[-2:]:
            raise ValueError("mask and scene sizes differ")
        if self.subject.shape != self.scene.shape:
            raise ValueError("subject must be resized to the scene/model resolution")
        if not 0.0 <= self.lam_inf <= 1.0:
            raise ValueError("lam_inf must be in [0, 1]")
        if self.guidance < 0:
            raise ValueError("guidance must be >= 0")


def _foreground_box(subject: torch.Tensor):
    """Bounding box of pixels that differ from the subject's corner (ground) colour."""
    ground = subject[:, :1, :1]
    fg = (subject - ground).abs().amax(0) > 0.05
    ys, xs = torch.nonzero(fg, as_tuple=True)
    if len(ys) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def aspect_mismatch(mask: torch.Tensor, subject: torch.Tensor, tol: float = 1.25) -> bool:
    region = torch.nonzero(mask[0] < 0.5, as_tuple=True)
    box = _foreground_box(subject)
    if len(region[0]) == 0 or box is None:
        return False
    rh = int(region[0].max() - region[0].min()) + 1
    rw = int(region[1].max() - region[1].min()) + 1
    sw, sh = box[2] - box[0], box[3] - box[1]
    return abs(math.log((rw / rh) / (sw / sh))) > math.log(tol)


def blend(z: torch.Tensor, scene_t: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Preserved cells (mask 1) take the scene latent, the region keeps ``z``."""
    return mask * scene_t + (1 - mask) * z


@torch.no_grad()
def customize_latent(req: CustomizationRequest, system, sched: DiffusionSchedule,
                     traces: Optional[list] = None) -> torch.Tensor:
    """Run the blended sampler and return the final latent.

    Pass a list as ``traces`` to collect one :class:`AttentionTrace` per step.
    """
    if getattr(system, "trained_steps", 0) == 0:
        warnings.warn("customizing with an untrained model", RuntimeWarning, stacklevel=3)
    for i in range(req.mask.shape[0]):
        if aspect_mismatch(req.mask[i], req.subject[i]):
            warnings.warn("subject and region aspect ratios differ; the subject may be repeated",
                          RuntimeWarning, stacklevel=3)
            break
    codec = system.codec
    dtype = next(system.parameters()).dtype
    scene = codec.encode(req.scene.to(dtype))
    subject = codec.encode(req.subject.to(dtype))
    mask = system.latent_mask(req.mask.to(dtype))
    g = torch.Generator().manual_seed(req.seed)
    g_sparse = torch.Generator().manual_seed(req.seed ^ _SPARSE_STREAM)
    z = torch.randn(scene.shape, generator=g, dtype=dtype)
    subject_noise = torch.randn(scene.shape, generator=g, dtype=dtype)
    tokens = system.semantic_tokens(subject, scene, mask)
    steps = sched.timesteps
    for t, t_prev in zip(steps, previous_timesteps(steps)):
        eps, trace = system.predict_eps(z, scene, mask, subject, subject_noise, t, sched, lam=req.lam_inf,
                                        generator=g_sparse, tokens=tokens, record=traces is not None)
        if traces is not None:
            traces.append(trace)
        if req.guidance != 1:
            eps_u, _ = system.predict_eps(z, scene, mask, subject, subject_noise, t, sched, tokens=tokens,
                                          unconditional=True)
            eps = cfg_combine(eps_u, eps, req.guidance)
        z = sampler_step(z, t, t_prev, eps, sched, clip=codec.value_range)
        if t_prev >= 0:
            scene_t = forward_diffuse(scene, t_prev, torch.randn(scene.shape, generator=g, dtype=dtype), sched)
        else:
            scene_t = scene
        z = blend(z, scene_t, mask)
    return z


def customize_region(req: CustomizationRequest, system, sched: DiffusionSchedule,
                     traces: Optional[list] = None) -> torch.Tensor:
    """Generate the masked region from the subject; returns pixels in [-1, 1].

    The decoded latent is composited with the scene once more at pixel level.
    """
    z = customize_latent(req, system, sched, traces)
    out = system.codec.decode(z)
    keep = req.mask.to(out.dtype)
    return keep * req.scene.to(out.dtype) + (1 - keep) * out


def outpaint(req: CustomizationRequest, system, sched: DiffusionSchedule,
             traces: Optional[list] = None) -> torch.Tensor:
    """Keep the masked-out (subject) area exactly and regenerate everything else."""
    return customize_region(replace(req, mask=1 - req.mask), system, sched, traces)


def signature_sweep(req: CustomizationRequest, system, sched: DiffusionSchedule,
                    lambdas: list[float]) -> list[torch.Tensor]:
    """One customisation per inference threshold, all sharing the request seed."""
    if not lambdas:
        raise ValueError("lambdas must not be empty")
    if list(lambdas) != sorted(lambdas) or min(lambdas) < 0 or max(lambdas) > 1:
        raise ValueError("lambdas must be ascending values in [0, 1]")
    return [customize_region(replace(req, lam_inf=float(lam)), system, sched) for lam in lambdas]


def concat_traces(traces: list[AttentionTrace]) -> AttentionTrace:
    out = AttentionTrace()
    for tr in traces:
        out.extend(tr)
    return out
