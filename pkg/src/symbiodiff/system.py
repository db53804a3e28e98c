"""A complete trainable system: denoiser, semantic encoder and optional assistant.

``kind`` selects how subject signatures reach the generation pass:

=============  ==========================================================
symbiotic      the denoiser extracts its own signatures (model recycling)
referencenet   a separate copy of the denoiser extracts them
controlnet     an encoder copy adds zero-initialised residuals to the skips
blocked        nothing is delivered; semantic tokens only
=============  ==========================================================
"""
from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .baselines import ControlAssistant, control_forward, make_reference
from .codec import make_codec
from .denoiser import (Denoiser, DenoiserConfig, SemanticEncoder, SemanticTokens, compose_input,
                       compose_subject_input)
from .diffusion_core import DiffusionSchedule, forward_diffuse
from .recycling import SparsePolicy, draw_keep, gemini_step

SYSTEMS = ("symbiotic", "controlnet", "referencenet", "blocked")


class DiffusionSystem(nn.Module):
    def __init__(self, config: DenoiserConfig, kind: str = "symbiotic", seed: int = 0):
        super().__init__()
        if kind not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}, got {kind!r}")
        self.config = config
        self.kind = kind
        self.seed = seed
        self.codec = make_codec(config.codec, config.codec_factor)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.denoiser = Denoiser(config)
            self.encoder = SemanticEncoder(config)
        self.assistant: Optional[nn.Module] = None
        if kind == "referencenet":
            self.assistant = make_reference(self.denoiser)
        elif kind == "controlnet":
            self.assistant = ControlAssistant(self.denoiser)

    def latent_mask(self, mask: torch.Tensor) -> torch.Tensor:
        return self.codec.mask_to_latent(mask) if mask.shape[-1] != self.config.latent_size else mask

    def semantic_tokens(self, subject: torch.Tensor, scene: torch.Tensor, mask: torch.Tensor) -> SemanticTokens:
        """Tokens from the subject latent plus a background token from the masked scene."""
        return self.encoder(subject, self.latent_mask(mask).to(scene.dtype) * scene)

    def predict_eps(self, z_t: torch.Tensor, scene: torch.Tensor, mask: torch.Tensor, subject: torch.Tensor,
                    subject_noise: torch.Tensor, t, sched: DiffusionSchedule, lam: float = 1.0,
                    generator: Optional[torch.Generator] = None, cond_keep: Optional[torch.Tensor] = None,
                    tokens: Optional[SemanticTokens] = None, record: bool = False,
                    unconditional: bool = False):
        """Noise prediction for the generation status. Returns ``(eps, trace)``."""
        mask = self.latent_mask(mask)
        if tokens is None:
            tokens = self.semantic_tokens(subject, scene, mask)
        if unconditional:
            eps, _, trace = self.denoiser(compose_input(z_t, scene, mask).tensor(), t, tokens,
                                          mode="unconditional", mask=mask, record=record)
            return eps, trace
        if self.kind == "blocked":
            lam = 0.0
        policy = SparsePolicy(lam=lam)
        if self.kind in ("symbiotic", "blocked", "referencenet"):
            extractor = self.assistant if self.kind == "referencenet" else None
            return gemini_step(self.denoiser, z_t, scene, mask, subject, subject_noise, tokens, t, sched,
                               policy, generator, cond_keep=cond_keep, extractor=extractor, record=record)
        return self._control_eps(z_t, scene, mask, subject, subject_noise, tokens, t, sched, policy,
                                 generator, cond_keep, record)

    def _control_eps(self, z_t, scene, mask, subject, subject_noise, tokens, t, sched, policy, generator,
                     cond_keep, record):
        b = z_t.shape[0]
        x = compose_input(z_t, scene, mask)
        gen_tokens = tokens if cond_keep is None else tokens.keep(cond_keep)
        residuals = None
        if policy.lam > 0:
            gen = generator if generator is not None else policy.generator()
            keep = draw_keep(self.config.num_scales, b, policy.lam, gen)
            if cond_keep is not None:
                keep = keep & cond_keep.view(1, -1)
            if bool(keep.any()):
                z_sub = forward_diffuse(subject, t, subject_noise, sched)
                base_act = self.denoiser.conv_in(x.tensor())
                res = control_forward(self.assistant, compose_subject_input(z_sub, subject), t, tokens, base_act)
                residuals = [r * k.to(r.dtype).view(-1, 1, 1, 1) for r, k in zip(res, keep)]
        eps, _, trace = self.denoiser(x.tensor(), t, gen_tokens, mode="blocked", residuals=residuals,
                                      mask=mask, record=record)
        return eps, trace
