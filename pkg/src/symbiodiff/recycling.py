"""Per-step orchestration of the two statuses of the shared network.

A gemini step runs the network once on the subject (extraction), thins the
resulting signature cache with an independent Bernoulli draw per site, then
runs it again on the scene with the surviving signatures delivered. Only the
second pass ever feeds a loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .denoiser import (Denoiser, SemanticTokens, SignatureCache, compose_input,
                       compose_subject_input, denoise_forward)
from .diffusion_core import DiffusionSchedule, forward_diffuse


@dataclass
class SparsePolicy:
    lam: float = 0.6
    rng_seed: int = 0
    per_layer_independent: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"sparse threshold must be in [0, 1], got {self.lam}")
        if not self.per_layer_independent:
            raise ValueError("only per-layer independent dropping is supported")

    def generator(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.rng_seed)


@dataclass
class GuidanceConfig:
    scale: float = 1.0
    condition_drop_prob: float = 0.1

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if not 0.0 <= self.condition_drop_prob <= 1.0:
            raise ValueError("condition_drop_prob must be in [0, 1]")


def draw_keep(num_sites: int, batch: int, lam: float, generator: torch.Generator) -> torch.Tensor:
    """(num_sites, batch) bool; entry kept iff k <= lam with k ~ U(0, 1]."""
    k = 1.0 - torch.rand(num_sites, batch, generator=generator, dtype=torch.float64)
    return k <= lam


def sparse_transform(cache: SignatureCache, policy: SparsePolicy,
                     generator: Optional[torch.Generator] = None) -> SignatureCache:
    """Drop each site's signature independently (per sample) with probability ``1 - lam``."""
    gen = generator if generator is not None else policy.generator()
    sites = list(cache.states)
    present = [s for s in sites if cache.states[s] is not None]
    if not present:
        return cache.with_entries(dict(cache.states), {})
    batch = cache.states[present[0]].shape[0]
    keep = draw_keep(len(sites), batch, policy.lam, gen)
    states, keeps = {}, {}
    for i, site in enumerate(sites):
        prior = cache.keep.get(site)
        k = keep[i] if prior is None else keep[i] & prior
        if cache.states[site] is None or not bool(k.any()):
            states[site] = None
        else:
            states[site] = cache.states[site]
            if not bool(k.all()):
                keeps[site] = k
    return cache.with_entries(states, keeps)


def restrict_cache(cache: SignatureCache, keep: torch.Tensor) -> SignatureCache:
    """Null every site for samples where ``keep`` is False."""
    if bool(keep.all()):
        return cache
    states, keeps = {}, {}
    for site, st in cache.states.items():
        k = keep if site not in cache.keep else cache.keep[site] & keep
        if st is None or not bool(k.any()):
            states[site] = None
        else:
            states[site] = st
            keeps[site] = k
    return cache.with_entries(states, keeps)


def empty_cache(denoiser: Denoiser, t, batch: int) -> SignatureCache:
    t = torch.as_tensor(t, dtype=torch.long)
    return SignatureCache(t.expand(batch) if t.ndim == 0 else t,
                          {s: None for s in denoiser.config.delivery_sites})


def gemini_step(denoiser: Denoiser, z_t: torch.Tensor, scene: torch.Tensor, mask: torch.Tensor,
                subject: torch.Tensor, subject_noise: torch.Tensor, tokens: SemanticTokens, t,
                sched: DiffusionSchedule, policy: SparsePolicy, generator: Optional[torch.Generator] = None,
                cond_keep: Optional[torch.Tensor] = None, extractor: Optional[Denoiser] = None,
                record: bool = False):
    """Extraction pass on the subject, sparse delivery, then the generation pass.

    ``extractor`` defaults to ``denoiser`` itself (model recycling); passing a
    separate network gives the reference-network baseline. ``cond_keep``
    nulls tokens and cache jointly for the given samples (guidance dropout).
    Returns ``(eps_pred, trace)`` of the generation pass.
    """
    extractor = denoiser if extractor is None else extractor
    gen = generator if generator is not None else policy.generator()
    b = z_t.shape[0]
    nothing_conditioned = cond_keep is not None and not bool(cond_keep.any())
    if policy.lam > 0 and not nothing_conditioned:
        z_sub = forward_diffuse(subject, t, subject_noise, sched)
        _, cache, _ = denoise_forward(extractor, compose_subject_input(z_sub, subject), t, tokens, mode="extract")
        cache = sparse_transform(cache, policy, gen)
        if cond_keep is not None:
            cache = restrict_cache(cache, cond_keep)
    else:
        cache = empty_cache(denoiser, t, b)
    gen_tokens = tokens if cond_keep is None or bool(cond_keep.all()) else tokens.keep(cond_keep)
    eps, _, trace = denoise_forward(denoiser, compose_input(z_t, scene, mask), t, gen_tokens,
                                    cache_in=cache, mode="generate", record=record)
    return eps, trace


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, w: float) -> torch.Tensor:
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}")
    if w == 1:
        return eps_cond
    if w == 0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)
