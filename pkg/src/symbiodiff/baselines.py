"""Assistant networks of the over-configured systems.

* residual control: a trainable copy of the denoiser's encoder path whose
  per-scale outputs pass through zero-initialised 1x1 adapters and are added
  to the base network's skip connections;
* reference attention: a full separate copy of the denoiser run in extraction
  mode, whose cache is delivered exactly like the recycled one.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn

from .denoiser import (ComposedInput, Denoiser, SemanticTokens, SignatureCache, _Context,
                       denoise_forward, zero_module)

KINDS = ("control_residual", "reference_attention")


@dataclass
class AssistantConfig:
    kind: str
    shares_init_with_base: bool = True
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"assistant kind must be one of {KINDS}")


class ControlAssistant(nn.Module):
    def __init__(self, base: Denoiser):
        super().__init__()
        cfg = base.config
        self.config = cfg
        self.time_mlp = copy.deepcopy(base.time_mlp)
        self.conv_in = copy.deepcopy(base.conv_in)
        self.down = copy.deepcopy(base.down)
        self.adapters = nn.ModuleList(
            [zero_module(nn.Conv2d(cfg.channels(s), cfg.channels(s), 1)) for s in range(cfg.num_scales)]
        )

    embed_time = Denoiser.embed_time
    run_encoder = Denoiser.run_encoder

    def forward(self, subject_input: torch.Tensor, t, tokens: SemanticTokens,
                base_activations: torch.Tensor) -> list[torch.Tensor]:
        b = subject_input.shape[0]
        t = torch.as_tensor(t, dtype=torch.long)
        t = t.expand(b) if t.ndim == 0 else t
        h = self.conv_in(subject_input) + base_activations
        ctx = _Context("blocked", t, ())
        skips = self.run_encoder(h, self.embed_time(t), tokens, ctx)
        return [a(s) for a, s in zip(self.adapters, skips)]


def control_forward(assistant: ControlAssistant, subject_input: ComposedInput, t, tokens: SemanticTokens,
                    base_activations: torch.Tensor) -> list[torch.Tensor]:
    """Residual grids, one per decoder scale, for the base network's skips.

    ``base_activations`` is the base network's stem output on the scene input,
    letting the assistant place the subject relative to the region.
    """
    if base_activations.shape[1] != assistant.config.channels(0):
        raise ValueError("base activations do not match the first scale width")
    return assistant(subject_input.tensor(), t, tokens, base_activations)


def make_reference(base: Denoiser) -> Denoiser:
    """A separately parameterised copy of the denoiser, starting from the base weights."""
    return copy.deepcopy(base)


def reference_forward(reference: Denoiser, subject_input: ComposedInput, t, tokens: SemanticTokens) -> SignatureCache:
    _, cache, _ = denoise_forward(reference, subject_input, t, tokens, mode="extract")
    return cache
