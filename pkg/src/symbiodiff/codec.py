"""Image <-> latent codecs.

The diffusion model works on whatever a codec produces. Both codecs here are
lossless: ``decode(encode(x)) == x`` exactly, so background pixels can be
preserved bit-for-bit.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F


class IdentityCodec:
    """Pixel-space diffusion: the latent is the image."""

    name = "identity"
    factor = 1
    # latents are rearranged pixels, so they share the image range [-1, 1]
    value_range = 1.0

    def latent_shape(self, channels: int, size: int) -> tuple[int, int]:
        return channels, size

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return x

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return z

    def mask_to_latent(self, mask: torch.Tensor) -> torch.Tensor:
        return mask


class PatchCodec(IdentityCodec):
    """Space-to-depth rearrangement (pixel unshuffle) by ``factor``.

    Each ``factor x factor`` pixel block becomes ``factor**2`` channels of one
    latent cell. Exactly invertible; trades spatial size for channels so that
    attention runs on far fewer tokens.
    """

    name = "patch"

    def __init__(self, factor: int = 4):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = factor

    def latent_shape(self, channels: int, size: int) -> tuple[int, int]:
        if size % self.factor:
            raise ValueError(f"image size {size} not divisible by patch factor {self.factor}")
        return channels * self.factor**2, size // self.factor

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return F.pixel_unshuffle(x, self.factor) if self.factor > 1 else x

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return F.pixel_shuffle(z, self.factor) if self.factor > 1 else z

    def mask_to_latent(self, mask: torch.Tensor) -> torch.Tensor:
        return interpolate_mask(mask, mask.shape[-1] // self.factor)


def interpolate_mask(mask: torch.Tensor, size: int) -> torch.Tensor:
    """Nearest-neighbour resize of a binary (B, 1, H, W) mask; stays binary."""
    if mask.shape[-1] == size and mask.shape[-2] == size:
        return mask
    return F.interpolate(mask, size=(size, size), mode="nearest")


def make_codec(name: str, factor: int = 4) -> IdentityCodec:
    if name == "identity":
        return IdentityCodec()
    if name == "patch":
        return PatchCodec(factor)
    raise ValueError(f"unknown codec {name!r}")
