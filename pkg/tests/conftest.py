import pytest
import torch

from symbiodiff.denoiser import DenoiserConfig

torch.set_num_threads(1)


def tiny_config(**kw) -> DenoiserConfig:
    """Smallest useful network: one scale, two delivery sites (mid, up0.0)."""
    base = dict(image_size=4, image_channels=1, codec="identity", base_channels=2, channel_mult=(1,),
                decoder_blocks=(1,), num_heads=1, token_dim=2, encoder_channels=2, semantic_grid=1,
                norm_groups=1)
    base.update(kw)
    return DenoiserConfig(**base)


def small_config(**kw) -> DenoiserConfig:
    """Two scales with the default site layout, small enough for fast unit tests."""
    base = dict(image_size=16, image_channels=3, codec="patch", codec_factor=4, base_channels=8,
                channel_mult=(1, 2), decoder_blocks=(2, 1), num_heads=2, token_dim=8, encoder_channels=8,
                norm_groups=4)
    base.update(kw)
    return DenoiserConfig(**base)


def randomize_zero_init(module: torch.nn.Module, seed: int = 0, scale: float = 0.3) -> None:
    """Give zero-initialised output projections random values so every path carries signal."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if torch.count_nonzero(p) == 0:
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


@pytest.fixture
def small_cfg():
    return small_config()
