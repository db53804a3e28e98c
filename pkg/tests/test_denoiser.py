import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from symbiodiff.denoiser import (ComposedInput, Denoiser, DenoiserConfig, SemanticEncoder, SignatureCache,
                                 compose_input, compose_subject_input, denoise_forward, mutual_attention)
from conftest import randomize_zero_init, small_config


def _inputs(cfg, b=2, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    lc, n = cfg.latent_channels, cfg.latent_size
    z = torch.randn(b, lc, n, n, generator=g, dtype=dtype)
    scene = torch.randn(b, lc, n, n, generator=g, dtype=dtype)
    subject = torch.randn(b, lc, n, n, generator=g, dtype=dtype)
    mask = torch.ones(b, 1, n, n, dtype=dtype)
    mask[:, :, 1:3, 1:3] = 0
    return z, scene, subject, mask


def _tokens(cfg, subject, scene, mask, seed=0):
    torch.manual_seed(seed)
    return SemanticEncoder(cfg).to(subject.dtype)(subject, mask * scene)


# -- configuration ----------------------------------------------------------------------


def test_config_sites_and_groups(small_cfg):
    assert small_cfg.latent_shape == (48, 4)
    assert small_cfg.encoder_sites == ["down0", "down1"]
    assert small_cfg.decoder_sites == ["up1.0", "up0.0", "up0.1"]
    assert small_cfg.delivery_sites == ["mid", "up1.0", "up0.0", "up0.1"]
    assert small_config(delivery="encoder").delivery_sites == ["down0", "down1"]
    assert len(small_config(delivery="both").delivery_sites) == 6
    assert [small_cfg.token_group(s) for s in small_cfg.self_attn_sites] == [0, 1, 1, 2, 3, 3]


def test_config_roundtrip_and_validation(small_cfg):
    assert DenoiserConfig.from_dict(small_cfg.to_dict()) == small_cfg
    with pytest.raises(ValueError):
        DenoiserConfig.from_dict({**small_cfg.to_dict(), "bogus": 1})
    with pytest.raises(ValueError):
        small_config(delivery="sideways")
    with pytest.raises(ValueError):
        small_config(base_channels=7, num_heads=2)
    with pytest.raises(ValueError):
        small_config(image_size=18)


# -- composed input ----------------------------------------------------------------------


def test_compose_input_channels_and_masking(small_cfg):
    z, scene, _, mask = _inputs(small_cfg)
    ci = compose_input(z, scene, mask)
    x = ci.tensor()
    assert x.shape[1] == 2 * small_cfg.latent_channels + 1
    assert torch.equal(x[:, :48], z)
    assert torch.equal(x[:, 48:96], mask * scene)
    assert torch.equal(x[:, 96:], mask)
    assert torch.equal(x[:, 48:96, 1, 1], torch.zeros_like(x[:, 48:96, 1, 1]))


def test_compose_input_resizes_pixel_mask(small_cfg):
    z, scene, _, _ = _inputs(small_cfg)
    pix = torch.ones(2, 1, 16, 16)
    pix[:, :, 4:12, 8:16] = 0
    ci = compose_input(z, scene, pix)
    expected = torch.ones(2, 1, 4, 4)
    expected[:, :, 1:3, 2:4] = 0
    assert torch.equal(ci.mask, expected)


def test_compose_input_errors(small_cfg):
    z, scene, _, mask = _inputs(small_cfg)
    with pytest.raises(ValueError):
        compose_input(z, scene[:, :3], mask)
    with pytest.raises(ValueError):
        compose_input(z, scene, mask[:, 0])
    with pytest.raises(ValueError):
        compose_input(z, scene, torch.ones(2, 1, 6, 6))


def test_subject_input_uses_all_ones_mask(small_cfg):
    z, _, subject, _ = _inputs(small_cfg)
    ci = compose_subject_input(z, subject)
    assert torch.equal(ci.mask, torch.ones_like(ci.mask))
    assert torch.equal(ci.masked_scene, subject)


# -- mutual attention --------------------------------------------------------------------


def test_mutual_attention_hand_values():
    gen = torch.tensor([[[1.0]]])
    cached = torch.tensor([[[3.0]]])
    one, zero = torch.ones(1, 1), torch.zeros(1, 1)
    out, probs = mutual_attention(gen, cached, zero, zero, one)
    assert probs.flatten().tolist() == [0.5, 0.5]
    assert float(out) == 2.0
    out, probs = mutual_attention(gen, cached, one, one, one)
    e2 = math.exp(2.0)
    assert probs.flatten().tolist() == pytest.approx([1 / (1 + e2), e2 / (1 + e2)], abs=1e-7)
    assert float(out) == pytest.approx((1 + 3 * e2) / (1 + e2), abs=1e-6)


@given(b=st.integers(1, 3), n=st.integers(1, 9), m=st.integers(0, 9), heads=st.sampled_from([1, 2, 4]),
       seed=st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_mutual_attention_rows_are_stochastic(b, n, m, heads, seed):
    g = torch.Generator().manual_seed(seed)
    d = 8
    gen = torch.randn(b, n, d, generator=g) * 3
    cached = torch.randn(b, m, d, generator=g) * 3 if m else None
    w = [torch.randn(d, d, generator=g) for _ in range(3)]
    keep = torch.rand(b, generator=g) < 0.5 if m else None
    _, probs = mutual_attention(gen, cached, *w, num_heads=heads, keep=keep)
    assert probs.shape == (b, heads, n, n + m)
    assert float((probs.sum(-1) - 1).abs().max()) <= 1e-5
    assert bool((probs >= 0).all())
    if keep is not None:
        assert int(torch.count_nonzero(probs[~keep][..., n:])) == 0


def test_mutual_attention_empty_reduces_to_self_attention():
    g = torch.Generator().manual_seed(3)
    gen = torch.randn(2, 5, 4, generator=g)
    w = [torch.randn(4, 4, generator=g) for _ in range(3)]
    base, p0 = mutual_attention(gen, None, *w, num_heads=2)
    # independent oracle: plain scaled dot-product self-attention
    q, k, v = (gen @ wi.T for wi in w)
    split = lambda x: x.view(2, 5, 2, 2).transpose(1, 2)
    ref = torch.softmax(split(q) @ split(k).transpose(-1, -2) / math.sqrt(2), -1) @ split(v)
    assert torch.allclose(base, ref.transpose(1, 2).reshape(2, 5, 4), atol=1e-6)
    # dropping every cached column gives the same numbers bit for bit
    cached = torch.randn(2, 3, 4, generator=g)
    out, probs = mutual_attention(gen, cached, *w, num_heads=2, keep=torch.tensor([False, False]))
    assert torch.equal(out, base)
    assert torch.equal(probs[..., :5], p0)


def test_mutual_attention_width_mismatch():
    with pytest.raises(ValueError):
        mutual_attention(torch.zeros(1, 2, 4), torch.zeros(1, 2, 3), *(torch.eye(4),) * 3)


# -- denoiser statuses -------------------------------------------------------------------


@pytest.fixture
def net(small_cfg):
    torch.manual_seed(0)
    return Denoiser(small_cfg).eval()


def test_extract_cache_covers_delivery_sites(net, small_cfg):
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 10, tokens, mode="extract")
    assert list(cache.states) == small_cfg.delivery_sites
    for site, st in cache.states.items():
        assert st.shape[0] == 2 and st.shape[2] == small_cfg.site_channels[site]
    assert torch.equal(cache.t, torch.tensor([10, 10]))


def test_zero_init_generation_equals_blocked(net, small_cfg):
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 5, tokens, mode="extract")
    ci = compose_input(z, scene, mask)
    blocked, _, _ = denoise_forward(net, ci, 5, tokens, mode="blocked")
    gen, _, _ = denoise_forward(net, ci, 5, tokens, cache_in=cache, mode="generate")
    assert torch.equal(gen, blocked)


def test_empty_cache_generation_is_bitwise_blocked(net, small_cfg):
    randomize_zero_init(net)
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    ci = compose_input(z, scene, mask)
    empty = SignatureCache(torch.tensor([7, 7]), {s: None for s in small_cfg.delivery_sites})
    blocked, _, _ = denoise_forward(net, ci, 7, tokens, mode="blocked")
    gen, _, _ = denoise_forward(net, ci, 7, tokens, cache_in=empty, mode="generate")
    assert torch.equal(gen, blocked)
    # a cache whose keep flags are all False is also empty
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 7, tokens, mode="extract")
    none_kept = cache.with_entries(cache.states, {s: torch.tensor([False, False]) for s in cache.states})
    gen2, _, _ = denoise_forward(net, ci, 7, tokens, cache_in=none_kept, mode="generate")
    assert torch.equal(gen2, blocked)
    full, _, _ = denoise_forward(net, ci, 7, tokens, cache_in=cache, mode="generate")
    assert not torch.equal(full, blocked)


def test_partial_keep_matches_per_sample_runs(net, small_cfg):
    randomize_zero_init(net)
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    ci = compose_input(z, scene, mask)
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 7, tokens, mode="extract")
    keep = torch.tensor([True, False])
    mixed, _, _ = denoise_forward(net, ci, 7, tokens, cache_in=cache.with_entries(
        cache.states, {s: keep for s in cache.states}), mode="generate")
    full, _, _ = denoise_forward(net, ci, 7, tokens, cache_in=cache, mode="generate")
    blocked, _, _ = denoise_forward(net, ci, 7, tokens, mode="blocked")
    assert torch.allclose(mixed[0], full[0], atol=1e-5)
    assert torch.allclose(mixed[1], blocked[1], atol=1e-5)


def test_generation_errors(net, small_cfg):
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    ci = compose_input(z, scene, mask)
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 7, tokens, mode="extract")
    with pytest.raises(ValueError, match="timestep"):
        denoise_forward(net, ci, 8, tokens, cache_in=cache, mode="generate")
    with pytest.raises(ValueError):
        denoise_forward(net, ci, 7, tokens, mode="generate")
    with pytest.raises(ValueError):
        denoise_forward(net, ci, 7, tokens, mode="sideways")
    bad = cache.with_entries({**cache.states, "down0": cache.states["mid"]}, {})
    with pytest.raises(ValueError, match="non-delivery"):
        denoise_forward(net, ci, 7, tokens, cache_in=bad, mode="generate")


def test_unconditional_mode_nulls_tokens(net, small_cfg):
    randomize_zero_init(net)
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    ci = compose_input(z, scene, mask)
    unc, _, _ = denoise_forward(net, ci, 3, tokens, mode="unconditional")
    ref, _, _ = denoise_forward(net, ci, 3, tokens.null(), mode="blocked")
    assert torch.equal(unc, ref)
    cond, _, _ = denoise_forward(net, ci, 3, tokens, mode="blocked")
    assert not torch.equal(unc, cond)


def test_semantic_tokens_layout(small_cfg):
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    assert len(tokens.groups) == small_cfg.num_token_groups == 4
    for gr in tokens.groups:
        assert gr.shape == (2, small_cfg.semantic_grid ** 2 + 1, small_cfg.token_dim)
    kept = tokens.keep(torch.tensor([True, False]))
    assert all(torch.equal(k[0], g[0]) and not k[1].any() for k, g in zip(kept.groups, tokens.groups))
    assert all(not g.any() for g in tokens.null().groups)


def test_background_token_sees_only_preserved_scene(small_cfg):
    torch.manual_seed(0)
    enc = SemanticEncoder(small_cfg)
    z, scene, subject, mask = _inputs(small_cfg)
    a = enc(subject, mask * scene)
    scene2 = scene.clone()
    scene2[:, :, 1:3, 1:3] += 5.0  # change only the customised region
    b = enc(subject, mask * scene2)
    for ga, gb in zip(a.groups, b.groups):
        assert torch.equal(ga, gb)


def test_record_trace_per_sample(net, small_cfg):
    randomize_zero_init(net)
    z, scene, subject, mask = _inputs(small_cfg)
    tokens = _tokens(small_cfg, subject, scene, mask)
    _, cache, _ = denoise_forward(net, compose_subject_input(z, subject), 7, tokens, mode="extract")
    _, _, trace = denoise_forward(net, compose_input(z, scene, mask), 7, tokens, cache_in=cache,
                                  mode="generate", record=True)
    assert len(trace) == 2 * len(small_cfg.delivery_sites)
    for r in trace.records:
        assert r.delivered and 0 < r.subject_sum < r.total_sum
        n = small_cfg.latent_size ** 2 // (4 if r.site in ("mid", "up1.0") else 1)
        assert r.total_sum == pytest.approx(n, abs=1e-4)
        assert r.region_subject_sum + r.background_subject_sum == pytest.approx(r.subject_sum, abs=1e-9)
