"""The shared denoising network and its conditioning encoder.

One small U-shaped network serves both statuses of a timestep:

* ``extract``  - runs on the composed subject input and records the
  pre-attention hidden states at every delivery site (a :class:`SignatureCache`);
* ``generate`` - runs on the composed scene input; at each delivery site keys
  and values are built from ``[own tokens, cached subject tokens]``;
* ``blocked``  - generation with nothing delivered (plain self-attention);
* ``unconditional`` - blocked, with the semantic tokens nulled as well.

Signatures are captured before the attention LayerNorm, so the consuming pass
normalises and projects them with its own weights.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import interpolate_mask, make_codec
from .diffusion_core import make_schedule
from .instrumentation import AttentionTrace, SiteRecord

MODES = ("extract", "generate", "blocked", "unconditional")
POSITIONS = ("decoder", "encoder", "both")


@dataclass
class DenoiserConfig:
    image_size: int = 64
    image_channels: int = 3
    codec: str = "patch"
    codec_factor: int = 4
    base_channels: int = 64
    channel_mult: tuple[int, ...] = (1, 2)
    decoder_blocks: tuple[int, ...] = (2, 1)  # self-attention blocks per decoder scale
    num_heads: int = 4
    token_dim: int = 64
    encoder_channels: int = 48
    semantic_grid: int = 2
    norm_groups: int = 8
    delivery: str = "decoder"

    def __post_init__(self):
        self.channel_mult = tuple(self.channel_mult)
        self.decoder_blocks = tuple(self.decoder_blocks)
        if self.num_scales < 1:
            raise ValueError("need at least one scale")
        if len(self.decoder_blocks) != self.num_scales or min(self.decoder_blocks) < 1:
            raise ValueError("every decoder scale needs at least one self-attention block")
        if self.delivery not in POSITIONS:
            raise ValueError(f"delivery must be one of {POSITIONS}")
        for s, c in enumerate(self.site_channels.values()):
            if c <= 0 or c % self.num_heads:
                raise ValueError(f"site width {c} must be a positive multiple of num_heads")
        self.latent_shape  # validates codec divisibility

    @property
    def num_scales(self) -> int:
        return len(self.channel_mult)

    @property
    def latent_shape(self) -> tuple[int, int]:
        return make_codec(self.codec, self.codec_factor).latent_shape(self.image_channels, self.image_size)

    @property
    def latent_channels(self) -> int:
        return self.latent_shape[0]

    @property
    def latent_size(self) -> int:
        return self.latent_shape[1]

    def channels(self, scale: int) -> int:
        return self.base_channels * self.channel_mult[scale]

    @property
    def encoder_sites(self) -> list[str]:
        return [f"down{s}" for s in range(self.num_scales)]

    @property
    def decoder_sites(self) -> list[str]:
        return [f"up{s}.{j}" for s in reversed(range(self.num_scales)) for j in range(self.decoder_blocks[s])]

    @property
    def self_attn_sites(self) -> list[str]:
        return self.encoder_sites + ["mid"] + self.decoder_sites

    @property
    def site_channels(self) -> dict[str, int]:
        out = {f"down{s}": self.channels(s) for s in range(self.num_scales)}
        out["mid"] = self.channels(self.num_scales - 1)
        for s in reversed(range(self.num_scales)):
            for j in range(self.decoder_blocks[s]):
                out[f"up{s}.{j}"] = self.channels(s)
        return out

    @property
    def delivery_sites(self) -> list[str]:
        if self.delivery == "encoder":
            return self.encoder_sites
        if self.delivery == "decoder":
            return ["mid"] + self.decoder_sites
        return self.self_attn_sites

    @property
    def num_token_groups(self) -> int:
        return 2 * self.num_scales

    def token_group(self, site: str) -> int:
        if site == "mid":
            return self.num_scales - 1
        scale = int(site[2] if site.startswith("up") else site[4])
        if site.startswith("down"):
            return scale
        return 2 * self.num_scales - 1 - scale

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mult"] = list(self.channel_mult)
        d["decoder_blocks"] = list(self.decoder_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown DenoiserConfig keys: {sorted(unknown)}")
        return cls(**d)


# -- data carried between passes ------------------------------------------------------


@dataclass
class ComposedInput:
    noisy: torch.Tensor  # z_t
    masked_scene: torch.Tensor  # mask * scene
    mask: torch.Tensor  # (B, 1, h, w), 1 = preserved scene

    def tensor(self) -> torch.Tensor:
        return torch.cat([self.noisy, self.masked_scene, self.mask], dim=1)


def compose_input(z_t: torch.Tensor, scene: torch.Tensor, mask: torch.Tensor) -> ComposedInput:
    """Stack the noisy latent with the masked scene and the mask.

    ``mask`` may be at a higher resolution; it is nearest-resized to the latent.
    Polarity: 1 keeps the scene, 0 marks the region to customise.
    """
    if scene.shape != z_t.shape:
        raise ValueError(f"scene shape {tuple(scene.shape)} != z_t shape {tuple(z_t.shape)}")
    if mask.ndim != 4 or mask.shape[1] != 1 or mask.shape[0] != z_t.shape[0]:
        raise ValueError(f"mask must be (B, 1, H, W), got {tuple(mask.shape)}")
    if mask.shape[-1] != z_t.shape[-1]:
        if mask.shape[-1] % z_t.shape[-1]:
            raise ValueError("mask size is not a multiple of the latent size")
        mask = interpolate_mask(mask, z_t.shape[-1])
    mask = mask.to(z_t.dtype)
    return ComposedInput(z_t, mask * scene, mask)


def compose_subject_input(z_sub_t: torch.Tensor, subject: torch.Tensor) -> ComposedInput:
    """Subject branch: (noisy subject, clean subject, all-ones mask)."""
    ones = subject.new_ones(subject.shape[0], 1, *subject.shape[2:])
    return compose_input(z_sub_t, subject, ones)


@dataclass
class SemanticTokens:
    groups: list[torch.Tensor]  # each (B, tokens, token_dim); last row is the background token
    num_background: int = 1

    def null(self) -> "SemanticTokens":
        return SemanticTokens([torch.zeros_like(g) for g in self.groups], self.num_background)

    def keep(self, keep: torch.Tensor) -> "SemanticTokens":
        """Zero the tokens of samples where ``keep`` is False."""
        k = keep.to(self.groups[0].dtype).view(-1, 1, 1)
        return SemanticTokens([g * k for g in self.groups], self.num_background)


@dataclass
class SignatureCache:
    """Subject hidden states per delivery site, tagged with the timestep they came from.

    ``states[site] is None`` means nothing is delivered at that site. ``keep``
    optionally restricts delivery to a subset of the batch.
    """

    t: torch.Tensor
    states: dict[str, Optional[torch.Tensor]]
    keep: dict[str, torch.Tensor] = field(default_factory=dict)

    def delivered(self, site: str) -> bool:
        if self.states.get(site) is None:
            return False
        k = self.keep.get(site)
        return k is None or bool(k.any())

    def with_entries(self, states: dict, keep: dict) -> "SignatureCache":
        return SignatureCache(self.t, states, keep)


# -- building blocks ---------------------------------------------------------------------


def _groups(groups: int, ch: int) -> int:
    return math.gcd(groups, ch)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, tdim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(groups, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(tdim, cout)
        self.norm2 = nn.GroupNorm(_groups(groups, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, c = x.shape
    return x.view(b, n, heads, c // heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def mutual_attention(gen: torch.Tensor, cached: Optional[torch.Tensor], w_q: torch.Tensor,
                     w_k: torch.Tensor, w_v: torch.Tensor, num_heads: int = 1,
                     keep: Optional[torch.Tensor] = None, need_probs: bool = True):
    """Attention whose keys/values span generated tokens and cached subject tokens.

    ``gen`` is (B, N, d) and ``cached`` (B, M, d) or None. Queries come from
    ``gen`` only. ``keep`` (B,) bool masks out the subject columns of samples
    that receive nothing. Returns ``(output (B, N, d), probs (B, heads, N, N+M))``;
    ``probs`` is None unless ``need_probs``. The output never depends on ``need_probs``.
    """
    d = gen.shape[-1]
    if cached is not None and cached.shape[-1] != d:
        raise ValueError(f"cached token width {cached.shape[-1]} != generated width {d}")
    if cached is None or keep is None or bool(keep.all()):
        return _attend(gen, cached, w_q, w_k, w_v, num_heads, need_probs)
    # samples that receive nothing take the plain self-attention path, so their result is
    # bitwise the same as with no cache at all (a masked wider matmul can reorder sums)
    plain, plain_probs = _attend(gen[~keep], None, w_q, w_k, w_v, num_heads, need_probs)
    b, n, m = gen.shape[0], gen.shape[1], cached.shape[1]
    out = gen.new_empty(gen.shape)
    out[~keep] = plain
    probs = gen.new_zeros(b, num_heads, n, n + m) if need_probs else None
    if need_probs:
        probs[~keep, ..., :n] = plain_probs
    if bool(keep.any()):
        out[keep], kept_probs = _attend(gen[keep], cached[keep], w_q, w_k, w_v, num_heads, need_probs)
        if need_probs:
            probs[keep] = kept_probs
    return out, probs


def _attend(gen, cached, w_q, w_k, w_v, num_heads, need_probs):
    kv = gen if cached is None else torch.cat([gen, cached], dim=1)
    q = _split_heads(gen @ w_q.T, num_heads)
    k = _split_heads(kv @ w_k.T, num_heads)
    v = _split_heads(kv @ w_v.T, num_heads)
    out = _merge_heads(F.scaled_dot_product_attention(q, k, v))
    probs = None
    if need_probs:
        probs = ((q @ k.transpose(-1, -2)) / math.sqrt(gen.shape[-1] // num_heads)).softmax(dim=-1)
    return out, probs


class _Context:
    """Per-call state threaded through the network."""

    def __init__(self, mode, t, delivery, cache_in=None, mask=None, record=False):
        self.mode = mode
        self.t = t
        self.delivery = set(delivery)
        self.cache_in = cache_in
        self.cache_out: dict[str, torch.Tensor] = {}
        self.mask = mask
        self.record = record
        self.trace = AttentionTrace()


class SiteAttention(nn.Module):
    """Self-attention site (optionally mutual) followed by semantic cross-attention."""

    def __init__(self, site: str, dim: int, token_dim: int, heads: int):
        super().__init__()
        self.site = site
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = zero_module(nn.Linear(dim, dim))
        self.norm2 = nn.LayerNorm(dim)
        self.cross_q = nn.Linear(dim, dim, bias=False)
        self.cross_k = nn.Linear(token_dim, dim, bias=False)
        self.cross_v = nn.Linear(token_dim, dim, bias=False)
        self.cross_out = zero_module(nn.Linear(dim, dim))

    def forward(self, x: torch.Tensor, tokens: torch.Tensor, ctx: _Context) -> torch.Tensor:
        b, c, hh, ww = x.shape
        h = x.flatten(2).transpose(1, 2)
        delivering = self.site in ctx.delivery
        if ctx.mode == "extract" and delivering:
            ctx.cache_out[self.site] = h
        cached, keep = None, None
        if ctx.mode == "generate" and delivering:
            cached = ctx.cache_in.states.get(self.site)
            keep = ctx.cache_in.keep.get(self.site)
            if cached is not None and keep is not None and not bool(keep.any()):
                cached, keep = None, None
            if cached is not None and keep is not None and bool(keep.all()):
                keep = None
        gen_n = self.norm1(h)
        sub_n = None if cached is None else self.norm1(cached)
        recording = ctx.record and ctx.mode == "generate" and delivering
        attn, probs = mutual_attention(gen_n, sub_n, self.to_q.weight, self.to_k.weight,
                                       self.to_v.weight, self.heads, keep, need_probs=recording)
        if recording:
            self._record(ctx, h, cached, keep, probs, hh)
        h = h + self.to_out(attn)

        q = _split_heads(self.cross_q(self.norm2(h)), self.heads)
        k = _split_heads(self.cross_k(tokens), self.heads)
        v = _split_heads(self.cross_v(tokens), self.heads)
        h = h + self.cross_out(_merge_heads(F.scaled_dot_product_attention(q, k, v)))
        return h.transpose(1, 2).reshape(b, c, hh, ww)

    @torch.no_grad()
    def _record(self, ctx, h, cached, keep, probs, size):
        n = h.shape[1]
        b = h.shape[0]
        subj = probs[..., n:].sum(-1).mean(1) if cached is not None else h.new_zeros(b, n)
        total = probs.sum(-1).mean(1)
        region = None
        if ctx.mask is not None:
            region = interpolate_mask(ctx.mask, size).flatten(1) < 0.5
        delivered = torch.zeros(b, dtype=torch.bool) if cached is None else (
            torch.ones(b, dtype=torch.bool) if keep is None else keep.cpu())
        t = torch.as_tensor(ctx.t).expand(b) if torch.as_tensor(ctx.t).ndim == 0 else ctx.t
        for i in range(b):
            rec = SiteRecord(
                site=self.site,
                t=int(t[i]),
                delivered=bool(delivered[i]),
                subject_sum=float(subj[i].double().sum()),
                total_sum=float(total[i].double().sum()),
                mean_gen_hidden=float(h[i].double().mean()),
                mean_subject_hidden=float(cached[i].double().mean()) if cached is not None else float("nan"),
            )
            if region is not None:
                r = region[i]
                rec.region_subject_sum = float(subj[i][r].double().sum())
                rec.region_total_sum = float(total[i][r].double().sum())
                rec.background_subject_sum = float(subj[i][~r].double().sum())
                rec.background_total_sum = float(total[i][~r].double().sum())
            if not rec.delivered:
                rec.subject_sum = rec.region_subject_sum = rec.background_subject_sum = 0.0
            ctx.trace.records.append(rec)


class Downsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class Denoiser(nn.Module):
    """U-shaped noise predictor with instrumented self-attention sites."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = cfg = config
        lc = cfg.latent_channels
        tdim = 2 * cfg.base_channels
        g = cfg.norm_groups
        self.time_mlp = nn.Sequential(nn.Linear(cfg.base_channels, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.conv_in = nn.Conv2d(2 * lc + 1, cfg.channels(0), 3, padding=1)

        self.down = nn.ModuleList()
        prev = cfg.channels(0)
        for s in range(cfg.num_scales):
            ch = cfg.channels(s)
            self.down.append(nn.ModuleDict({
                "sample": Downsample(prev) if s > 0 else nn.Identity(),
                "res": ResBlock(prev, ch, tdim, g),
                "attn": SiteAttention(f"down{s}", ch, cfg.token_dim, cfg.num_heads),
            }))
            prev = ch

        self.mid_res1 = ResBlock(prev, prev, tdim, g)
        self.mid_attn = SiteAttention("mid", prev, cfg.token_dim, cfg.num_heads)
        self.mid_res2 = ResBlock(prev, prev, tdim, g)

        self.up = nn.ModuleList()
        for s in reversed(range(cfg.num_scales)):
            ch = cfg.channels(s)
            res, attn = nn.ModuleList(), nn.ModuleList()
            for j in range(cfg.decoder_blocks[s]):
                res.append(ResBlock(prev + ch if j == 0 else ch, ch, tdim, g))
                attn.append(SiteAttention(f"up{s}.{j}", ch, cfg.token_dim, cfg.num_heads))
            self.up.append(nn.ModuleDict({
                "res": res,
                "attn": attn,
                "sample": Upsample(ch) if s > 0 else nn.Identity(),
            }))
            prev = ch

        self.norm_out = nn.GroupNorm(_groups(g, prev), prev)
        self.conv_out = zero_module(nn.Conv2d(prev, lc, 3, padding=1))
        # output parametrisation: eps = sqrt(1 - a) z_t + sqrt(a) f, so the network output f is
        # a velocity-like target of unit scale at every noise level and an untrained model
        # already returns the noise-dominated part of z_t
        self.register_buffer("alpha_bars", make_schedule().alpha_bars.float(), persistent=False)

    # split out so assistants that copy the encoder path can reuse it
    def embed_time(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.conv_in.weight.dtype
        return self.time_mlp(timestep_embedding(t, self.config.base_channels).to(dtype))

    def run_encoder(self, h, temb, tokens: SemanticTokens, ctx: _Context) -> list[torch.Tensor]:
        skips = []
        for s, blk in enumerate(self.down):
            h = blk["sample"](h)
            h = blk["res"](h, temb)
            h = blk["attn"](h, tokens.groups[self.config.token_group(f"down{s}")], ctx)
            skips.append(h)
        return skips

    def forward(self, x: torch.Tensor, t, tokens: SemanticTokens, cache_in: Optional[SignatureCache] = None,
                mode: str = "blocked", residuals: Optional[list[torch.Tensor]] = None,
                mask: Optional[torch.Tensor] = None, record: bool = False):
        """Returns ``(eps_pred, cache_out, trace)``.

        ``x`` is the concatenated composed input. ``residuals`` (one per scale)
        are added to the encoder skips before the decoder consumes them.
        """
        cfg = self.config
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        b = x.shape[0]
        t = torch.as_tensor(t, dtype=torch.long)
        t_vec = t.expand(b) if t.ndim == 0 else t
        if mode == "generate":
            if cache_in is None:
                raise ValueError("generate mode requires a SignatureCache (entries may be empty)")
            unknown = set(k for k, v in cache_in.states.items() if v is not None) - set(cfg.delivery_sites)
            if unknown:
                raise ValueError(f"cache has entries at non-delivery sites: {sorted(unknown)}")
            if not torch.equal(torch.as_tensor(cache_in.t, dtype=torch.long).expand(b), t_vec):
                raise ValueError("signature cache timestep does not match the generation timestep")
        if mode == "unconditional":
            tokens = tokens.null()
        if mode != "generate":
            cache_in = None
        ctx = _Context(mode, t_vec, cfg.delivery_sites, cache_in, mask, record)

        temb = self.embed_time(t_vec)
        h = self.conv_in(x)
        skips = self.run_encoder(h, temb, tokens, ctx)
        if residuals is not None:
            if len(residuals) != len(skips):
                raise ValueError(f"expected {len(skips)} residuals, got {len(residuals)}")
            skips = [s + r for s, r in zip(skips, residuals)]
        h = skips[-1]
        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, tokens.groups[cfg.token_group("mid")], ctx)
        h = self.mid_res2(h, temb)
        for i, blk in enumerate(self.up):
            s = cfg.num_scales - 1 - i
            for j, (res, attn) in enumerate(zip(blk["res"], blk["attn"])):
                if j == 0:
                    h = torch.cat([h, skips[s]], dim=1)
                h = res(h, temb)
                h = attn(h, tokens.groups[cfg.token_group(f"up{s}.{j}")], ctx)
            h = blk["sample"](h)
        f = self.conv_out(F.silu(self.norm_out(h)))
        ab = self.alpha_bars[t_vec].to(f.dtype).view(-1, 1, 1, 1)
        eps = (1 - ab).sqrt() * x[:, :cfg.latent_channels] + ab.sqrt() * f
        cache_out = None
        if mode == "extract":
            cache_out = SignatureCache(t_vec, {s: ctx.cache_out.get(s) for s in cfg.delivery_sites})
        return eps, cache_out, ctx.trace


def denoise_forward(model: Denoiser, x: ComposedInput, t, tokens: SemanticTokens,
                    cache_in: Optional[SignatureCache] = None, mode: str = "blocked", record: bool = False):
    return model(x.tensor(), t, tokens, cache_in=cache_in, mode=mode, mask=x.mask, record=record)


class SemanticEncoder(nn.Module):
    """Small pyramid encoder producing one token group per injection scale.

    Each group holds ``grid**2`` pooled subject tokens followed by a single
    global background token pooled from the masked scene.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        cfg = config
        w = cfg.encoder_channels
        g = cfg.norm_groups
        self.grid = cfg.semantic_grid
        self.stem = nn.Conv2d(cfg.latent_channels, w, 3, padding=1)
        # halve the grid per level after the first, but never below 2x2 so norms stay defined
        strides, size = [], cfg.latent_size
        for i in range(cfg.num_token_groups):
            stride = 2 if i > 0 and size >= 4 else 1
            strides.append(stride)
            size //= stride
        self.levels = nn.ModuleList([
            nn.Sequential(nn.GroupNorm(_groups(g, w), w), nn.SiLU(), nn.Conv2d(w, w, 3, stride=st, padding=1))
            for st in strides
        ])
        self.subject_proj = nn.ModuleList([nn.Linear(w, cfg.token_dim) for _ in self.levels])
        self.background_proj = nn.ModuleList([nn.Linear(w, cfg.token_dim) for _ in self.levels])

    def pyramid(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = self.stem(x)
        for lvl in self.levels:
            h = h + lvl(h) if lvl[-1].stride == (1, 1) else lvl(h)
            feats.append(h)
        return feats

    def forward(self, subject: torch.Tensor, scene_background: torch.Tensor) -> SemanticTokens:
        fs = self.pyramid(subject)
        fb = self.pyramid(scene_background)
        groups = []
        for i, (a, bg) in enumerate(zip(fs, fb)):
            sub = F.adaptive_avg_pool2d(a, self.grid).flatten(2).transpose(1, 2)
            back = bg.mean(dim=(2, 3))[:, None, :]
            groups.append(torch.cat([self.subject_proj[i](sub), self.background_proj[i](back)], dim=1))
        return SemanticTokens(groups)

    def global_features(self, x: torch.Tensor) -> torch.Tensor:
        """Pooled deepest-level features, used for the semantic similarity metric."""
        return self.pyramid(x)[-1].mean(dim=(2, 3))


def encode_semantic(encoder: SemanticEncoder, subject: torch.Tensor, scene_background: torch.Tensor) -> SemanticTokens:
    return encoder(subject, scene_background)
