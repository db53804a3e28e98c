"""Training on gemini steps, evaluation on the frozen benchmark split, ablation suites."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import metrics as M
from .checkpoint import load_checkpoint, save_checkpoint
from .compositor import CustomizationRequest, customize_region
from .data_synth import SamplePair, SynthSpec, augment_subject, benchmark_indices, generate_pairs, weighted_sampler
from .denoiser import DenoiserConfig
from .diffusion_core import DiffusionSchedule, forward_diffuse, make_schedule, sample_loop, sampler_invert
from .instrumentation import asa_accumulate, asa_total, sld_compute
from .system import SYSTEMS, DiffusionSystem

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    system: str = "symbiotic"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 0.0
    lam: float = 0.6
    condition_drop_prob: float = 0.1
    checkpoint_every: int = 0
    seed: int = 0  # parameter init
    train_seed: int = 1  # timesteps, noise, dropout, sparse draws, sampling order
    data_seed: int = 0
    train_size: int = 4000
    augment: bool = True
    category_weights: tuple[float, ...] = (0.2, 0.65, 0.15)
    mask_area_range: tuple[float, float] = (0.10, 0.30)
    num_train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")
        if self.steps < 0 or self.batch_size < 1 or self.train_size < 1:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(image_size=self.model.image_size, category_weights=self.category_weights,
                         mask_area_range=self.mask_area_range, rng_seed=self.data_seed,
                         align=max(self.model.codec_factor if self.model.codec == "patch" else 1, 1))

    def schedule(self, inference_steps: int = 20) -> DiffusionSchedule:
        return make_schedule(self.num_train_steps, self.beta_start, self.beta_end, inference_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return _jsonable(d)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -- tensors from pairs ----------------------------------------------------------------


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, C) -> float (C, H, W) in [-1, 1]."""
    return torch.from_numpy(np.array(img, copy=True)).permute(2, 0, 1).float() / 127.5 - 1.0


def to_image(x: torch.Tensor) -> np.ndarray:
    return ((x.detach().double().clamp(-1, 1) + 1) * 127.5).round().byte().permute(1, 2, 0).numpy()


def stack_pairs(pairs: list[SamplePair], dtype=torch.float32):
    scene = torch.stack([to_tensor(p.scene) for p in pairs]).to(dtype)
    mask = torch.stack([torch.from_numpy(p.mask.astype(np.float32))[None] for p in pairs]).to(dtype)
    subject = torch.stack([to_tensor(p.subject) for p in pairs]).to(dtype)
    return scene, mask, subject


@dataclass
class TrainInputs:
    scene: torch.Tensor  # latent
    mask: torch.Tensor  # latent-size
    subject: torch.Tensor  # latent
    t: torch.Tensor
    noise: torch.Tensor
    subject_noise: torch.Tensor
    cond_keep: torch.Tensor
    sparse_seed: int


def sample_train_inputs(system: DiffusionSystem, scene, mask, subject, cfg: TrainConfig,
                        sched: DiffusionSchedule, g: torch.Generator) -> TrainInputs:
    """Draw everything random about one training step from ``g``.

    The draw sequence does not depend on the system kind, so differently
    configured systems see identical timesteps, noise and dropout.
    """
    dtype = next(system.parameters()).dtype
    z_scene = system.codec.encode(scene.to(dtype))
    z_sub = system.codec.encode(subject.to(dtype))
    m = system.latent_mask(mask.to(dtype))
    b = z_scene.shape[0]
    t = torch.randint(0, sched.num_train_steps, (b,), generator=g)
    noise = torch.randn(z_scene.shape, generator=g, dtype=dtype)
    subject_noise = torch.randn(z_scene.shape, generator=g, dtype=dtype)
    cond_keep = torch.rand(b, generator=g, dtype=torch.float64) >= cfg.condition_drop_prob
    sparse_seed = int(torch.randint(0, 2**62, (1,), generator=g))
    return TrainInputs(z_scene, m, z_sub, t, noise, subject_noise, cond_keep, sparse_seed)


def training_loss(system: DiffusionSystem, inp: TrainInputs, sched: DiffusionSchedule, lam: float) -> torch.Tensor:
    """Mean squared noise error of the generation status over the full latent."""
    z_t = forward_diffuse(inp.scene, inp.t, inp.noise, sched)
    g_sparse = torch.Generator().manual_seed(inp.sparse_seed)
    eps, _ = system.predict_eps(z_t, inp.scene, inp.mask, inp.subject, inp.subject_noise, inp.t, sched,
                                lam=lam, generator=g_sparse, cond_keep=inp.cond_keep)
    return ((eps - inp.noise) ** 2).mean()


def train_step(batch, system: DiffusionSystem, optimizer: torch.optim.Optimizer, cfg: TrainConfig,
               sched: DiffusionSchedule, g: torch.Generator, dump_dir: Optional[Path] = None) -> float:
    scene, mask, subject = batch
    system.train()
    inp = sample_train_inputs(system, scene, mask, subject, cfg, sched, g)
    loss = training_loss(system, inp, sched, cfg.lam)
    if not torch.isfinite(loss):
        diag = {"step": getattr(system, "trained_steps", 0), "loss": float(loss), "t": inp.t.tolist(),
                "param_norms": {k: float(v.norm()) for k, v in system.named_parameters()}}
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            (Path(dump_dir) / "nonfinite_loss.json").write_text(json.dumps(diag, indent=2))
        raise FloatingPointError(f"non-finite training loss at step {diag['step']}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    system.trained_steps = getattr(system, "trained_steps", 0) + 1
    return float(loss.detach())


class TrainData:
    """In-memory uint8 training pairs with weighted sampling and subject augmentation."""

    def __init__(self, cfg: TrainConfig, pairs: Optional[list[SamplePair]] = None):
        self.cfg = cfg
        self.pairs = pairs if pairs is not None else generate_pairs(cfg.synth_spec(), range(cfg.train_size))
        cats = [p.category for p in self.pairs]
        spec = cfg.synth_spec()
        weights = {c: w for c, w in zip(spec.categories, spec.category_weights) if c in set(cats)}
        self.stream = weighted_sampler(cats, weights, cfg.train_seed)

    def next_batch(self, step: int):
        idx = [next(self.stream) for _ in range(self.cfg.batch_size)]
        chosen = []
        for slot, i in enumerate(idx):
            p = self.pairs[i]
            if self.cfg.augment:
                seed = int(np.random.SeedSequence([self.cfg.train_seed, step, slot]).generate_state(1)[0])
                p = replace(p, subject=augment_subject(p.subject, seed))
            chosen.append(p)
        return stack_pairs(chosen)


def make_optimizer(system: DiffusionSystem, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(system.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train(cfg: TrainConfig, out_dir: Optional[Path] = None, data: Optional[TrainData] = None,
          log_every: int = 100, callback=None) -> tuple[DiffusionSystem, list[float]]:
    """Train a system from scratch; returns it with the per-step loss history."""
    system = DiffusionSystem(cfg.model, cfg.system, cfg.seed)
    system.trained_steps = 0
    sched = cfg.schedule()
    data = data if data is not None else TrainData(cfg)
    opt = make_optimizer(system, cfg)
    g = torch.Generator().manual_seed(cfg.train_seed)
    losses = []
    t0 = time.time()
    for step in range(cfg.steps):
        losses.append(train_step(data.next_batch(step), system, opt, cfg, sched, g, dump_dir=out_dir))
        if log_every and (step + 1) % log_every == 0:
            recent = losses[-log_every:]
            log.info("%s step %d loss %.4f (%.1fs)", cfg.system, step + 1, sum(recent) / len(recent), time.time() - t0)
        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"step_{step + 1:06d}.safetensors", system,
                            {"train": cfg.to_dict(), "config_hash": cfg.digest()})
        if callback is not None:
            callback(step, losses[-1])
    system.eval()
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "final.safetensors", system,
                        {"train": cfg.to_dict(), "config_hash": cfg.digest()})
        (Path(out_dir) / "losses.json").write_text(json.dumps(losses))
    return system, losses


def train_or_load(cfg: TrainConfig, cache_dir: Path, data: Optional[TrainData] = None) -> DiffusionSystem:
    """Reuse ``cache_dir/<config hash>/final.safetensors`` when present, otherwise train it."""
    run_dir = Path(cache_dir) / f"{cfg.system}-{cfg.digest()}"
    ckpt = run_dir / "final.safetensors"
    if ckpt.exists():
        return load_checkpoint(ckpt)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    train(cfg, run_dir, data)
    return load_checkpoint(ckpt)


# -- evaluation --------------------------------------------------------------------------


@dataclass
class EvalConfig:
    bench_size: int = 64
    batch: int = 16
    inference_steps: int = 20
    guidance: float = 1.0
    lam_inf: float = 1.0
    seed: int = 1234
    diversity_subjects: int = 8
    diversity_seeds: int = 8
    trace_pairs: int = 16


@dataclass
class EvalReport:
    metrics: dict  # overall means
    per_category: dict
    diversity: float
    asa: dict
    sld: dict
    asa_total: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark_pairs(train_cfg: TrainConfig, count: int) -> list[SamplePair]:
    return generate_pairs(train_cfg.synth_spec(), benchmark_indices(count))


def pair_metrics(system: DiffusionSystem, out, gt, mask) -> dict[str, torch.Tensor]:
    codec = system.codec
    with torch.no_grad():
        size = system.config.image_size
        fa = system.encoder.global_features(codec.encode(M.crop_resize(out, mask, size).to(out.dtype)))
        fb = system.encoder.global_features(codec.encode(M.crop_resize(gt, mask, size).to(out.dtype)))
    return {
        "l1": M.region_l1(out, gt, mask),
        "psnr": M.region_psnr(out, gt, mask),
        "ssim": M.region_ssim(out, gt, mask),
        "semantic": M.cosine(fa, fb),
        "quality": M.quality_proxy(out, gt, mask),
    }


def _mean(vals: list[float]) -> float:
    return math.fsum(vals) / len(vals) if vals else float("nan")


@torch.no_grad()
def evaluate(system: DiffusionSystem, pairs: list[SamplePair], sched: DiffusionSchedule,
             ecfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Customise every benchmark pair and score the region against the original scene."""
    if not pairs:
        raise ValueError("empty benchmark")
    sched = sched.with_inference_steps(ecfg.inference_steps)
    rows: list[dict] = []
    traces: list = []
    for start in range(0, len(pairs), ecfg.batch):
        chunk = pairs[start:start + ecfg.batch]
        scene, mask, subject = stack_pairs(chunk)
        req = CustomizationRequest(scene, mask, subject, ecfg.guidance, ecfg.lam_inf, ecfg.seed + start)
        want_trace = start < ecfg.trace_pairs
        out = customize_region(req, system, sched, traces if want_trace else None)
        vals = pair_metrics(system, out, scene, mask)
        for i, p in enumerate(chunk):
            rows.append({"category": p.category, **{k: float(v[i]) for k, v in vals.items()}})
    keys = [k for k in rows[0] if k != "category"]
    overall = {k: _mean([r[k] for r in rows]) for k in keys}
    per_cat = {}
    for cat in sorted({r["category"] for r in rows}):
        sub = [r for r in rows if r["category"] == cat]
        per_cat[cat] = {k: _mean([r[k] for r in sub]) for k in keys} | {"count": len(sub)}
    div = diversity(system, pairs[:ecfg.diversity_subjects], sched, ecfg)
    if traces and any(len(t) for t in traces):
        asa = {k: c.asa for k, c in asa_accumulate(traces, "layer").items()}
        sld = sld_compute(traces)
        total = asa_total(traces)
    else:
        asa, sld, total = {}, {}, 0.0
    return EvalReport(overall, per_cat, div, asa, sld, total, len(rows))


@torch.no_grad()
def diversity(system: DiffusionSystem, pairs: list[SamplePair], sched: DiffusionSchedule, ecfg: EvalConfig) -> float:
    """Mean pairwise region distance over several seeds per subject, with blocked signature flow."""
    if not pairs or ecfg.diversity_seeds < 2:
        return 0.0
    vals = []
    for j, p in enumerate(pairs):
        scene, mask, subject = stack_pairs([p] * ecfg.diversity_seeds)
        req = CustomizationRequest(scene, mask, subject, ecfg.guidance, 0.0, ecfg.seed + 7919 * (j + 1))
        out = customize_region(req, system, sched)
        vals.append(M.pairwise_region_l2(out, mask[:1]))
    return _mean(vals)


@torch.no_grad()
def inversion_round_trip(system: DiffusionSystem, scene: torch.Tensor, mask: torch.Tensor, subject: torch.Tensor,
                         sched: DiffusionSchedule, seed: int = 0) -> torch.Tensor:
    """Invert clean scenes to noise and sample them back under fixed conditioning.

    Returns the per-sample PSNR (dB) of the reconstruction against ``scene``.
    """
    dtype = next(system.parameters()).dtype
    z0 = system.codec.encode(scene.to(dtype))
    sub = system.codec.encode(subject.to(dtype))
    m = system.latent_mask(mask.to(dtype))
    g = torch.Generator().manual_seed(seed)
    subject_noise = torch.randn(z0.shape, generator=g, dtype=dtype)
    tokens = system.semantic_tokens(sub, z0, m)

    def eps_fn(z, t):
        return system.predict_eps(z, z0, m, sub, subject_noise, t, sched, lam=1.0, tokens=tokens)[0]

    z_T = sampler_invert(z0, eps_fn, sched)
    recon = system.codec.decode(sample_loop(z_T, eps_fn, sched))
    return M.psnr(recon, scene.to(dtype))


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2)


# -- ablation suites -----------------------------------------------------------------------

SUITES = ("systems", "position", "sparse_sweep", "interpolation")
DEFAULT_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
_TABLE_KEYS = ("l1", "psnr", "ssim", "semantic", "quality")


@dataclass
class AblationConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    time_budget: float = 0.0  # seconds, 0 = unlimited


def ablation_variants(suite: str, acfg: AblationConfig) -> list[tuple[str, TrainConfig, float]]:
    """(row label, training config, inference threshold) for every row of a suite."""
    base = acfg.train
    lam_inf = acfg.eval.lam_inf
    if suite == "systems":
        return [(kind, replace(base, system=kind, lam=0.0 if kind == "blocked" else base.lam), lam_inf)
                for kind in ("symbiotic", "controlnet", "referencenet", "blocked")]
    if suite == "position":
        return [(pos, replace(base, system="symbiotic", model=replace(base.model, delivery=pos)), lam_inf)
                for pos in ("encoder", "decoder", "both")]
    if suite == "sparse_sweep":
        return [(f"lam={lam:g}", replace(base, system="symbiotic", lam=float(lam)), lam_inf) for lam in acfg.lambdas]
    if suite == "interpolation":
        return [(f"lam_inf={lam:g}", replace(base, system="symbiotic"), float(lam)) for lam in acfg.lambdas]
    raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")


def run_ablation(suite: str, acfg: AblationConfig, out_dir: Path, cache_dir: Optional[Path] = None) -> dict:
    """Train or load every variant of ``suite``, evaluate them and write ``table.csv``,
    ``report.json`` and ``plot.png`` under ``out_dir``.

    Once ``time_budget`` seconds have passed, remaining variants are skipped
    (the first one always runs) and the report is marked partial.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cache_dir) if cache_dir is not None else out_dir / "checkpoints"
    variants = ablation_variants(suite, acfg)
    pairs = benchmark_pairs(acfg.train, acfg.eval.bench_size)
    data = None
    start = time.time()
    rows, reports, skipped = [], {}, []
    for label, tcfg, lam_inf in variants:
        if acfg.time_budget and rows and time.time() - start > acfg.time_budget:
            skipped.append(label)
            continue
        if data is None or data.cfg.system != tcfg.system:
            data = TrainData(tcfg, data.pairs if data is not None else None)
        system = train_or_load(tcfg, cache_dir, data)
        report = evaluate(system, pairs, tcfg.schedule(), replace(acfg.eval, lam_inf=lam_inf))
        reports[label] = report.to_dict() | {"config_hash": tcfg.digest()}
        rows.append({"variant": label, **{k: report.metrics[k] for k in _TABLE_KEYS},
                     "diversity": report.diversity, "asa": report.asa_total, "config_hash": tcfg.digest()})
    summary = {"suite": suite, "partial": bool(skipped), "skipped": skipped, "rows": rows, "reports": reports,
               "train": acfg.train.to_dict(), "eval": asdict(acfg.eval), "elapsed": time.time() - start}
    if rows:
        _write_table(out_dir / "table.csv", rows)
        _plot_suite(out_dir / "plot.png", suite, rows)
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if skipped:
        log.warning("time budget exceeded; skipped %s", ", ".join(skipped))
    return summary


def _write_table(path: Path, rows: list[dict]) -> None:
    import csv

    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _plot_suite(path: Path, suite: str, rows: list[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r["variant"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, key in zip(axes, ("psnr", "quality", "diversity")):
        vals = [r[key] for r in rows]
        if suite in ("sparse_sweep", "interpolation"):
            xs = [float(lbl.split("=")[1]) for lbl in labels]
            ax.plot(xs, vals, marker="o")
            ax.set_xlabel("threshold")
        else:
            ax.bar(range(len(vals)), vals)
            ax.set_xticks(range(len(vals)))
            ax.set_xticklabels(labels)
        ax.set_title(key)
    fig.suptitle(suite)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
