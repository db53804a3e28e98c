"""Command-line entry point: ``symbiodiff <command> [--config FILE] [--key value ...]``.

Commands: gen-data, train, customize, outpaint, instrument, evaluate, ablate, sweep.
Every run writes its resolved ``config.txt`` (with the config hash) next to its
outputs; re-running with ``--config <that file>`` reproduces the outputs.

Exit status: 0 on success, 1 on a runtime failure, 2 on usage or config errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import SCHEMA, ConfigError, RunConfig, flag_name, load_file, parse_value

log = logging.getLogger("symbiodiff")

COMMANDS = {
    "gen-data": "write a synthetic dataset",
    "train": "train one system",
    "customize": "generate the masked region of a scene from a subject",
    "outpaint": "keep the masked region and regenerate the rest",
    "instrument": "trace subject attention and latent statistics",
    "evaluate": "score a checkpoint on the benchmark split",
    "ablate": "train and compare the variants of an ablation suite",
    "sweep": "customise once per inference threshold",
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symbiodiff", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key = value settings file")
        for key, spec in SCHEMA.items():
            p.add_argument(flag_name(key), dest=key, default=None, metavar="VALUE",
                           help=f"{spec.help} (default: {spec.default!r})")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    file_values = load_file(args.config) if args.config else {}
    overrides = {k: parse_value(k, getattr(args, k)) for k in SCHEMA if getattr(args, k) is not None}
    return RunConfig.resolve(file_values, overrides)


# -- image IO --------------------------------------------------------------------------


def read_rgb(path: str, size: int) -> np.ndarray:
    if not path:
        raise UsageError("missing image path")
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BICUBIC)
    return np.asarray(img)


def read_mask(path: str, size: int) -> np.ndarray:
    """Mask file with 255 = region to customise -> internal mask with 1 = keep scene."""
    if not path:
        raise UsageError("missing mask path")
    img = Image.open(path).convert("L")
    if img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return (np.asarray(img) < 128).astype(np.uint8)


def write_rgb(path: Path, x: torch.Tensor) -> Path:
    from .train_eval import to_image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_image(x)).save(path)
    return path


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_sidecar(path: Path, cfg: RunConfig, **extra) -> Path:
    meta = {"config_hash": cfg.digest(), "seed": cfg["seed"], "output_sha256": file_digest(path), **extra}
    side = Path(str(path) + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return side


def _load_system(cfg: RunConfig):
    from .checkpoint import load_checkpoint

    if not cfg["checkpoint"]:
        raise UsageError("--checkpoint is required")
    path = Path(cfg["checkpoint"])
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _request(cfg: RunConfig, system, lam_inf=None):
    from .compositor import CustomizationRequest
    from .train_eval import to_tensor

    size = system.config.image_size
    scene = to_tensor(read_rgb(cfg["scene"], size))[None]
    subject = to_tensor(read_rgb(cfg["subject"], size))[None]
    mask = torch.from_numpy(read_mask(cfg["mask"], size).astype(np.float32))[None, None]
    return CustomizationRequest(scene, mask, subject, cfg["guidance"],
                                cfg["lam_inf"] if lam_inf is None else lam_inf, cfg["seed"])


def _schedule(cfg: RunConfig):
    from .diffusion_core import make_schedule

    return make_schedule(inference_steps=cfg["inference_steps"])


# -- commands --------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> dict:
    from .data_synth import dataset_checksum, write_dataset

    root = Path(cfg["data_dir"]) if cfg["data_dir"] else Path(cfg["out_dir"]) / "data"
    write_dataset(root, cfg.synth_spec(), range(cfg["count"]))
    cfg.write(root)
    return {"data_dir": str(root), "count": cfg["count"], "checksum": dataset_checksum(root)}


def cmd_train(cfg: RunConfig) -> dict:
    from .data_synth import read_dataset
    from .train_eval import TrainData, train

    tcfg = cfg.train_config()
    out = Path(cfg["out_dir"])
    cfg.write(out)
    pairs = read_dataset(cfg["data_dir"]) if cfg["data_dir"] else None
    _, losses = train(tcfg, out, TrainData(tcfg, pairs))
    return {"checkpoint": str(out / "final.safetensors"), "final_loss": losses[-1] if losses else None,
            "config_hash": tcfg.digest()}


def _customize(cfg: RunConfig, mode: str) -> dict:
    from .compositor import customize_region, outpaint

    system = _load_system(cfg)
    out_dir = Path(cfg["out_dir"])
    cfg.write(out_dir)
    fn = customize_region if mode == "customize" else outpaint
    image = fn(_request(cfg, system), system, _schedule(cfg))
    path = write_rgb(out_dir / (cfg["output"] or f"{mode}.png"), image[0])
    write_sidecar(path, cfg, command=mode, checkpoint_sha256=file_digest(cfg["checkpoint"]),
                  system=system.kind, lam_inf=cfg["lam_inf"], guidance=cfg["guidance"],
                  inference_steps=cfg["inference_steps"])
    return {"output": str(path)}


def cmd_customize(cfg: RunConfig) -> dict:
    return _customize(cfg, "customize")


def cmd_outpaint(cfg: RunConfig) -> dict:
    return _customize(cfg, "outpaint")


def cmd_instrument(cfg: RunConfig) -> dict:
    from .compositor import CustomizationRequest, customize_region
    from .instrumentation import (asa_accumulate, asa_total, plot_asa_heatmap, plot_transmission, sld_compute,
                                  trace_rows, write_trace_table)
    from .train_eval import benchmark_pairs, stack_pairs

    system = _load_system(cfg)
    out_dir = Path(cfg["out_dir"])
    cfg.write(out_dir)
    sched = _schedule(cfg)
    traces: list = []
    if cfg["scene"]:
        customize_region(_request(cfg, system), system, sched, traces)
    else:
        scene, mask, subject = stack_pairs(benchmark_pairs(cfg.train_config(), cfg["trace_pairs"]))
        req = CustomizationRequest(scene, mask, subject, cfg["guidance"], cfg["lam_inf"], cfg["seed"])
        customize_region(req, system, sched, traces)
    sites = system.config.delivery_sites
    asa = {k: c.asa for k, c in asa_accumulate(traces, "layer").items()}
    sld = sld_compute(traces)
    summary = {"system": system.kind, "asa": asa, "sld": sld, "asa_total": asa_total(traces)}
    rows = trace_rows(system.kind, traces)
    if rows:
        write_trace_table(out_dir / "trace.csv", rows)
    plot_transmission(out_dir / "transmission.png", {system.kind: summary}, sites)
    plot_asa_heatmap(out_dir / "asa_heatmap.png", traces, sites)
    (out_dir / "instrument.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def cmd_evaluate(cfg: RunConfig) -> dict:
    from .train_eval import benchmark_pairs, evaluate, report_json

    system = _load_system(cfg)
    out_dir = Path(cfg["out_dir"])
    cfg.write(out_dir)
    report = evaluate(system, benchmark_pairs(cfg.train_config(), cfg["bench_size"]), _schedule(cfg),
                      cfg.eval_config())
    (out_dir / "report.json").write_text(report_json(report))
    return {"report": str(out_dir / "report.json"), **report.metrics}


def cmd_ablate(cfg: RunConfig) -> dict:
    from .train_eval import AblationConfig, run_ablation

    out_dir = Path(cfg["out_dir"])
    cfg.write(out_dir)
    acfg = AblationConfig(cfg.train_config(), cfg.eval_config(), tuple(cfg["lambdas"]), cfg["time_budget"])
    summary = run_ablation(cfg["suite"], acfg, out_dir)
    return {"table": str(out_dir / "table.csv"), "rows": len(summary["rows"]), "partial": summary["partial"]}


def cmd_sweep(cfg: RunConfig) -> dict:
    from .compositor import signature_sweep

    system = _load_system(cfg)
    out_dir = Path(cfg["out_dir"])
    cfg.write(out_dir)
    lambdas = list(cfg["lambdas"])
    images = signature_sweep(_request(cfg, system), system, _schedule(cfg), lambdas)
    paths = []
    for lam, img in zip(lambdas, images):
        path = write_rgb(out_dir / f"sweep_lam{lam:.2f}.png", img[0])
        write_sidecar(path, cfg, command="sweep", lam_inf=lam, checkpoint_sha256=file_digest(cfg["checkpoint"]))
        paths.append(str(path))
    write_rgb(out_dir / "sweep_strip.png", torch.cat([im[0] for im in images], dim=-1))
    return {"outputs": paths}


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "customize": cmd_customize,
    "outpaint": cmd_outpaint,
    "instrument": cmd_instrument,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def dispatch(command: str, cfg: RunConfig) -> int:
    try:
        result = HANDLERS[command](cfg)
    except (UsageError, ConfigError) as e:
        return _fail("config", str(e), 2)
    except Exception as e:  # noqa: BLE001 - report any pipeline failure as a structured error
        log.debug("command failed", exc_info=True)
        return _fail(type(e).__name__, str(e), 1)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as e:
        return _fail("config", str(e), 2)
    return dispatch(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
