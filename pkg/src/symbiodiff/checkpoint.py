"""Checkpoint files: one safetensors blob of named parameter arrays.

The header metadata carries (all JSON strings):

``format``        ``symbiodiff-checkpoint/1``
``config``        the DenoiserConfig as a dict
``system``        system kind (symbiotic / controlnet / referencenet / blocked)
``seed``          initialisation seed
``trained_steps`` optimizer steps applied
``extra``         free-form run metadata (train config, config hash, ...)
"""
from __future__ import annotations

import json
from pathlib import Path

from safetensors.torch import load_file, save_file
from safetensors import safe_open

from .denoiser import DenoiserConfig
from .system import DiffusionSystem

FORMAT = "symbiodiff-checkpoint/1"
META_KEY = "symbiodiff"


def save_checkpoint(path: Path, system: DiffusionSystem, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().contiguous().clone() for k, v in system.state_dict().items()}
    meta = {
        "format": FORMAT,
        "config": system.config.to_dict(),
        "system": system.kind,
        "seed": system.seed,
        "trained_steps": getattr(system, "trained_steps", 0),
        "extra": extra or {},
    }
    # one metadata entry: safetensors writes several entries in hash order, which varies per process
    tmp = path.with_suffix(path.suffix + ".tmp")
    save_file(tensors, str(tmp), metadata={META_KEY: json.dumps(meta, sort_keys=True)})
    tmp.replace(path)
    return path


def read_metadata(path: Path) -> dict:
    with safe_open(str(path), framework="pt") as f:
        raw = (f.metadata() or {}).get(META_KEY)
    meta = json.loads(raw) if raw else {}
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    return {k: meta[k] for k in ("config", "system", "seed", "trained_steps", "extra")}


def load_checkpoint(path: Path) -> DiffusionSystem:
    meta = read_metadata(path)
    system = DiffusionSystem(DenoiserConfig.from_dict(meta["config"]), meta["system"], meta["seed"])
    system.load_state_dict(load_file(str(path)), strict=True)
    system.trained_steps = meta["trained_steps"]
    system.eval()
    return system
