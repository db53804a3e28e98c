"""Run configuration: a flat ``key = value`` text file, overridable by flags.

Every key has a type, a default and a one-line description (see ``SCHEMA``).
Each key ``foo_bar`` is also the command-line flag ``--foo-bar``. Lines starting
with ``#`` are comments. Lists are comma separated. Unknown keys and values
that do not parse are rejected with :class:`ConfigError`.

The output root defaults to ``out_dir`` and can be redirected with the
``SYMBIODIFF_OUT`` environment variable.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

OUT_ENV = "SYMBIODIFF_OUT"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _str(s: str) -> str:
    return s.strip()


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: dict[str, Key] = {
    # paths
    "out_dir": Key(_str, "runs", "output root"),
    "data_dir": Key(_str, "", "dataset directory (gen-data writes, train reads; empty = generate in memory)"),
    "checkpoint": Key(_str, "", "checkpoint file for customize/outpaint/instrument/evaluate/sweep"),
    "scene": Key(_str, "", "scene image"),
    "mask": Key(_str, "", "mask image, white (255) = region to customise"),
    "subject": Key(_str, "", "subject image"),
    "output": Key(_str, "", "output file name (relative to out_dir)"),
    # data
    "count": Key(int, 1000, "number of pairs written by gen-data"),
    "image_size": Key(int, 64, "image resolution"),
    "data_seed": Key(int, 0, "dataset seed"),
    "category_weights": Key(_floats, (0.2, 0.65, 0.15), "glyph_text, shape_logo, tryon_patch sampling weights"),
    "mask_area_min": Key(float, 0.10, "smallest region area fraction"),
    "mask_area_max": Key(float, 0.30, "largest region area fraction"),
    # model
    "base_channels": Key(int, 64, "denoiser width at the first scale"),
    "num_heads": Key(int, 4, "attention heads"),
    "token_dim": Key(int, 64, "semantic token width"),
    "encoder_channels": Key(int, 48, "semantic encoder width"),
    "codec": Key(_str, "patch", "latent codec: patch or identity"),
    "codec_factor": Key(int, 4, "patch codec downsampling factor"),
    "delivery": Key(_str, "decoder", "signature delivery position: decoder, encoder or both"),
    "init_seed": Key(int, 0, "parameter initialisation seed"),
    # training
    "system": Key(_str, "symbiotic", "symbiotic, controlnet, referencenet or blocked"),
    "steps": Key(int, 2000, "optimizer steps"),
    "batch_size": Key(int, 16, "training batch size"),
    "lr": Key(float, 3e-4, "learning rate"),
    "lam": Key(float, 0.6, "training sparse threshold"),
    "condition_drop_prob": Key(float, 0.1, "probability of dropping all conditions for a sample"),
    "checkpoint_every": Key(int, 0, "save a checkpoint every N steps (0 = only at the end)"),
    "train_seed": Key(int, 1, "seed for timesteps, noise, dropout, sparse draws and sampling order"),
    "train_size": Key(int, 4000, "training pairs when data_dir is empty"),
    "augment": Key(_bool, True, "augment subjects during training"),
    # inference and evaluation
    "seed": Key(int, 0, "sampling seed"),
    "guidance": Key(float, 1.0, "classifier-free guidance scale"),
    "lam_inf": Key(float, 1.0, "inference sparse threshold"),
    "inference_steps": Key(int, 20, "sampler steps"),
    "bench_size": Key(int, 64, "benchmark pairs"),
    "eval_batch": Key(int, 16, "evaluation batch size"),
    "diversity_subjects": Key(int, 8, "subjects used for the diversity score"),
    "diversity_seeds": Key(int, 8, "seeds per subject for the diversity score"),
    "trace_pairs": Key(int, 16, "benchmark pairs traced for attention statistics"),
    # ablations and sweeps
    "suite": Key(_str, "systems", "systems, position, sparse_sweep or interpolation"),
    "lambdas": Key(_floats, (0.0, 0.2, 0.4, 0.6, 0.8, 1.0), "threshold grid for sweeps"),
    "time_budget": Key(float, 0.0, "ablation time budget in seconds (0 = unlimited)"),
}


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, raw: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return SCHEMA[key].parse(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    errors = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"{source}:{n}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, raw)
        except ConfigError as e:
            errors.append(f"{source}:{n}: {e}")
    if errors:
        raise ConfigError("\n".join(errors))
    return out


def load_file(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(), str(path))


class RunConfig(dict):
    """Resolved settings: schema defaults < config file < flags."""

    @classmethod
    def resolve(cls, file_values: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls({k: v.default for k, v in SCHEMA.items()})
        for source in (file_values or {}, overrides or {}):
            for k, v in source.items():
                if k not in SCHEMA:
                    raise ConfigError(f"unknown key {k!r}")
                cfg[k] = v
        env = os.environ.get(OUT_ENV)
        if env:
            cfg["out_dir"] = env
        cfg.validate()
        return cfg

    def validate(self) -> None:
        errors = []
        for key in ("count", "image_size", "steps", "batch_size", "inference_steps", "bench_size", "eval_batch"):
            if self[key] < 1:
                errors.append(f"{key} must be >= 1")
        for key in ("lam", "lam_inf", "condition_drop_prob"):
            if not 0.0 <= self[key] <= 1.0:
                errors.append(f"{key} must be in [0, 1]")
        if not 0 < self["mask_area_min"] <= self["mask_area_max"] < 1:
            errors.append("need 0 < mask_area_min <= mask_area_max < 1")
        choices = {"system": ("symbiotic", "controlnet", "referencenet", "blocked"),
                   "codec": ("patch", "identity"), "delivery": ("decoder", "encoder", "both"),
                   "suite": ("systems", "position", "sparse_sweep", "interpolation")}
        for key, allowed in choices.items():
            if self[key] not in allowed:
                errors.append(f"{key} must be one of {', '.join(allowed)}")
        if any(not 0 <= x <= 1 for x in self["lambdas"]) or not self["lambdas"]:
            errors.append("lambdas must be a non-empty list in [0, 1]")
        if errors:
            raise ConfigError("\n".join(errors))

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(self[k])}\n" for k in SCHEMA)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def write(self, directory: Path, name: str = "config.txt") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / name
        path.write_text(f"# config hash {self.digest()}\n" + self.to_text())
        return path

    # -- typed views ------------------------------------------------------------------

    def model_config(self):
        from .denoiser import DenoiserConfig

        return DenoiserConfig(image_size=self["image_size"], base_channels=self["base_channels"],
                              num_heads=self["num_heads"], token_dim=self["token_dim"],
                              encoder_channels=self["encoder_channels"], codec=self["codec"],
                              codec_factor=self["codec_factor"], delivery=self["delivery"])

    def synth_spec(self):
        return self.train_config().synth_spec()

    def train_config(self):
        from .train_eval import TrainConfig

        return TrainConfig(model=self.model_config(), system=self["system"], steps=self["steps"],
                           batch_size=self["batch_size"], lr=self["lr"], lam=self["lam"],
                           condition_drop_prob=self["condition_drop_prob"],
                           checkpoint_every=self["checkpoint_every"], seed=self["init_seed"],
                           train_seed=self["train_seed"], data_seed=self["data_seed"],
                           train_size=self["train_size"], augment=self["augment"],
                           category_weights=tuple(self["category_weights"]),
                           mask_area_range=(self["mask_area_min"], self["mask_area_max"]))

    def eval_config(self):
        from .train_eval import EvalConfig

        return EvalConfig(bench_size=self["bench_size"], batch=self["eval_batch"],
                          inference_steps=self["inference_steps"], guidance=self["guidance"],
                          lam_inf=self["lam_inf"], seed=self["seed"],
                          diversity_subjects=self["diversity_subjects"],
                          diversity_seeds=self["diversity_seeds"], trace_pairs=self["trace_pairs"])
