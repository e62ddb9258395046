"""Run configuration: one JSON file, overridable from the command line.

Precedence is ``--override`` flags, then the file, then the defaults below.
Relative paths resolve against the output root, taken from the
``LIVR_OUT`` environment variable (current directory when unset).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model import LoraConfig, ModelConfig
from .taskgen.generators import KINDS
from .training import BASELINES, OptimizerConfig
from .vocab import LatentConfig

OUT_ENV = "LIVR_OUT"
METHODS = ("livr",) + BASELINES
SELECTIONS = ("best_validation", "final")


class ConfigError(ValueError):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def resolve(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


def default_model() -> ModelConfig:
    return ModelConfig(latent=LatentConfig(K=4), lora=LoraConfig(rank=4, alpha=8))


def default_optimizer() -> OptimizerConfig:
    return OptimizerConfig(lr=3e-3, batch_size=8, accum_steps=1)


@dataclass
class RunConfig:
    method: str = "livr"
    tasks: tuple[str, ...] = ("localization",)
    data_dir: str = "data"
    n_train: int = 1000
    n_val: int = 250
    n_test: int = 500
    data_seed: int = 0
    schedule: tuple[int, int] = (4, 6)
    stage1_variant: str = "bottleneck"
    selection: str | None = None
    image_copies: int = 1
    seed: int = 0
    out_dir: str = "run"
    model: ModelConfig = field(default_factory=default_model)
    optimizer: OptimizerConfig = field(default_factory=default_optimizer)

    # locations are not part of the run's identity
    _UNHASHED = ("data_dir", "out_dir")

    @property
    def resolved_selection(self) -> str:
        if self.selection is not None:
            return self.selection
        return "best_validation" if len(self.tasks) == 1 else "final"

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method {self.method!r} not in {METHODS}")
        bad = [t for t in self.tasks if t not in KINDS]
        if not self.tasks or bad:
            raise ConfigError(f"tasks must be a non-empty subset of {KINDS}, got {list(self.tasks)}")
        if len(self.schedule) != 2 or min(self.schedule) < 0 or sum(self.schedule) == 0:
            raise ConfigError(f"schedule must be two non-negative epoch counts, got {self.schedule}")
        if self.selection is not None and self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}")
        K = self.model.latent.K
        if self.method in ("livr", "latents_only") and K < 1:
            raise ConfigError(f"{self.method} needs model.latent.K >= 1")
        if self.method in ("direct_sft", "mask_only", "image_twice") and K != 0:
            raise ConfigError(f"{self.method} needs model.latent.K = 0")
        if (self.image_copies == 2) != (self.method == "image_twice"):
            raise ConfigError("image_copies=2 goes with method image_twice and only with it")
        if min(self.n_train, self.n_val) < 1 or self.n_test < 0:
            raise ConfigError("dataset sizes must be positive")
        return self

    def to_dict(self) -> dict:
        return {
            "method": self.method, "tasks": list(self.tasks), "data_dir": self.data_dir,
            "n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test,
            "data_seed": self.data_seed, "schedule": list(self.schedule),
            "stage1_variant": self.stage1_variant, "selection": self.selection,
            "image_copies": self.image_copies, "seed": self.seed, "out_dir": self.out_dir,
            "model": self.model.to_dict(),
            "optimizer": {**self.optimizer.__dict__, "betas": list(self.optimizer.betas)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "model" in d:
                d["model"] = ModelConfig.from_dict(d["model"])
            if "optimizer" in d:
                d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
        for k in ("tasks", "schedule"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d).validate()

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in self._UNHASHED:
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))


def parse_value(text: str):
    """JSON when it parses (numbers, lists, booleans, null), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` strings to a nested config dict (copied)."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a config section")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = parse_value(text)
    return d


def load_config(path=None, overrides=None, seed: int | None = None) -> RunConfig:
    base = RunConfig().to_dict()
    if path is not None:
        try:
            file_d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from None
        base = _merge(base, file_d)
    d = apply_overrides(base, overrides)
    if seed is not None:
        d["seed"] = int(seed)
    return RunConfig.from_dict(d)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
