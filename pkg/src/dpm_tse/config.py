"""Run configuration: one nested record, loadable from YAML, overridable from the CLI.

Precedence for the seed, lowest first: built-in default, ``DPM_TSE_SEED``,
config file, command-line flag.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .audio import MelConfig
from .mixgen import CATEGORIES, CorpusConfig

SEED_ENV = "DPM_TSE_SEED"


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    zero_terminal_snr: bool = True
    inference_steps: int = 50
    noise_variance: str = "forward"
    clamp: float = 1.2


@dataclass
class ModelSection:
    patch_frames: int = 16
    hidden: int = 512
    emb_dim: int = 256
    clip_frames: int = 64
    clips_per_item: int = 4
    dtype: str = "float64"


@dataclass
class TrainSection:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 24
    epochs: int = 20


@dataclass
class RunConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def data_hash(self) -> str:
        """Identifies a corpus: generation settings, mel front end and seed."""
        corpus = asdict(self.corpus)
        corpus["seed"] = self.seed
        mel = asdict(self.mel)
        mel.pop("log_max")  # refit from the generated data
        return _hash({"corpus": _plain(corpus), "mel": _plain(mel)})

    def model_hash(self) -> str:
        """Identifies a trained model's contract (schedule, network shape, categories)."""
        sched = asdict(self.schedule)
        for k in ("inference_steps", "noise_variance", "clamp"):
            sched.pop(k)
        return _hash({"schedule": sched, "model": asdict(self.model),
                      "categories": list(self.corpus.categories), "n_mels": self.mel.n_mels})


# Full-size corpus and training length; far too slow for a laptop.
PAPER_SCALE = {
    "corpus": {"n_train": 47356, "n_valid": 16000, "n_test": 16000},
    "train": {"epochs": 150, "batch_size": 24},
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _merge_section(section, values: dict, where: str):
    if not isinstance(values, dict):
        raise ValueError(f"config section {where!r} must be a mapping")
    known = {f.name for f in fields(section)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in {where!r}: {sorted(unknown)}")
    return replace(section, **values)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Merge a nested mapping (as read from YAML) into ``cfg``."""
    out = cfg
    for key, value in overrides.items():
        if key == "seed":
            out = replace(out, seed=int(value))
            continue
        if key not in {f.name for f in fields(RunConfig)}:
            raise ValueError(f"unknown config section {key!r}")
        current = getattr(out, key)
        if not is_dataclass(current):
            raise ValueError(f"config key {key!r} is not a section")
        out = replace(out, **{key: _merge_section(current, value or {}, key)})
    return out


def load_config(path: Optional[os.PathLike] = None, env: Optional[dict] = None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = RunConfig()
    if env.get(SEED_ENV):
        cfg = replace(cfg, seed=int(env[SEED_ENV]))
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be a mapping")
        cfg = apply_overrides(cfg, data)
    return cfg


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def config_from_dict(data: dict) -> RunConfig:
    return apply_overrides(RunConfig(), data)


def category_names(cfg: RunConfig) -> tuple:
    return tuple(cfg.corpus.categories) or CATEGORIES
