"""Run configuration: defaults, a flat ``key = value`` file format and CLI overrides."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError, DataIOError


@dataclass
class RunConfig:
    # model
    d: int = 300
    rating_layers: int = 4
    gen_layers: int = 3
    dropout: float = 0.1
    init_std: float = 0.05
    # optimisation
    batch_size: int = 100
    lr: float = 0.002
    momentum: float = 0.9
    l2: float = 0.001
    clip_norm: float = 1.0
    epochs: int = 10
    seed: int = 0
    # generation
    beam_size: int = 4
    max_tokens: int = 100
    keep_sentences: int = 2
    n_sentences: int | None = None  # sentences per review used for training and as references; None keeps all
    # preprocessing
    min_user_records: int = 10
    min_word_freq: int = 10
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    # paths
    corpus: str | None = None
    lexicon: str | None = None
    dataset: str | None = None
    checkpoint_dir: str = "checkpoints"
    checkpoint: str | None = None  # file to load; defaults to <checkpoint_dir>/best.ckpt
    report_dir: str = "reports"
    log: str | None = None  # defaults to <checkpoint_dir>/train_log.csv

    def __post_init__(self):
        self.split = tuple(float(x) for x in self.split)
        self.validate()

    def validate(self) -> None:
        if len(self.split) != 3 or any(x < 0 for x in self.split):
            raise ConfigError(f"split needs three non-negative fractions, got {self.split}")
        if not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must sum to 1, got {sum(self.split):g}")
        positive = ("d", "rating_layers", "batch_size", "beam_size", "max_tokens", "keep_sentences",
                    "min_user_records", "min_word_freq")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.gen_layers < 2:
            raise ConfigError("gen_layers must be at least 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.n_sentences is not None and self.n_sentences < 1:
            raise ConfigError("n_sentences must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ConfigError("lr and clip_norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")

    @property
    def log_path(self) -> Path:
        return Path(self.log) if self.log else Path(self.checkpoint_dir) / "train_log.csv"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.checkpoint_dir) / "best.ckpt"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split"] = list(self.split)
        return out


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
ALIASES = {"lambda": "l2", "checkpoint_path": "checkpoint"}


def _kind(name: str) -> str:
    t = str(FIELDS[name].type)
    if "tuple" in t:
        return "split"
    for kind in ("int", "float", "str"):
        if t.startswith(kind):
            return kind
    raise AssertionError(t)  # pragma: no cover


def coerce(name: str, raw: Any) -> Any:
    """Convert a string (or already-typed value) to the type of field ``name``."""
    key = canonical(name)
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    optional = "None" in str(FIELDS[key].type)
    if optional and text.lower() in ("", "none", "all"):
        return None
    kind = _kind(key)
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "split":
            parts = [float(x) for x in text.replace("/", ",").split(",")]
            return tuple(parts)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def canonical(name: str) -> str:
    key = name.strip().replace("-", "_").lower()
    key = ALIASES.get(key, key)
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    return key


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        key = canonical(k)
        values[key] = coerce(key, v)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise DataIOError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[canonical(k)] = coerce(k, v)
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, value in cfg.to_dict().items():
        if value is None:
            continue
        if name == "split":
            value = ",".join(repr(x) for x in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
