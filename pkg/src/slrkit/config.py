"""Parsing for ``key = value`` configuration files (UTF-8, ``#`` comments)."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import CorpusSpec
from .errors import ConfigError

__all__ = ["TrainConfig", "parse_kv_file", "load_corpus_spec", "load_train_config"]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 40
    batch_size: int = 4
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    r: float = 0.35
    n_m: int = 2
    e_warm: int = 5
    dfconv: bool = True
    dplr: bool = True
    bta: bool = True
    densify: bool = True
    refine: bool = True
    seed: int = 0
    dpl_dump: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate, epochs and batch_size must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 < self.r < 1.0 or self.n_m < 1 or self.e_warm < 0:
            raise ConfigError("invalid r, n_m or e_warm")


def parse_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


def _coerce(cls, raw: dict[str, str], path: str | Path):
    spec_fields = {f.name: f.type for f in fields(cls)}
    unknown = set(raw) - set(spec_fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, val in raw.items():
        typ = spec_fields[key]
        try:
            if typ == "bool":
                if val.lower() in ("true", "1", "on"):
                    kwargs[key] = True
                elif val.lower() in ("false", "0", "off"):
                    kwargs[key] = False
                else:
                    raise ValueError(f"not a boolean: {val!r}")
            elif typ == "int":
                kwargs[key] = int(val)
            elif typ == "float":
                kwargs[key] = float(val)
            else:
                kwargs[key] = val
        except ValueError as exc:
            raise ConfigError(f"{path}: key {key!r}: {exc}") from exc
    return cls(**kwargs)


def load_corpus_spec(path: str | Path) -> CorpusSpec:
    return _coerce(CorpusSpec, parse_kv_file(path), path)


def load_train_config(path: str | Path) -> TrainConfig:
    return _coerce(TrainConfig, parse_kv_file(path), path)
