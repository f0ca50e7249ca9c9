"""Run configuration and its ``key = value`` file format.

The file has four sections, each mapping one-to-one onto a dataclass::

    [run]      RunConfig
    [model]    ModelConfig   (PolicyConfig minus the vocabulary size)
    [train]    TrainConfig
    [pattern]  PatternConfig (context_len is taken from [model])

Every key has a default; unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field, fields

from .patterns import PatternConfig
from .trainer import TrainConfig

DEFAULT_N_GEN = {"gridhouse": 64, "arithgen": 128, "kbhop": 128}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    context_len: int = 256
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    env: str = "gridhouse"
    #: JSON object of extra environment constructor arguments, e.g. {"kb_size": 12}
    env_params: str = "{}"
    #: monologue | dialogue | analogue; empty picks the environment's default
    pattern: str = ""
    #: exploration episodes per iteration; 0 picks the per-environment default
    n_gen: int = 0
    n_train: int = 256
    max_iterations: int = 30
    workers: int = 1
    eval_episodes: int = 100
    seed: int = 0
    replay_window: int = 2
    n_expert: int = 256
    warmup_max_epochs: int = 20
    warmup_target: float = 0.3
    warmup_lr: float = 1e-3
    warmup_eval_episodes: int = 50
    #: success measure for the warmup stop rule: "explore" (sampled at the
    #: exploration temperature) or "greedy"
    warmup_metric: str = "explore"
    exploration_temperature: float = 1.0
    dump_buffers: bool = False

    def __post_init__(self):
        from .envs import DEFAULT_PATTERN

        if self.env not in DEFAULT_PATTERN:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.pattern and self.pattern not in ("monologue", "dialogue", "analogue"):
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.resolved_pattern == "analogue" and self.env != "arithgen":
            raise ConfigError("the analogue pattern pairs with the arithgen env only")
        if self.warmup_metric not in ("explore", "greedy"):
            raise ConfigError(f"unknown warmup_metric {self.warmup_metric!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.resolved_n_gen < self.workers:
            raise ConfigError("n_gen must be at least the worker count")
        if self.max_iterations < 0 or self.n_train < 1 or self.eval_episodes < 1:
            raise ConfigError("invalid iteration/train/eval sizes")
        self.params  # validates JSON

    @property
    def resolved_pattern(self) -> str:
        from .envs import DEFAULT_PATTERN

        return self.pattern or DEFAULT_PATTERN[self.env]

    @property
    def resolved_n_gen(self) -> int:
        return self.n_gen or DEFAULT_N_GEN[self.env]

    @property
    def params(self) -> dict:
        try:
            value = json.loads(self.env_params)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"env_params is not valid JSON: {exc}") from None
        if not isinstance(value, dict):
            raise ConfigError("env_params must be a JSON object")
        return value


@dataclass(frozen=True)
class LTCConfig:
    run: RunConfig = field(default_factory=RunConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pattern: PatternConfig = field(default_factory=PatternConfig)

    SECTIONS = ("run", "model", "train", "pattern")

    def pattern_config(self) -> PatternConfig:
        return dataclasses.replace(self.pattern, context_len=self.model.context_len)

    def replace(self, **overrides) -> "LTCConfig":
        """Override fields by ``section.key`` or unambiguous bare ``key``."""
        updates: dict[str, dict] = {s: {} for s in self.SECTIONS}
        for key, value in overrides.items():
            section, name = _locate(key)
            updates[section][name] = _coerce(section, name, value)
        return LTCConfig(**{
            s: dataclasses.replace(getattr(self, s), **updates[s]) if updates[s] else getattr(self, s)
            for s in self.SECTIONS
        })

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        for s in self.SECTIONS:
            obj = getattr(self, s)
            cp[s] = {f.name: _render(getattr(obj, f.name)) for f in _keys(s)}
        out = io.StringIO()
        cp.write(out)
        return out.getvalue()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "LTCConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        overrides = {}
        for section in cp.sections():
            if section not in cls.SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            known = {f.name for f in _keys(section)}
            for key, value in cp[section].items():
                if key not in known:
                    raise ConfigError(f"unknown key {section}.{key}")
                overrides[f"{section}.{key}"] = value
        return cls().replace(**overrides)

    @classmethod
    def load(cls, path) -> "LTCConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


_CLASSES = {"run": RunConfig, "model": ModelConfig, "train": TrainConfig, "pattern": PatternConfig}


def _keys(section: str):
    return [f for f in fields(_CLASSES[section]) if not (section == "pattern" and f.name == "context_len")]


def all_keys() -> list[tuple[str, str, object]]:
    """(section, key, default) for every configurable field."""
    out = []
    for s in LTCConfig.SECTIONS:
        default = _CLASSES[s]()
        out += [(s, f.name, getattr(default, f.name)) for f in _keys(s)]
    return out


def _locate(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _CLASSES or name not in {f.name for f in _keys(section)}:
            raise ConfigError(f"unknown key {key}")
        return section, name
    hits = [s for s in LTCConfig.SECTIONS if key in {f.name for f in _keys(s)}]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous key {key!r}" + (f" (in {hits})" if hits else ""))
    return hits[0], key


def _coerce(section: str, name: str, value):
    ftype = {f.name: f.type for f in fields(_CLASSES[section])}[name]
    if not isinstance(value, str):
        return value
    try:
        if "bool" in str(ftype):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if "int" in str(ftype) and "None" in str(ftype):
            return None if value.strip().lower() in ("", "none") else int(value)
        if str(ftype) == "int":
            return int(value)
        if str(ftype) == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {section}.{name}: {value!r}") from None
    return value


def _render(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)
