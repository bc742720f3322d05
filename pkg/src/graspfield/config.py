"""Run configuration: sectioned key-value files with strict key checking.

Every tunable across the package lives here with its default; a config
file only lists overrides.  The resolved configuration hashes to a short
hex string that is embedded in every artifact a run produces, so outputs
are always traceable to the exact settings that made them.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    """Unknown section/key, bad value, or unreadable file."""


@dataclass
class HandSection:
    mu: float = 0.5


@dataclass
class ObjectsSection:
    suite: str = "all"      # comma-separated object ids, or "all"
    x: float = 0.0          # table position for synthesis and training
    train_frac: float = 0.6
    n_unseen_categories: int = 2
    split_seed: int = 0


@dataclass
class TrajgenSection:
    n_patterns: int = 100
    n_test_patterns: int = 20
    pattern_seed: int = 0


@dataclass
class GfSection:
    n_examples: int = 12
    synth_budget: int = 500
    n_updates: int = 12000
    lr: float = 2e-3
    batch_divisor: int = 5
    feat: int = 64
    hidden: int = 128


@dataclass
class RlSection:
    n_iterations: int = 120
    n_envs: int = 64
    lr: float = 3e-4
    gamma: float = 0.99
    gae_decay: float = 0.95
    clip: float = 0.2
    epochs: int = 2
    minibatch: int = 64
    entropy_coeff: float = 0.003
    value_coeff: float = 0.5
    lambda_s: float = 1.0
    lambda_a: float = 0.09
    lambda_h: float = 0.5


@dataclass
class EvalSection:
    n_seeds: int = 5
    repeats: int = 5
    noise_deg: float = 0.0
    noise_cm: float = 0.0


@dataclass
class ServerSection:
    host: str = "127.0.0.1"
    port: int = 7481
    tick_hz: float = 20.0


@dataclass
class RunConfig:
    hand: HandSection = field(default_factory=HandSection)
    objects: ObjectsSection = field(default_factory=ObjectsSection)
    trajgen: TrajgenSection = field(default_factory=TrajgenSection)
    gf: GfSection = field(default_factory=GfSection)
    rl: RlSection = field(default_factory=RlSection)
    eval: EvalSection = field(default_factory=EvalSection)
    server: ServerSection = field(default_factory=ServerSection)

    def hash(self) -> str:
        """Short digest of the fully resolved configuration."""
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:12]


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(section: str, key: str, raw: str, current):
    kind = type(current)
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false", "0", "1"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        known = {f.name for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, key, _coerce(section, key, raw, getattr(target, key)))
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as f:
            return loads(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def dumps(cfg: RunConfig) -> str:
    """Canonical full rendering (defaults included), stable across runs."""
    out = io.StringIO()
    for section in _SECTIONS:
        out.write(f"[{section}]\n")
        target = getattr(cfg, section)
        for f in fields(target):
            out.write(f"{f.name} = {getattr(target, f.name)}\n")
        out.write("\n")
    return out.getvalue()


def save(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dumps(cfg))
