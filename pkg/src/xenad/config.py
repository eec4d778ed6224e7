"""Run configuration: one sectioned key-value text file.

Sections: ``[paths]``, ``[run]``, ``[simulate]``, ``[interaction]``,
``[behavior]``, ``[fusion]``, ``[eval]``. Unknown keys are rejected so that
typos fail loudly. Paths may be overridden with the environment variables
``XENAD_DATA_DIR``, ``XENAD_WEIGHTS_DIR``, ``XENAD_SCORES_DIR`` and
``XENAD_REPORT_DIR``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .behavior import BehaviorConfig
from .interaction import InteractionConfig

ENV_PATHS = {
    "data_dir": "XENAD_DATA_DIR",
    "weights_dir": "XENAD_WEIGHTS_DIR",
    "scores_dir": "XENAD_SCORES_DIR",
    "report_dir": "XENAD_REPORT_DIR",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    data_dir: str = "run/data"
    weights_dir: str = "run/weights"
    scores_dir: str = "run/scores"
    report_dir: str = "run/report"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class SimulateSettings:
    train_count: int = 100
    test_count: int = 200
    mix_pair_collision: float = 1 / 6
    mix_zigzag: float = 1 / 6
    mix_sudden_stop: float = 1 / 6
    num_frames: int = 150
    fps: float = 10.0
    num_objects: int = 3
    noise_std: float = 0.0005
    scene_delta: float = 0.0

    def anomaly_mix(self) -> dict:
        return {"pair_collision": self.mix_pair_collision, "zigzag": self.mix_zigzag,
                "sudden_stop": self.mix_sudden_stop}


@dataclass(frozen=True)
class FusionSettings:
    alpha: float = 0.95
    mode: str = "immediate"

    def __post_init__(self):
        if self.mode not in ("immediate", "deferred"):
            raise ConfigError(f"fusion.mode must be immediate or deferred, got {self.mode!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError("fusion.alpha must lie in (0, 1)")


@dataclass(frozen=True)
class EvalSettings:
    protocol: str = "raw"
    tau: float | None = None  # None: the fused ensemble threshold

    def __post_init__(self):
        if self.protocol not in ("raw", "legacy_minmax"):
            raise ConfigError(f"eval.protocol must be raw or legacy_minmax, got {self.protocol!r}")


SECTIONS = {
    "paths": Paths,
    "run": RunSettings,
    "simulate": SimulateSettings,
    "interaction": InteractionConfig,
    "behavior": BehaviorConfig,
    "fusion": FusionSettings,
    "eval": EvalSettings,
}


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    run: RunSettings = field(default_factory=RunSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def path(self, key: str) -> Path:
        return Path(getattr(self.paths, key))

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw == "" else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section(cls, items: dict, name: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(items) - set(known))
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {unknown}")
    defaults = cls()
    kwargs = {k: _parse(v, getattr(defaults, k), f"[{name}] {k}") for k, v in items.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def loads(text: str, env=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = sorted(set(cp.sections()) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    parts = {name: _section(cls, dict(cp[name]) if cp.has_section(name) else {}, name)
             for name, cls in SECTIONS.items()}
    cfg = RunConfig(**parts)
    env = os.environ if env is None else env
    overrides = {k: env[v] for k, v in ENV_PATHS.items() if env.get(v)}
    return cfg.replace("paths", **overrides) if overrides else cfg


def load(path, env=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, env)


def dumps(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        part = getattr(cfg, name)
        cp[name] = {f.name: _fmt(getattr(part, f.name)) for f in fields(part)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
