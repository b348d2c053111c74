"""Run configuration: one YAML or JSON file per run, with CLI overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .models import ModelSpec

SENSITIVITY_KINDS = ("marginal", "elasticity")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class PDRequest:
    feature: str               # wide column
    target: str                # alternative name
    grid: list = None
    n_points: int = 50


@dataclass
class SensitivityRequest:
    feature: str               # wide column
    target: str
    delta: float
    kind: str = "marginal"
    constrained: bool = False
    label: str = ""            # shown in the delta column instead of the number


@dataclass
class InterpretConfig:
    models: list = None        # model names; None means every fitted model
    importance: bool = True
    pd: list = field(default_factory=list)
    sensitivity: list = field(default_factory=list)
    value_of_time: str = None  # reference wide column for marginal-effect ratios
    model_dir: str = None


@dataclass
class CvConfig:
    k: int = 10
    person_level: bool = False


@dataclass
class RunConfig:
    seed: int = None
    data: str = None
    schema: dict = field(default_factory=dict)
    features: list = None
    models: list = field(default_factory=list)
    cv: CvConfig = field(default_factory=CvConfig)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)
    synth: dict = None
    out: str = "out"
    jobs: int = 1
    base_dir: str = "."

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def hashable(self) -> dict:
        d = {
            "seed": self.seed, "data": self.data, "schema": self.schema, "features": self.features,
            "models": [{"name": m.name, "kind": m.kind, "params": m.resolved()} for m in self.models],
            "cv": dataclasses.asdict(self.cv), "interpret": dataclasses.asdict(self.interpret),
            "synth": self.synth,
        }
        d["interpret"].pop("model_dir", None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hashable(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header_lines(self) -> list:
        return [f"modechoice {__version__}", f"config_hash {self.config_hash()}", f"seed {self.seed}"]


def _take(d: dict, cls, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_config(raw: dict, base_dir=".", source: str = "<config>") -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    raw = dict(raw)
    models = []
    for i, m in enumerate(raw.pop("models", []) or []):
        where = f"{source}: models[{i}]"
        if not isinstance(m, dict) or "kind" not in m:
            raise ConfigError(f"{where}: needs at least 'kind'")
        extra = sorted(set(m) - {"name", "kind", "params"})
        if extra:
            raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")
        try:
            models.append(ModelSpec(str(m.get("name", m["kind"].upper())), m["kind"], dict(m.get("params") or {})))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
    cv = _take(raw.pop("cv", {}) or {}, CvConfig, f"{source}: cv")
    it_raw = dict(raw.pop("interpret", {}) or {})
    pd = [_take(p, PDRequest, f"{source}: interpret.pd[{i}]") for i, p in enumerate(it_raw.pop("pd", []) or [])]
    sens = [_take(s, SensitivityRequest, f"{source}: interpret.sensitivity[{i}]")
            for i, s in enumerate(it_raw.pop("sensitivity", []) or [])]
    it = _take(it_raw, InterpretConfig, f"{source}: interpret")
    it.pd, it.sensitivity = pd, sens
    cfg = _take(raw, RunConfig, source)
    cfg.models, cfg.cv, cfg.interpret, cfg.base_dir = models, cv, it, str(base_dir)
    validate(cfg, source)
    return cfg


def validate(cfg: RunConfig, source: str = "<config>"):
    names = [m.name for m in cfg.models]
    if len(set(names)) != len(names):
        raise ConfigError(f"{source}: duplicate model names {names}")
    if cfg.seed is not None and not isinstance(cfg.seed, int):
        raise ConfigError(f"{source}: seed must be an integer")
    if not isinstance(cfg.cv.k, int) or cfg.cv.k < 2:
        raise ConfigError(f"{source}: cv.k must be an integer >= 2, got {cfg.cv.k!r}")
    if not isinstance(cfg.jobs, int) or cfg.jobs == 0:
        raise ConfigError(f"{source}: jobs must be a nonzero integer")
    for i, s in enumerate(cfg.interpret.sensitivity):
        if s.kind not in SENSITIVITY_KINDS:
            raise ConfigError(f"{source}: interpret.sensitivity[{i}].kind must be one of {SENSITIVITY_KINDS}")
        if not s.delta:
            raise ConfigError(f"{source}: interpret.sensitivity[{i}].delta must be nonzero")
    for i, p in enumerate(cfg.interpret.pd):
        if p.grid is not None and len(p.grid) == 0:
            raise ConfigError(f"{source}: interpret.pd[{i}].grid is empty")
        if p.n_points < 1:
            raise ConfigError(f"{source}: interpret.pd[{i}].n_points must be >= 1")
    if cfg.interpret.models is not None:
        for n in cfg.interpret.models:
            if n not in names:
                raise ConfigError(f"{source}: interpret.models names unknown model {n!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}, line {mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: malformed config: {getattr(e, 'problem', e)}") from None
    return parse_config(raw, path.parent, str(path))
