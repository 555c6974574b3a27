"""Experiment configuration files.

A config is one YAML mapping.  Every key is checked against :data:`SCHEMA`;
unknown keys, wrong types and missing required keys are reported with the
line they appear on.  ``seed`` is required: nothing is ever seeded from the
clock.

Example::

    seed: 7
    case: ieee14            # bundled name or path to a case JSON
    samples: 21600
    network: {lam: 10.0, mu: 40.0, poll_interval: 4.0}
    scenario: {kind: mfdi}
    detector: {alpha: 8.0e-5, beta: 90}
    eval: {folds: 10}
    out: results
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .attackgen import ATTACK_KINDS, AttackScenario
from .detector import ETA_BY_ATTACK, EnsembleConfig
from .eval import FoldPlan
from .gridmodel import (
    GridCase,
    LoadProfile,
    bundled_case,
    bundled_case_names,
    default_profile,
    load_case,
    load_profile,
)
from .netsim import QueueParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "SCHEMA"]

_NUM = (int, float)

SCHEMA: dict[str, Any] = {
    "seed": int,
    "case": str,
    "profile": (str, type(None)),
    "samples": int,
    "out": str,
    "network": {"lam": _NUM, "mu": _NUM, "poll_interval": _NUM},
    "scenario": {
        "kind": str,
        "attack_fraction": _NUM,
        "targets_per_event": (int, type(None)),
        "burst_length": (int, type(None)),
        "fdi_magnitude": _NUM,
        "severity": (list, _NUM, type(None)),
        "mfdi_probability": _NUM,
    },
    "detector": {
        "alpha": _NUM,
        "beta": int,
        "eta": (_NUM, type(None)),
        "k_init": int,
        "eps": _NUM,
        "recompute_period": int,
        "literal_mean": bool,
    },
    "eval": {"folds": int, "k1": int, "k2": int, "offset": int},
    "suite": list,
    "sweep": {"betas": list, "repeats": int},
}
REQUIRED = ("seed",)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    case: str = "ieee14"
    profile: str | None = None
    samples: int = 21600
    out: str = "results"
    network: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=lambda: {"kind": "mfdi"})
    detector: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    suite: tuple = ATTACK_KINDS
    sweep: dict = field(default_factory=dict)
    base_dir: str = field(default=".", compare=False)

    def as_dict(self) -> dict:
        """Plain form used for hashing (paths as written, no base dir)."""
        d = asdict(self)
        d.pop("base_dir")
        d["suite"] = list(d["suite"])
        return d

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def load_case(self) -> GridCase:
        if self.case in bundled_case_names():
            return bundled_case(self.case)
        return load_case(self._resolve(self.case))

    def load_profile(self) -> LoadProfile:
        if self.profile is None:
            return default_profile()
        return load_profile(self._resolve(self.profile))

    def queue(self) -> QueueParams:
        return QueueParams(**{"lam": 10.0, "mu": 40.0, "poll_interval": 4.0, **self.network})

    def scenario_for(self, kind: str | None = None) -> AttackScenario:
        kw = dict(self.scenario)
        kind = kind or kw.pop("kind", "mfdi")
        kw.pop("kind", None)
        if isinstance(kw.get("severity"), list):
            kw["severity"] = tuple(kw["severity"])
        seed = int(np.random.SeedSequence([self.seed, ATTACK_KINDS.index(kind) + 1]).generate_state(1)[0])
        return AttackScenario(kind=kind, seed=seed, **kw)

    @property
    def kind(self) -> str:
        return self.scenario.get("kind", "mfdi")

    def ensemble(self, kind: str | None = None) -> EnsembleConfig:
        kw = dict(self.detector)
        if kw.get("eta") is None:
            kw["eta"] = ETA_BY_ATTACK[kind or self.kind]
        return EnsembleConfig(**kw)

    def plan(self) -> FoldPlan:
        return FoldPlan(**self.eval)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def out_dir(self, override: str | None = None) -> Path:
        return Path(override) if override else self._resolve(self.out)


def _line(node) -> int:
    return node.start_mark.line + 1


def _check_type(value, expected) -> bool:
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(expected, tuple):
        return any(_check_type(value, e) for e in expected)
    if expected in _NUM:
        return isinstance(value, _NUM) and not isinstance(value, bool)
    return isinstance(value, expected)


def _walk(node, schema: dict, prefix: str, src: str) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{src}:{_line(node)}: {prefix or 'config'} must be a mapping")
    seen = set()
    for key_node, val_node in node.value:
        key = key_node.value
        path = f"{prefix}{key}"
        if key in seen:
            raise ConfigError(f"{src}:{_line(key_node)}: duplicate key {path!r}")
        seen.add(key)
        if key not in schema:
            raise ConfigError(f"{src}:{_line(key_node)}: unknown key {path!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            _walk(val_node, expected, path + ".", src)
            continue
        value = yaml.safe_load(yaml.serialize(val_node))
        if not _check_type(value, expected):
            raise ConfigError(f"{src}:{_line(val_node)}: {path!r} has the wrong type ({type(value).__name__})")


def parse_config(text: str, src: str = "<config>", base_dir: str = ".") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{src}:{mark.line + 1}" if mark else src
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if node is None:
        raise ConfigError(f"{src}: empty config")
    _walk(node, SCHEMA, "", src)
    doc = yaml.safe_load(text)
    for key in REQUIRED:
        if key not in doc:
            raise ConfigError(f"{src}: missing required key {key!r}")
    if doc["seed"] < 0 or doc["seed"] >= 2**64:
        raise ConfigError(f"{src}: seed must be an unsigned 64-bit integer")
    if "suite" in doc:
        doc["suite"] = tuple(doc["suite"])
    cfg = ExperimentConfig(base_dir=base_dir, **doc)
    validate(cfg, src)
    return cfg


def validate(cfg: ExperimentConfig, src: str = "<config>") -> None:
    """Build every component once so bad values fail before any work starts."""
    if cfg.samples <= 0:
        raise ConfigError(f"{src}: samples must be positive")
    if cfg.kind not in ATTACK_KINDS:
        raise ConfigError(f"{src}: unknown scenario.kind {cfg.kind!r}; choose from {ATTACK_KINDS}")
    bad = [k for k in cfg.suite if k not in ATTACK_KINDS]
    if bad:
        raise ConfigError(f"{src}: unknown attack kinds in suite: {bad}")
    try:
        cfg.load_case()
        cfg.load_profile()
        cfg.queue()
        cfg.scenario_for()
        for kind in set(cfg.suite) | {cfg.kind}:
            cfg.ensemble(kind)
        cfg.plan()
    except FileNotFoundError as exc:
        raise ConfigError(f"{src}: referenced file not found: {exc.filename}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{src}: {exc}") from exc
    betas = cfg.sweep.get("betas", [])
    if any(not isinstance(b, int) or b < 2 for b in betas):
        raise ConfigError(f"{src}: sweep.betas must be integers >= 2")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    return parse_config(text, str(path), str(path.parent))
