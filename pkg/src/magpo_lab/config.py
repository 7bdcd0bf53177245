"""Experiment configuration files.

A config is a YAML mapping.  ``include:`` names one file or a list of files
whose contents are merged underneath the including document (later files
win, the including document wins over all of them).  Relative include paths
are tried next to the including file first, then among the configs shipped
with the package.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .envs import ConfigError, make_env
from .trainer import ALGORITHMS, TrainConfig

TOP_LEVEL_KEYS = {"include", "algorithm", "env", "env_kwargs", "seeds", "budget", "checkpoints",
                  "out", "verify", "train", "sweep", "evaluate_guider"}


def packaged_config(name):
    """Path of a config file shipped inside the package."""
    return Path(str(resources.files("magpo_lab") / "configs" / name))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _resolve_include(name, here: Path):
    p = Path(name)
    for cand in ([p] if p.is_absolute() else [here / p, packaged_config(p)]):
        if cand.is_file():
            return cand.resolve()
    raise ConfigError(f"included config {name!r} not found next to {here} or among packaged configs")


def load_document(path, _stack=()):
    """Read a YAML config and expand its includes."""
    path = Path(path).resolve()
    if path in _stack:
        chain = " -> ".join(str(p) for p in _stack + (path,))
        raise ConfigError(f"include cycle: {chain}")
    try:
        text = path.read_text()
        doc = (json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = doc.pop("include", None) or []
    if isinstance(includes, str):
        includes = [includes]
    merged = {}
    for inc in includes:
        merged = _merge(merged, load_document(_resolve_include(inc, path.parent), _stack + (path,)))
    return _merge(merged, doc)


@dataclass
class ExperimentConfig:
    algorithm: str
    env: str
    train: TrainConfig
    seeds: list
    budget: int
    checkpoints: int = 122
    out: str = "runs"
    verify: bool = False
    env_kwargs: dict = field(default_factory=dict)
    evaluate_guider: bool = False
    sweep: dict | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: {self.algorithm!r} is not one of {', '.join(ALGORITHMS)}")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: need a nonempty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds: every seed must be a nonnegative integer")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds: duplicates in {self.seeds}")
        if not isinstance(self.budget, int) or self.budget < 0:
            raise ConfigError("budget: need a nonnegative integer step count")
        if not isinstance(self.checkpoints, int) or self.checkpoints < 1:
            raise ConfigError("checkpoints: need a positive integer")
        try:
            make_env(self.env, num_envs=1, **self.env_kwargs)
        except ConfigError as exc:
            raise ConfigError(f"env: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"env_kwargs: {exc}") from exc
        if self.sweep is not None:
            if set(self.sweep) != {"key", "values"} or not isinstance(self.sweep["values"], list):
                raise ConfigError("sweep: needs exactly 'key' and a list of 'values'")
            names = {f.name for f in dataclasses.fields(TrainConfig)}
            if self.sweep["key"] not in names:
                raise ConfigError(f"sweep.key: unknown training key {self.sweep['key']!r}")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        for key in ("algorithm", "env", "seeds", "budget"):
            if key not in d:
                raise ConfigError(f"missing config key: {key}")
        d = dict(d)
        d.pop("include", None)
        if "seed" in (d.get("train") or {}):
            raise ConfigError("train.seed: give run seeds through the top-level 'seeds' list")
        d["train"] = TrainConfig.from_dict(d.get("train") or {})
        d["env_kwargs"] = dict(d.get("env_kwargs") or {})
        return cls(**d)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["train"] = self.train.to_dict()
        del d["train"]["seed"]
        d["seeds"] = list(self.seeds)
        if d["sweep"] is None:
            del d["sweep"]
        return d

    def with_overrides(self, seed=None, out=None, budget=None, checkpoints=None):
        d = self.to_dict()
        if seed is not None:
            d["seeds"] = [int(seed)]
        if out is not None:
            d["out"] = str(out)
        if budget is not None:
            d["budget"] = int(budget)
        if checkpoints is not None:
            d["checkpoints"] = int(checkpoints)
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    """Load a config file, or the resolved config stored in a run manifest."""
    doc = load_document(path)
    if "manifest_version" in doc:
        doc = doc["config"]
    return ExperimentConfig.from_dict(doc)
