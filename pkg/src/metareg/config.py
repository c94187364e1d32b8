"""Experiment configuration: a JSON document with strict key checking."""

from __future__ import annotations

import hashlib
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .learners import CLASSIFIERS, DEFAULT_GRIDS, REGRESSORS, TrainConfig, split_setting
from .metamodel import DEFAULT_THRESHOLDS, MetaConfig, MetamodelConfig, check_thresholds
from .synth import SynthConfig

_TOP_KEYS = {
    "data_dir", "out_dir", "seed", "base_kinds", "thresholds", "window", "k_folds",
    "val_fraction", "train", "meta", "grids", "kind_overrides", "synth", "generalize",
    "clip_predictions",
}
_GENERALIZE_KEYS = {"data_dir", "k_folds", "val_fraction"}


@dataclass
class GeneralizeConfig:
    data_dir: str | None = None
    k_folds: int = 5
    val_fraction: float = 0.088


@dataclass
class ExperimentConfig:
    data_dir: str | None = None
    out_dir: str | None = None
    seed: int = 0
    base_kinds: list[str] = field(default_factory=lambda: ["LR"])
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    window_length: int = 90
    window_stride: int = 10
    k_folds: int = 8
    val_fraction: float = 0.088
    train: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    grids: dict[str, list[dict]] = field(default_factory=dict)
    kind_overrides: dict[int, str] = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)
    generalize: GeneralizeConfig = field(default_factory=GeneralizeConfig)
    clip_predictions: bool = False
    raw: dict = field(default_factory=dict)

    def metamodel_config(self, seed: int) -> MetamodelConfig:
        return MetamodelConfig(self.thresholds, dict(self.kind_overrides), self.grids,
                               self.train, self.meta, seed)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_grid_setting(kind: str, setting: dict, train: TrainConfig) -> None:
    cls = CLASSIFIERS.get(kind) or REGRESSORS[kind]
    allowed = set(inspect.signature(cls.fit).parameters) - {"cls", "X", "y", "weights", "seed",
                                                            "config", "monitor"}
    if "config" in inspect.signature(cls.fit).parameters:
        allowed |= set(TrainConfig.__dataclass_fields__) - {"seed"}
    unknown = set(setting) - allowed
    _require(not unknown, f"grid for {kind}: unknown settings {sorted(unknown)}")
    try:
        split_setting(kind, setting, train, 0)
    except TypeError as exc:
        raise ConfigError(f"grid for {kind}: {exc}") from None


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate every field up front; unknown keys are rejected."""
    _require(isinstance(doc, dict), "config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(raw=doc)
    for key in ("data_dir", "out_dir"):
        if key in doc:
            _require(isinstance(doc[key], str), f"{key} must be a string")
            setattr(cfg, key, doc[key])
    if "seed" in doc:
        _require(isinstance(doc["seed"], int) and doc["seed"] >= 0, "seed must be a non-negative integer")
        cfg.seed = doc["seed"]
    if "base_kinds" in doc:
        kinds = doc["base_kinds"]
        _require(isinstance(kinds, list) and kinds, "base_kinds must be a non-empty list")
        for k in kinds:
            _require(k in CLASSIFIERS, f"unknown base kind {k!r}; choose from {sorted(CLASSIFIERS)}")
        _require(len(set(kinds)) == len(kinds), "duplicate base kinds")
        cfg.base_kinds = list(kinds)
    if "thresholds" in doc:
        cfg.thresholds = check_thresholds(doc["thresholds"])
    if "window" in doc:
        w = doc["window"]
        _require(isinstance(w, dict) and set(w) <= {"length", "stride"}, "window takes length and stride")
        cfg.window_length = int(w.get("length", cfg.window_length))
        cfg.window_stride = int(w.get("stride", cfg.window_stride))
        _require(cfg.window_length >= 3 and cfg.window_stride >= 1, "window length >= 3 and stride >= 1")
    if "k_folds" in doc:
        _require(isinstance(doc["k_folds"], int) and doc["k_folds"] >= 2, "k_folds must be an integer >= 2")
        cfg.k_folds = doc["k_folds"]
    if "val_fraction" in doc:
        v = doc["val_fraction"]
        _require(isinstance(v, (int, float)) and 0 < v < 1, "val_fraction must be in (0, 1)")
        cfg.val_fraction = float(v)
    try:
        if "train" in doc:
            cfg.train = TrainConfig.from_dict(doc["train"])
        if "meta" in doc:
            cfg.meta = MetaConfig.from_dict(doc["meta"])
        if "synth" in doc:
            cfg.synth = SynthConfig.from_dict(doc["synth"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if "grids" in doc:
        g = doc["grids"]
        _require(isinstance(g, dict), "grids must be an object")
        for kind, grid in g.items():
            _require(kind in DEFAULT_GRIDS, f"grid for unknown kind {kind!r}")
            _require(isinstance(grid, list) and grid and all(isinstance(s, dict) for s in grid),
                     f"grid for {kind} must be a non-empty list of objects")
            for setting in grid:
                _check_grid_setting(kind, setting, cfg.train)
        cfg.grids = {k: list(v) for k, v in g.items()}
    if "kind_overrides" in doc:
        ko = doc["kind_overrides"]
        _require(isinstance(ko, dict), "kind_overrides must be an object")
        out = {}
        for idx, kind in ko.items():
            _require(str(idx).isdigit() and int(idx) < len(cfg.thresholds),
                     f"bad threshold index {idx!r} in kind_overrides")
            _require(kind in CLASSIFIERS, f"unknown base kind {kind!r}")
            out[int(idx)] = kind
        cfg.kind_overrides = out
    if "generalize" in doc:
        g = doc["generalize"]
        _require(isinstance(g, dict), "generalize must be an object")
        unknown = set(g) - _GENERALIZE_KEYS
        _require(not unknown, f"unknown generalize keys: {sorted(unknown)}")
        cfg.generalize = GeneralizeConfig(**g)
        _require(cfg.generalize.k_folds >= 2, "generalize.k_folds must be >= 2")
        _require(0 < cfg.generalize.val_fraction < 1, "generalize.val_fraction must be in (0, 1)")
    if "clip_predictions" in doc:
        _require(isinstance(doc["clip_predictions"], bool), "clip_predictions must be a boolean")
        cfg.clip_predictions = doc["clip_predictions"]
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return parse_config(doc)
