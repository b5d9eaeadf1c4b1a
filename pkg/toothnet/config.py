"""
Configuration Module

One RunConfig per command run, assembled from defaults, an optional YAML
file and command-line overrides. Sections:
- synth: SynthConfig
- pipeline: PipelineConfig
- train: TrainConfig (with nested optimizer and weights)
- eval: EvalConfig

Unknown sections or keys are rejected. The resolved configuration is
written next to the outputs as config.yaml; loading that file reproduces
the run.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from toothnet.constants import CONFIG_SNAPSHOT, IDENTIFICATION_IOU
from toothnet.errors import ConfigError, DatasetIOError
from toothnet.networks import PipelineConfig
from toothnet.synth import SynthConfig
from toothnet.trainer import TrainConfig


@dataclass
class EvalConfig:
    iou_threshold: float = IDENTIFICATION_IOU
    overlays: bool = True
    max_overlays: int = 20
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must be in [0, 1], got {self.iou_threshold}")
        if self.max_overlays < 0 or self.workers < 1:
            raise ConfigError("max_overlays must be >= 0 and workers >= 1")


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return _build(cls, values or {}, "config")


def _coerce(value, default, where):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML reads "1e-3" as a string
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")


def _build(cls, values, path):
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a mapping, got {values!r}")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {path}")
    kwargs = {}
    for name, value in values.items():
        current = getattr(defaults, name)
        where = f"{path}.{name}"
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, where)
        else:
            kwargs[name] = _coerce(value, current, where)
    return cls(**kwargs)


def load_config(path=None):
    """Defaults, updated from a YAML file when one is given."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        values = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"invalid YAML in {path}{where}") from e
    return RunConfig.from_dict(values)


def apply_overrides(config, overrides):
    """
    Return a new, re-validated config with dotted-key overrides applied,
    e.g. {"train.use_dr": False}. None values are ignored.
    """
    values = config.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = key.split(".")
        target = values
        for part in parents:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config section '{key}'")
            target = target[part]
        if leaf not in target:
            raise ConfigError(f"unknown config key '{key}'")
        target[leaf] = value
    return RunConfig.from_dict(values)


def write_snapshot(config, out_dir):
    path = Path(out_dir) / CONFIG_SNAPSHOT
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(path, e) from e
    return path
