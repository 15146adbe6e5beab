"""Run configuration: every sub-config in one JSON document, with presets and overrides."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields

from .encode import GridSpec
from .errors import ConfigInvalid, IoError
from .learn import LossConfig, TrainConfig
from .nnet import NetworkConfig
from .scenesim import SensorNoiseConfig, SimConfig
from .teacher import TeacherConfig

SPLITS = ("train", "val", "test")


def _build(cls, d, section):
    if not isinstance(d, dict):
        raise ConfigInvalid(section, "expected an object")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in d.items():
        if k not in names:
            raise ConfigInvalid(f"{section}.{k}", "unknown field")
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(section, str(exc)) from None


def _plain(obj):
    return {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v) for f in fields(obj)}


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 5.0
    against: str = "truth"

    def validate(self):
        if not (math.isfinite(self.threshold) and self.threshold >= 0):
            raise ConfigInvalid("eval.threshold", "must be finite and >= 0")
        if self.against not in ("truth", "labels"):
            raise ConfigInvalid("eval.against", "must be 'truth' or 'labels'")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    splits: dict = field(default_factory=lambda: {"train": 2000, "val": 100, "test": 300})
    sim: SimConfig = field(default_factory=SimConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigInvalid("seed", "must be a non-negative integer")
        if set(self.splits) != set(SPLITS) or any(int(v) != v or v < 0 for v in self.splits.values()):
            raise ConfigInvalid("splits", "need non-negative integer counts for train, val and test")
        self.sim.validate()
        self.teacher.validate()
        self.network.validate()
        self.grid.validate(self.network.stride)
        self.loss.validate()
        self.train.validate()
        self.eval.validate()
        if (self.grid.img_w, self.grid.img_h) != (self.sim.img_w, self.sim.img_h):
            raise ConfigInvalid("grid.img_w", "grid image size must match sim image size")
        return self

    def to_dict(self):
        return {
            "seed": self.seed,
            "splits": dict(self.splits),
            "sim": self.sim.to_dict(),
            "teacher": self.teacher.to_dict(),
            "grid": _plain(self.grid),
            "network": _plain(self.network),
            "loss": _plain(self.loss),
            "train": _plain(self.train),
            "eval": _plain(self.eval),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigInvalid(k, "unknown section")
        try:
            sim = SimConfig.from_dict(d.get("sim", {}))
            teacher = TeacherConfig.from_dict(d.get("teacher", {}))
        except TypeError as exc:
            raise ConfigInvalid("sim", str(exc)) from None
        return cls(
            seed=d.get("seed", 0),
            splits={**cls().splits, **d.get("splits", {})},
            sim=sim,
            teacher=teacher,
            grid=_build(GridSpec, d.get("grid", {}), "grid"),
            network=_build(NetworkConfig, d.get("network", {}), "network"),
            loss=_build(LossConfig, d.get("loss", {}), "loss"),
            train=_build(TrainConfig, d.get("train", {}), "train"),
            eval=_build(EvalConfig, d.get("eval", {}), "eval"),
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


PRESETS = {
    "desk": {},
    "paper": {
        "network": {"out_channels": 128},
        "train": {"batch_frames": 48, "total_iters": 10000, "lr": 1e-4},
    },
    "overfit": {
        "splits": {"train": 8, "val": 0, "test": 0},
        "seed": 123,
    },
    "noiseless": {
        "sim": {"min_separation": 3.0, "noise": _plain(SensorNoiseConfig.noiseless())},
    },
}


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text):
    """``section.field=value`` -> nested dict; the value is read as JSON when it parses."""
    if "=" not in text:
        raise ConfigInvalid(text, "override must look like section.field=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigInvalid(key, "empty key component")
    out = value
    for p in reversed(parts):
        out = {p: out}
    return out


def load_config(path=None, preset="desk", overrides=()):
    """Defaults, then the preset, then the file, then ``--set`` style overrides."""
    if preset not in PRESETS:
        raise ConfigInvalid("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    doc = deep_merge(RunConfig().to_dict(), PRESETS[preset])
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise IoError(path, exc.strerror or str(exc)) from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(str(path), f"not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(user, dict):
            raise ConfigInvalid(str(path), "top level must be an object")
        doc = deep_merge(doc, user)
    for ov in overrides:
        doc = deep_merge(doc, ov if isinstance(ov, dict) else parse_override(ov))
    return RunConfig.from_dict(doc).validate()
