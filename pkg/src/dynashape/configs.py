"""Experiment configuration schema, validation, profiles, and overrides.

Configs are plain JSON. Unknown keys are rejected at every level so typos
fail fast, and dotted overrides (``a.b.c=value``) are applied after file
parsing with the same strictness. Two named profiles ship with the package:
``desk`` (budget 10, 20k real frames) for everything that runs in minutes,
and ``paper`` (budget 100, 100k real frames) preserving the full-scale
structural ratios.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

from .envs import env_names
from .planner import PlanningShape, validate_shape

MODEL_KINDS = ("none", "perfect", "tabular_online", "parametric_pretrained",
               "parametric_online", "corrupted")
AGENT_KINDS = ("q_learner", "sarsa")
SWEEP_AXES = ("shapes", "models", "environments")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: "
                          f"{', '.join(sorted(unknown))}")
    return cls(**data)


@dataclass
class AgentSection:
    kind: str = "q_learner"
    hidden_width: int = 0
    step_size: float = 0.01
    discount: float = 0.99
    batch_size: int = 32
    train_frequency: int = 4
    target_sync_period: int = 500

    def validate(self):
        if self.kind not in AGENT_KINDS:
            raise ConfigError(f"agent.kind must be one of {AGENT_KINDS}, got {self.kind!r}")
        if self.train_frequency < 1:
            raise ConfigError("agent.train_frequency must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("agent.discount must lie in [0, 1)")


@dataclass
class ModelSection:
    kind: str = "none"
    eta: float = 0.0
    params_path: str = ""
    optimizer: str = "sgd"
    online_switch_fraction: float = 0.25
    online_lr_early: float = 1e-2
    online_lr_late: float = 1e-3
    online_batch_size: int = 32
    online_train_every: int = 4

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.kind == "corrupted" and not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"model.eta must be a probability, got {self.eta}")
        if self.kind == "parametric_pretrained" and not self.params_path:
            raise ConfigError("model.kind parametric_pretrained needs model.params_path")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"model.optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass
class EpsilonSection:
    start: float = 1.0
    end: float = 0.01
    anneal_fraction: float = 0.10

    def validate(self):
        if not 0.0 < self.anneal_fraction <= 1.0:
            raise ConfigError("epsilon.anneal_fraction must be in (0, 1]")
        if self.end > self.start:
            raise ConfigError("epsilon schedule must be non-increasing")


@dataclass
class SweepSection:
    axis: str = "shapes"
    values: list = field(default_factory=list)

    def validate(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep.values must be non-empty")


@dataclass
class ExperimentConfig:
    environment: str = "key_corridor"
    agent: AgentSection = field(default_factory=AgentSection)
    model: ModelSection = field(default_factory=ModelSection)
    epsilon: EpsilonSection = field(default_factory=EpsilonSection)
    shape: list | None = None              # [n, k]
    budget: int = 10
    real_frames: int = 20_000
    planning_buffer_capacity: int = 1_000
    replay_capacity: int = 50_000
    eval_episodes: int = 100
    eval_epsilon: float = 0.01
    seeds: list = field(default_factory=lambda: list(range(30)))
    extra_updates: int = 1
    frame_skip: int = 1
    p_sticky: float = 0.25
    eval_snapshot_every: int = 0           # 0 disables learning-curve snapshots
    sweep: SweepSection | None = None

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        nested = {"agent": AgentSection, "model": ModelSection,
                  "epsilon": EpsilonSection, "sweep": SweepSection}
        parsed = {}
        for key, section_cls in nested.items():
            if key in data and data[key] is not None:
                parsed[key] = _from_dict(section_cls, data.pop(key), key)
            elif key in data:
                data.pop(key)
                parsed[key] = None
        cfg = _from_dict(cls, data, "")
        for key, value in parsed.items():
            setattr(cfg, key, value)
        return cfg

    def to_dict(self) -> dict:
        def section(obj):
            return None if obj is None else {f.name: getattr(obj, f.name)
                                             for f in fields(obj)}
        out = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("agent", "model", "epsilon", "sweep")}
        out["agent"] = section(self.agent)
        out["model"] = section(self.model)
        out["epsilon"] = section(self.epsilon)
        out["sweep"] = section(self.sweep)
        return out

    # -- validation -------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        if self.environment not in env_names():
            raise ConfigError(f"unknown environment {self.environment!r}; "
                              f"built-ins: {env_names()}")
        self.agent.validate()
        self.model.validate()
        self.epsilon.validate()
        if self.sweep is not None:
            self.sweep.validate()
        if self.real_frames < 1:
            raise ConfigError("real_frames must be positive")
        if self.budget < 1:
            raise ConfigError("budget must be positive")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.extra_updates < 1:
            raise ConfigError("extra_updates must be >= 1 (1 disables extras)")
        if not 0.0 <= self.eval_epsilon <= 1.0:
            raise ConfigError("eval_epsilon must be a probability")
        if self.model.kind == "none":
            if self.shape is not None:
                raise ConfigError("model-free conditions must not set a planning shape")
        else:
            if self.shape is None:
                raise ConfigError(f"model.kind {self.model.kind!r} requires a planning shape")
            if self.extra_updates != 1:
                raise ConfigError("extra_updates only applies to model-free conditions")
            validate_shape(self.planning_shape(), self.budget)
        return self

    # -- derived values -----------------------------------------------------------

    def planning_shape(self) -> PlanningShape:
        if self.shape is None:
            raise ConfigError("condition has no planning shape")
        if not (isinstance(self.shape, (list, tuple)) and len(self.shape) == 2):
            raise ConfigError(f"shape must be [n, k], got {self.shape!r}")
        return PlanningShape(int(self.shape[0]), int(self.shape[1]))

    def combined_frames(self) -> int:
        """Real + simulated (or phantom) frames, the epsilon/training time base."""
        if self.model.kind != "none":
            return self.real_frames * (1 + self.budget)
        if self.extra_updates > 1:
            return self.real_frames * (1 + self.extra_updates)
        return self.real_frames

    def condition_label(self) -> str:
        if self.model.kind == "none":
            if self.extra_updates > 1:
                return f"extra_updates_x{self.extra_updates}"
            return f"base_{self.real_frames}"
        shape = self.planning_shape().label()
        if self.model.kind == "corrupted":
            return f"corrupted{self.model.eta:g}_{shape}"
        return f"{self.model.kind}_{shape}"

    def content_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_updates(self, **kwargs) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(kwargs)
        return ExperimentConfig.from_dict(data)


# -- overrides ---------------------------------------------------------------

def apply_overrides(data: dict, assignments) -> dict:
    """Apply ``a.b.c=value`` assignments onto a raw config dict.

    Values parse as JSON when possible (numbers, lists, null, booleans) and
    fall back to plain strings. Unknown keys are rejected by the subsequent
    ``ExperimentConfig.from_dict`` pass, but path segments that do not name
    an object are rejected here.
    """
    out = json.loads(json.dumps(data))  # deep copy, JSON types only
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = dotted.split(".")
        node = out
        for key in keys[:-1]:
            nxt = node.setdefault(key, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {dotted!r} descends into non-object {key!r}")
            node = nxt
        node[keys[-1]] = value
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if overrides:
        data = apply_overrides(data, overrides)
    return ExperimentConfig.from_dict(data).validate()


# -- profiles ------------------------------------------------------------------

def desk_profile() -> dict:
    """Minutes-per-condition profile; every structural ratio of the full-scale
    protocol is preserved (combined frames = 11x real, anneal over the first
    10% of combined frames, training every 4 frames)."""
    return {
        "environment": "key_corridor",
        "agent": {"kind": "q_learner", "train_frequency": 4, "batch_size": 32,
                  "step_size": 0.01, "discount": 0.99, "target_sync_period": 500,
                  "hidden_width": 0},
        "model": {"kind": "perfect"},
        "epsilon": {"start": 1.0, "end": 0.01, "anneal_fraction": 0.10},
        "shape": [10, 1],
        "budget": 10,
        "real_frames": 20_000,
        "planning_buffer_capacity": 1_000,
        "replay_capacity": 50_000,
        "eval_episodes": 100,
        "eval_epsilon": 0.01,
        "seeds": list(range(30)),
        "p_sticky": 0.25,
        "frame_skip": 1,
        "sweep": {"axis": "shapes",
                  "values": [[10, 1], [5, 2], [2, 5], [1, 10]]},
    }


def paper_profile() -> dict:
    """Full-scale profile: budget 100, 100k real frames, 10M combined."""
    prof = desk_profile()
    prof.update({
        "budget": 100,
        "real_frames": 100_000,
        "planning_buffer_capacity": 10_000,
        "replay_capacity": 500_000,
        "sweep": {"axis": "shapes",
                  "values": [[100, 1], [25, 4], [10, 10], [2, 50], [1, 100]]},
    })
    return prof


PROFILES = {"desk": desk_profile, "paper": paper_profile}
