"""Run configuration: one YAML document binding every module's knobs.

A config file is a mapping of sections, each bound to a frozen
dataclass below.  Parsing is strict: unknown keys are rejected and
every type or range violation names the offending key by its dotted
path.  An empty document yields all defaults, and
``parse_config(serialize_config(cfg))`` reproduces ``cfg`` exactly, so
a serialized config is a complete record of a run.

Angles cross the config boundary in degrees (fields suffixed ``_deg``)
and are converted to radians when the runtime objects are built.
Disturbance yaw rates stay in radians per second, matching the
simulator's convention and its 0.5 rad/s default shove.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .control import ControlConfig
from .loss import LossConfig
from .perception import OptimizerConfig, load_model
from .scale_align import PairBuffer
from .sim import (
    Disturbance,
    EpisodeConfig,
    ModelPerception,
    OraclePerception,
    VoOnlyOraclePerception,
)
from .perception import OracleParams
from .trail import SCENARIO_NAMES, Trail, load_trail, make_scenario

__all__ = [
    "ConfigError",
    "TrailSection",
    "PerceptionSection",
    "ControlSection",
    "LossSection",
    "TrainSection",
    "EpisodeSection",
    "DisturbanceSpec",
    "DisturbanceSection",
    "AutonomySection",
    "ScaleSection",
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_config",
    "build_trail",
    "build_control",
    "build_perception",
    "build_loss_pair",
    "build_optimizer",
    "build_episode",
    "build_pair_buffer",
]

PERCEPTION_VARIANTS = ("oracle6", "vo_only", "model")


class ConfigError(ValueError):
    """A config document failed schema validation."""


@dataclass(frozen=True)
class TrailSection:
    """Which trail to fly.  ``file`` (a saved trail) wins over ``scenario``."""

    scenario: str = "straight100"
    file: str | None = None

    def validate(self, path: str) -> None:
        if self.file is None and self.scenario not in SCENARIO_NAMES:
            raise ConfigError(
                f"'{path}.scenario' must be one of {', '.join(SCENARIO_NAMES)}, "
                f"got {self.scenario!r}")


@dataclass(frozen=True)
class PerceptionSection:
    """Perception variant for closed-loop runs.

    ``label_noise`` perturbs the oracle's pre-softmax scores;
    ``feature_noise`` perturbs the model variant's input embedding.
    """

    variant: str = "oracle6"
    label_noise: float = 0.0
    model_file: str | None = None
    feature_noise: float = 0.1

    def validate(self, path: str) -> None:
        if self.variant not in PERCEPTION_VARIANTS:
            raise ConfigError(
                f"'{path}.variant' must be one of {', '.join(PERCEPTION_VARIANTS)}, "
                f"got {self.variant!r}")
        if self.label_noise < 0.0:
            raise ConfigError(f"'{path}.label_noise' must be >= 0, got {self.label_noise}")
        if self.feature_noise < 0.0:
            raise ConfigError(f"'{path}.feature_noise' must be >= 0, got {self.feature_noise}")
        if self.variant == "model" and self.model_file is None:
            raise ConfigError(f"'{path}.model_file' is required when variant is 'model'")


@dataclass(frozen=True)
class ControlSection:
    """Waypoint controller parameters.  Turn gains are per unit of
    probability imbalance, in degrees."""

    beta1_deg: float = 10.0
    beta2_deg: float = 10.0
    lookahead: float = 2.0
    altitude: float = 2.0
    speed: float = 2.0
    staleness_limit: float = 0.5
    detection_area_threshold: float = 0.15

    def validate(self, path: str) -> None:
        for name in ("beta1_deg", "beta2_deg"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"'{path}.{name}' must be >= 0, got {getattr(self, name)}")
        for name in ("lookahead", "altitude", "speed", "staleness_limit"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"'{path}.{name}' must be > 0, got {getattr(self, name)}")
        if not 0.0 <= self.detection_area_threshold <= 1.0:
            raise ConfigError(
                f"'{path}.detection_area_threshold' must lie in [0, 1], "
                f"got {self.detection_area_threshold}")


@dataclass(frozen=True)
class LossSection:
    entropy_weight: float = 0.1
    side_swap_weight: float = 0.3
    label_smoothing: float = 0.1

    def validate(self, path: str) -> None:
        for name in ("entropy_weight", "side_swap_weight"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"'{path}.{name}' must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(
                f"'{path}.label_smoothing' must lie in [0, 1), got {self.label_smoothing}")


@dataclass(frozen=True)
class TrainSection:
    samples: int = 3000
    epochs: int = 300
    learning_rate: float = 1.0
    holdout_fraction: float = 0.25
    feature_noise: float = 0.1

    def validate(self, path: str) -> None:
        if self.samples < 10:
            raise ConfigError(f"'{path}.samples' must be >= 10, got {self.samples}")
        if self.epochs < 1:
            raise ConfigError(f"'{path}.epochs' must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"'{path}.learning_rate' must be > 0, got {self.learning_rate}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(
                f"'{path}.holdout_fraction' must lie in (0, 1), got {self.holdout_fraction}")
        if self.feature_noise < 0.0:
            raise ConfigError(f"'{path}.feature_noise' must be >= 0, got {self.feature_noise}")


@dataclass(frozen=True)
class EpisodeSection:
    dt: float = 1.0 / 60.0
    control_period: float = 1.0 / 20.0
    perception_period: float = 1.0 / 30.0
    max_time: float = 120.0
    start_offset: float = 0.0
    start_heading_error_deg: float = 0.0
    intervention_penalty: float = 2.0

    def validate(self, path: str) -> None:
        for name in ("dt", "control_period", "perception_period", "max_time"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"'{path}.{name}' must be > 0, got {getattr(self, name)}")
        for name in ("control_period", "perception_period"):
            ratio = getattr(self, name) / self.dt
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(
                    f"'{path}.{name}' must be a positive multiple of '{path}.dt'")
        if self.intervention_penalty < 0.0:
            raise ConfigError(
                f"'{path}.intervention_penalty' must be >= 0, got {self.intervention_penalty}")


@dataclass(frozen=True)
class DisturbanceSpec:
    """One shove: forced yaw rotation starting at ``start`` seconds."""

    start: float
    yaw_rate: float
    duration: float = 2.0

    def validate(self, path: str) -> None:
        if self.start < 0.0:
            raise ConfigError(f"'{path}.start' must be >= 0, got {self.start}")
        if self.duration <= 0.0:
            raise ConfigError(f"'{path}.duration' must be > 0, got {self.duration}")


def _default_schedule() -> tuple:
    # Three 2 s shoves of alternating direction at the simulator's
    # default 0.5 rad/s magnitude.
    return (
        DisturbanceSpec(start=8.0, yaw_rate=0.5),
        DisturbanceSpec(start=20.0, yaw_rate=-0.5),
        DisturbanceSpec(start=32.0, yaw_rate=0.5),
    )


@dataclass(frozen=True)
class DisturbanceSection:
    """Schedule for the disturbance-recovery experiment."""

    schedule: tuple = field(default_factory=_default_schedule)
    max_time: float = 60.0
    degraded_gain_factor: float = 0.5

    def validate(self, path: str) -> None:
        if self.max_time <= 0.0:
            raise ConfigError(f"'{path}.max_time' must be > 0, got {self.max_time}")
        if not 0.0 < self.degraded_gain_factor <= 1.0:
            raise ConfigError(
                f"'{path}.degraded_gain_factor' must lie in (0, 1], "
                f"got {self.degraded_gain_factor}")
        for i, spec in enumerate(self.schedule):
            spec.validate(f"{path}.schedule[{i}]")


@dataclass(frozen=True)
class AutonomySection:
    """Protocol for the autonomy comparison.

    The run starts half a meter off-center by default: a centered start
    lets even heading-only perception thread the bends, while an
    off-center one exposes its inability to see a parallel offset.
    """

    start_offset: float = 0.5
    max_time: float = 240.0

    def validate(self, path: str) -> None:
        if self.max_time <= 0.0:
            raise ConfigError(f"'{path}.max_time' must be > 0, got {self.max_time}")


@dataclass(frozen=True)
class ScaleSection:
    """Synthetic metric-scale settling demo."""

    noise: float = 0.02
    trials: int = 5
    pairs: int = 120
    spacing: float = 0.35
    parallax_threshold: float = 0.3
    capacity: int = 50

    def validate(self, path: str) -> None:
        if self.noise < 0.0:
            raise ConfigError(f"'{path}.noise' must be >= 0, got {self.noise}")
        if self.trials < 1:
            raise ConfigError(f"'{path}.trials' must be >= 1, got {self.trials}")
        if self.pairs < 3:
            raise ConfigError(f"'{path}.pairs' must be >= 3, got {self.pairs}")
        if self.spacing <= 0.0:
            raise ConfigError(f"'{path}.spacing' must be > 0, got {self.spacing}")
        if self.parallax_threshold <= 0.0:
            raise ConfigError(
                f"'{path}.parallax_threshold' must be > 0, got {self.parallax_threshold}")
        if self.capacity < 3:
            raise ConfigError(f"'{path}.capacity' must be >= 3, got {self.capacity}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a subcommand needs, with documented defaults throughout."""

    seed: int = 0
    out: str = "runs"
    trail: TrailSection = field(default_factory=TrailSection)
    perception: PerceptionSection = field(default_factory=PerceptionSection)
    control: ControlSection = field(default_factory=ControlSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    episode: EpisodeSection = field(default_factory=EpisodeSection)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    autonomy: AutonomySection = field(default_factory=AutonomySection)
    scale: ScaleSection = field(default_factory=ScaleSection)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"'seed' must be >= 0, got {self.seed}")
        if not self.out:
            raise ConfigError("'out' must be a non-empty path")
        for name in ("trail", "perception", "control", "loss", "train",
                     "episode", "disturbance", "autonomy", "scale"):
            getattr(self, name).validate(name)


# ---------------------------------------------------------------------------
# Parsing

def _bind(cls, mapping: dict, path: str):
    """Fill one section dataclass from a YAML mapping, strictly."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{path}' must be a mapping, got {type(mapping).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in names:
            raise ConfigError(f"unknown key '{path}.{key}'")
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}")
    missing = [f.name for f in dataclasses.fields(cls)
               if f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING
               and f.name not in kwargs]
    if missing:
        raise ConfigError(f"'{path}' is missing required key(s): {', '.join(missing)}")
    return cls(**kwargs)


def _coerce(hint, value, path: str):
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number, got {value!r}")
        v = float(value)
        if not math.isfinite(v):
            raise ConfigError(f"'{path}' must be finite, got {value!r}")
        return v
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string, got {value!r}")
        return value
    if hint == typing.Optional[str]:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string or null, got {value!r}")
        return value
    if hint is tuple:  # only the disturbance schedule uses a sequence
        if not isinstance(value, list):
            raise ConfigError(f"'{path}' must be a list, got {value!r}")
        return tuple(_bind(DisturbanceSpec, item, f"{path}[{i}]")
                     for i, item in enumerate(value))
    raise AssertionError(f"unhandled schema type for '{path}': {hint!r}")


_SECTIONS = {
    "trail": TrailSection,
    "perception": PerceptionSection,
    "control": ControlSection,
    "loss": LossSection,
    "train": TrainSection,
    "episode": EpisodeSection,
    "disturbance": DisturbanceSection,
    "autonomy": AutonomySection,
    "scale": ScaleSection,
}


def parse_config(source: str | Path) -> RunConfig:
    """Parse a YAML document (inline text, or a file when given a Path).

    An empty document yields all defaults.  Raises ConfigError naming
    the offending dotted key on any unknown key, type mismatch, or
    range violation.
    """
    text = Path(source).read_text() if isinstance(source, Path) else source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"top level must be a mapping, got {type(doc).__name__}")

    kwargs = {}
    for key, value in doc.items():
        if key == "seed":
            kwargs["seed"] = _coerce(int, value, "seed")
        elif key == "out":
            kwargs["out"] = _coerce(str, value, "out")
        elif key in _SECTIONS:
            kwargs[key] = _bind(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown key '{key}'")
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path))


def _as_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _as_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_as_plain(v) for v in obj]
    return obj


def serialize_config(cfg: RunConfig) -> str:
    """YAML text that parses back to an equal RunConfig."""
    return yaml.safe_dump(_as_plain(cfg), sort_keys=False, default_flow_style=False)


# ---------------------------------------------------------------------------
# Builders: config sections to runtime objects

def build_trail(cfg: RunConfig) -> Trail:
    if cfg.trail.file is not None:
        return load_trail(cfg.trail.file)
    return make_scenario(cfg.trail.scenario)


def build_control(cfg: RunConfig) -> ControlConfig:
    c = cfg.control
    return ControlConfig(
        turn_gain_vo=math.radians(c.beta1_deg),
        turn_gain_lo=math.radians(c.beta2_deg),
        lookahead=c.lookahead,
        altitude=c.altitude,
        speed=c.speed,
        staleness_limit=c.staleness_limit,
        detection_area_threshold=c.detection_area_threshold,
    )


def build_perception(cfg: RunConfig):
    p = cfg.perception
    if p.variant == "model":
        return ModelPerception(load_model(p.model_file), noise_std=p.feature_noise)
    params = OracleParams(label_noise=p.label_noise)
    if p.variant == "vo_only":
        return VoOnlyOraclePerception(params)
    return OraclePerception(params)


def build_loss_pair(cfg: RunConfig) -> tuple[LossConfig, LossConfig]:
    """(orientation-head, offset-head) loss configs; swap only for offsets."""
    l = cfg.loss
    kw = dict(entropy_weight=l.entropy_weight,
              side_swap_weight=l.side_swap_weight,
              label_smoothing=l.label_smoothing)
    return LossConfig.for_orientation_head(**kw), LossConfig.for_offset_head(**kw)


def build_optimizer(cfg: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(learning_rate=cfg.train.learning_rate,
                           epochs=cfg.train.epochs)


def build_episode(cfg: RunConfig, trail: Trail, perception, *,
                  start_offset: float | None = None,
                  max_time: float | None = None,
                  disturbances: tuple = (),
                  interventions_enabled: bool = True) -> EpisodeConfig:
    e = cfg.episode
    return EpisodeConfig(
        trail=trail,
        perception=perception,
        control=build_control(cfg),
        disturbances=tuple(Disturbance(d.start, d.yaw_rate, d.duration)
                           for d in disturbances),
        dt=e.dt,
        control_period=e.control_period,
        perception_period=e.perception_period,
        max_time=e.max_time if max_time is None else max_time,
        start_offset=e.start_offset if start_offset is None else start_offset,
        start_heading_error=math.radians(e.start_heading_error_deg),
        intervention_penalty=e.intervention_penalty,
        interventions_enabled=interventions_enabled,
    )


def build_pair_buffer(cfg: RunConfig) -> PairBuffer:
    return PairBuffer(capacity=cfg.scale.capacity,
                      parallax_threshold=cfg.scale.parallax_threshold)
