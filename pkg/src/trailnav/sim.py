"""Deterministic closed-loop simulation of trail following.

The vehicle is a planar kinematic unicycle flying at constant speed
and altitude: position advances along the current yaw each physics
tick, and yaw slews toward the commanded heading at a bounded rate.
Physics runs at a fixed fine step; the controller and perception run
at coarser periods that must be integer multiples of it.  Perception
estimates are delivered one perception period after capture, stamped
with their capture time.

Disturbances emulate someone shoving the vehicle: while active, the
commanded steering is ignored and yaw is forced at a fixed rate while
forward motion continues.  If the vehicle leaves the trail corridor an
intervention teleports it back to the nearest centerline point and
charges a fixed non-autonomous time penalty; autonomy is the
percentage of episode time not consumed by those penalties.

Everything is driven by one seeded generator, so a repeated run with
the same config and seed reproduces the log bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import Command, CommandKind, CommandSource, ControlConfig, arbitrate, turn_angle
from .geo import Frame, Pose3, ned_to_enu, wrap_angle
from .perception import (
    OracleParams,
    TrailEstimate,
    TwoHeadModel,
    embed_state,
    model_predict,
    oracle_predict,
    vo_only,
)
from .trail import RelativeState, Trail, is_off_trail, relative_state

__all__ = [
    "YAW_RATE_LIMIT",
    "RECOVERY_OFFSET",
    "VehicleState",
    "Disturbance",
    "OraclePerception",
    "VoOnlyOraclePerception",
    "ModelPerception",
    "EpisodeConfig",
    "TickRecord",
    "EpisodeLog",
    "step",
    "intervention_reset",
    "run_episode",
    "disturbance_experiment",
    "export_episode_csv",
    "episode_summary",
]

# Yaw slew limit of the vehicle, rad/s.
YAW_RATE_LIMIT = 1.5

# |lateral offset| below which the vehicle counts as recovered after a
# disturbance, meters.
RECOVERY_OFFSET = 0.25


@dataclass(frozen=True)
class VehicleState:
    pose: Pose3          # ENU
    speed: float         # m/s, constant in flight

    def __post_init__(self) -> None:
        if self.pose.frame is not Frame.ENU:
            raise ValueError("vehicle pose must be ENU")
        if self.speed < 0.0:
            raise ValueError("speed must be >= 0")


@dataclass(frozen=True)
class Disturbance:
    """Forced yaw rotation over [start, start + duration)."""

    start: float
    yaw_rate: float
    duration: float = 2.0

    def __post_init__(self) -> None:
        if self.start < 0.0 or self.duration <= 0.0:
            raise ValueError("start must be >= 0 and duration > 0")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class OraclePerception:
    """Full six-class perception: both heads scored from the true state."""

    params: OracleParams = field(default_factory=OracleParams)

    def estimate(self, rel: RelativeState, t: float, rng) -> TrailEstimate:
        return oracle_predict(rel, self.params, rng, timestamp=t)


@dataclass(frozen=True)
class VoOnlyOraclePerception:
    """Three-class perception: the offset head is flattened to uniform."""

    params: OracleParams = field(default_factory=OracleParams)

    def estimate(self, rel: RelativeState, t: float, rng) -> TrailEstimate:
        return vo_only(oracle_predict(rel, self.params, rng, timestamp=t))


@dataclass(frozen=True, eq=False)
class ModelPerception:
    """Trained two-head model fed the feature embedding of the true state."""

    model: TwoHeadModel
    noise_std: float = 0.1

    def estimate(self, rel: RelativeState, t: float, rng) -> TrailEstimate:
        features = embed_state(rel.lateral_offset, rel.heading_error,
                               self.noise_std, rng if self.noise_std > 0.0 else None)
        return model_predict(self.model, features, timestamp=t)


def _period_ticks(period: float, dt: float, name: str) -> int:
    ratio = period / dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(f"{name} ({period}) must be a positive multiple of dt ({dt})")
    return int(round(ratio))


@dataclass(frozen=True, eq=False)
class EpisodeConfig:
    trail: Trail
    perception: object
    control: ControlConfig = field(default_factory=ControlConfig)
    disturbances: tuple = ()
    dt: float = 1.0 / 60.0
    control_period: float = 1.0 / 20.0
    perception_period: float = 1.0 / 30.0
    max_time: float = 120.0
    start_offset: float = 0.0
    start_heading_error: float = 0.0
    interventions_enabled: bool = True
    intervention_penalty: float = 2.0

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.max_time <= 0.0:
            raise ValueError("dt and max_time must be > 0")
        _period_ticks(self.control_period, self.dt, "control_period")
        _period_ticks(self.perception_period, self.dt, "perception_period")
        if self.intervention_penalty < 0.0:
            raise ValueError("intervention_penalty must be >= 0")
        object.__setattr__(self, "disturbances", tuple(self.disturbances))


@dataclass(frozen=True, eq=False)
class TickRecord:
    """State of the loop at one control tick, before that tick's step."""

    t: float
    pose: Pose3
    rel: RelativeState
    estimate: TrailEstimate | None
    turn: float | None
    command: Command
    intervened: bool     # an intervention fired since the previous tick
    disturbed: bool


@dataclass(eq=False)
class EpisodeLog:
    records: list
    duration: float
    completed: bool
    interventions: int
    intervention_times: list
    autonomy_percent: float
    recovery_times: list   # per disturbance: seconds after its end, or None


def step(state: VehicleState, cmd: Command, disturbance: Disturbance | None,
         dt: float, yaw_rate_limit: float = YAW_RATE_LIMIT) -> VehicleState:
    """Advance the vehicle one physics tick.

    Translation always uses the yaw at the start of the tick.  An
    active disturbance overrides steering entirely; otherwise a
    waypoint command slews yaw toward the bearing of the waypoint at
    most ``yaw_rate_limit`` radians per second, and hover (or teleop,
    which this simulator does not model) leaves the state untouched.
    """
    pose = state.pose
    if disturbance is None and cmd.kind is not CommandKind.WAYPOINT:
        return state

    advance = state.speed * dt * np.array([math.cos(pose.yaw), math.sin(pose.yaw), 0.0])
    new_pos = pose.position + advance

    if disturbance is not None:
        new_yaw = wrap_angle(pose.yaw + disturbance.yaw_rate * dt)
    else:
        wp_enu = ned_to_enu(cmd.position_ned)
        dx = wp_enu[0] - pose.position[0]
        dy = wp_enu[1] - pose.position[1]
        desired = math.atan2(dy, dx) if math.hypot(dx, dy) > 1e-9 else pose.yaw
        max_turn = yaw_rate_limit * dt
        turn = min(max(wrap_angle(desired - pose.yaw), -max_turn), max_turn)
        new_yaw = wrap_angle(pose.yaw + turn)

    return VehicleState(Pose3(new_pos, new_yaw, Frame.ENU), state.speed)


def intervention_reset(state: VehicleState, trail: Trail) -> VehicleState:
    """Teleport to the nearest centerline point, aligned with the trail."""
    from .trail import project_to_centerline

    proj = project_to_centerline(trail, state.pose.position)
    point = trail.point_at(proj.arc_length)
    pos = np.array([point[0], point[1], state.pose.position[2]])
    return VehicleState(Pose3(pos, trail.heading_at(proj.arc_length), Frame.ENU), state.speed)


def _start_state(cfg: EpisodeConfig) -> VehicleState:
    heading = cfg.trail.heading_at(0.0)
    origin = cfg.trail.point_at(0.0)
    left = np.array([-math.sin(heading), math.cos(heading)])
    xy = origin + cfg.start_offset * left
    pos = np.array([xy[0], xy[1], cfg.control.altitude])
    yaw = wrap_angle(heading + cfg.start_heading_error)
    return VehicleState(Pose3(pos, yaw, Frame.ENU), cfg.control.speed)


def run_episode(cfg: EpisodeConfig, seed: int) -> EpisodeLog:
    """Run the closed loop until the trail end or the time limit."""
    rng = np.random.default_rng(seed)
    state = _start_state(cfg)
    p_every = _period_ticks(cfg.perception_period, cfg.dt, "perception_period")
    c_every = _period_ticks(cfg.control_period, cfg.dt, "control_period")

    records: list[TickRecord] = []
    pending: TrailEstimate | None = None
    latest: TrailEstimate | None = None
    cmd = Command.hover(CommandSource.DNN)
    interventions = 0
    intervention_times: list[float] = []
    intervened_since_tick = False
    completed = False
    t_end = cfg.max_time

    i = 0
    while True:
        t = i * cfg.dt
        if i % p_every == 0:
            latest = pending  # one-period delivery latency
            pending = cfg.perception.estimate(
                relative_state(cfg.trail, state.pose), t, rng
            )
        if i % c_every == 0:
            rel = relative_state(cfg.trail, state.pose)
            cmd = arbitrate(None, (), latest, t, state.pose, cfg.control)
            turn = (turn_angle(latest, cfg.control)
                    if cmd.kind is CommandKind.WAYPOINT else None)
            records.append(TickRecord(
                t, state.pose, rel, latest, turn, cmd,
                intervened_since_tick, _active_disturbance(cfg, t) is not None,
            ))
            intervened_since_tick = False

        state = step(state, cmd, _active_disturbance(cfg, t), cfg.dt)
        t_next = (i + 1) * cfg.dt

        rel_after = relative_state(cfg.trail, state.pose)
        if rel_after.arc_length >= cfg.trail.length - 1e-9:
            completed = True
            t_end = t_next
            break
        if cfg.interventions_enabled and is_off_trail(cfg.trail, state.pose.position):
            state = intervention_reset(state, cfg.trail)
            interventions += 1
            intervention_times.append(t_next)
            intervened_since_tick = True
        if t_next >= cfg.max_time - 1e-12:
            t_end = cfg.max_time
            break
        i += 1

    penalty = interventions * cfg.intervention_penalty
    autonomy = 100.0 * max(0.0, 1.0 - penalty / t_end) if t_end > 0.0 else 0.0
    return EpisodeLog(
        records=records,
        duration=t_end,
        completed=completed,
        interventions=interventions,
        intervention_times=intervention_times,
        autonomy_percent=autonomy,
        recovery_times=_recovery_times(cfg.disturbances, records),
    )


def _active_disturbance(cfg: EpisodeConfig, t: float) -> Disturbance | None:
    for d in cfg.disturbances:
        if d.active(t):
            return d
    return None


def _recovery_times(disturbances, records) -> list:
    """Per disturbance: first time after its end with |offset| back in band."""
    out = []
    for d in disturbances:
        recovered = None
        for rec in records:
            if rec.t >= d.end and abs(rec.rel.lateral_offset) < RECOVERY_OFFSET:
                recovered = rec.t - d.end
                break
        out.append(recovered)
    return out


def disturbance_experiment(trail: Trail, variants: dict, disturbances,
                           control: ControlConfig | None = None,
                           seed: int = 0, max_time: float = 120.0) -> dict:
    """Run the same disturbance schedule against several perception variants.

    Interventions are disabled so each variant's own self-correction is
    what the logs show; a reset mid-recovery would erase exactly the
    differences the comparison is after.  Returns {name: EpisodeLog}.
    """
    results = {}
    for name, perception in variants.items():
        cfg = EpisodeConfig(
            trail=trail,
            perception=perception,
            control=control or ControlConfig(),
            disturbances=tuple(disturbances),
            max_time=max_time,
            interventions_enabled=False,
        )
        results[name] = run_episode(cfg, seed)
    return results


# ---------------------------------------------------------------------------
# Export

_CSV_COLUMNS = (
    "t,x_enu,y_enu,z_enu,yaw_enu,arc_length,lateral_offset,heading_error,"
    "vo_left,vo_center,vo_right,lo_left,lo_center,lo_right,"
    "turn,cmd_kind,cmd_source,wp_x_ned,wp_y_ned,wp_z_ned,wp_yaw_ned,"
    "intervened,disturbed"
)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_episode_csv(log: EpisodeLog, path) -> None:
    """One row per control tick; estimate and waypoint cells blank when absent."""
    lines = [_CSV_COLUMNS]
    for r in log.records:
        est = r.estimate
        est_cells = (
            [_fmt(v) for v in (*est.vo.as_array(), *est.lo.as_array())]
            if est is not None else [""] * 6
        )
        wp_cells = (
            [_fmt(v) for v in (*r.command.position_ned, r.command.yaw_ned)]
            if r.command.kind is CommandKind.WAYPOINT else [""] * 4
        )
        cells = [
            _fmt(r.t), *(_fmt(v) for v in r.pose.position), _fmt(r.pose.yaw),
            _fmt(r.rel.arc_length), _fmt(r.rel.lateral_offset), _fmt(r.rel.heading_error),
            *est_cells,
            _fmt(r.turn) if r.turn is not None else "",
            r.command.kind.value, r.command.source.value,
            *wp_cells,
            str(int(r.intervened)), str(int(r.disturbed)),
        ]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def episode_summary(log: EpisodeLog) -> dict:
    """Plain-data summary suitable for JSON."""
    offsets = [abs(r.rel.lateral_offset) for r in log.records]
    return {
        "schema_version": 1,
        "duration_s": log.duration,
        "completed": log.completed,
        "interventions": log.interventions,
        "intervention_times": list(log.intervention_times),
        "autonomy_percent": log.autonomy_percent,
        "max_abs_lateral_offset": max(offsets) if offsets else None,
        "final_abs_lateral_offset": offsets[-1] if offsets else None,
        "recovery_times": list(log.recovery_times),
        "control_ticks": len(log.records),
    }
