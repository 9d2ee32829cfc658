"""Waypoint steering from soft trail labels, plus command arbitration.

The steering law turns by an angle proportional to how much
probability mass sits on the right-hand categories minus the left:

    turn = gain_vo * (vo.right - vo.left) + gain_lo * (lo.right - lo.left)

Positive turn is counterclockwise (toward the left), so a prediction
that the vehicle is aimed or displaced left produces a clockwise
correction back toward the trail.  The command consumer speaks NED, so
waypoints are converted at the boundary; everything upstream is ENU.

Command precedence, highest first: operator teleop, a close-obstacle
detection override (stop and hover), then the label-driven waypoint.
A missing or stale estimate also degrades to hover.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geo import Frame, Pose3, enu_to_ned, enu_yaw_to_ned, wrap_angle
from .perception import TrailEstimate

__all__ = [
    "ControlConfig",
    "Detection",
    "CommandKind",
    "CommandSource",
    "Command",
    "turn_angle",
    "make_waypoint",
    "detection_override",
    "arbitrate",
    "command_log_header",
    "command_log_row",
]


@dataclass(frozen=True)
class ControlConfig:
    """Gains and limits for the steering and arbitration stage.

    Gains and the staleness limit must be non-negative; lookahead and
    speed strictly positive.  ``detection_classes`` restricts which
    detection classes may trigger the hover override (None = any).
    """

    turn_gain_vo: float = math.radians(10.0)
    turn_gain_lo: float = math.radians(10.0)
    lookahead: float = 2.0
    altitude: float = 2.0
    speed: float = 2.0
    staleness_limit: float = 0.5
    detection_area_threshold: float = 0.15
    detection_classes: frozenset | None = None

    def __post_init__(self) -> None:
        if self.turn_gain_vo < 0.0 or self.turn_gain_lo < 0.0:
            raise ValueError("turn gains must be >= 0")
        if self.lookahead <= 0.0 or self.speed <= 0.0:
            raise ValueError("lookahead and speed must be > 0")
        if self.staleness_limit < 0.0:
            raise ValueError("staleness_limit must be >= 0")
        if not (0.0 <= self.detection_area_threshold <= 1.0):
            raise ValueError("detection_area_threshold must lie in [0, 1]")
        if self.detection_classes is not None:
            object.__setattr__(self, "detection_classes", frozenset(self.detection_classes))


@dataclass(frozen=True)
class Detection:
    """One detector hit with a normalized image-plane bounding box."""

    class_name: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not (0.0 <= v <= 1.0):
                raise ValueError("bbox coordinates must lie in [0, 1]")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("bbox must have positive extent")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


class CommandKind(enum.Enum):
    WAYPOINT = "waypoint"
    HOVER = "hover"
    TELEOP = "teleop"


class CommandSource(enum.Enum):
    DNN = "dnn"
    DETECTION_OVERRIDE = "detection_override"
    TELEOP = "teleop"


@dataclass(frozen=True, eq=False)
class Command:
    """Arbitrated output: either a NED waypoint, a hover, or teleop passthrough."""

    kind: CommandKind
    source: CommandSource
    position_ned: np.ndarray | None = None
    yaw_ned: float | None = None
    teleop_payload: object = None

    def __post_init__(self) -> None:
        if self.kind is CommandKind.WAYPOINT:
            if self.position_ned is None or self.yaw_ned is None:
                raise ValueError("waypoint commands need a NED position and yaw")
        elif self.position_ned is not None or self.yaw_ned is not None:
            raise ValueError(f"{self.kind.value} commands carry no waypoint")

    @classmethod
    def waypoint(cls, position_ned, yaw_ned: float,
                 source: CommandSource = CommandSource.DNN) -> "Command":
        return cls(CommandKind.WAYPOINT, source,
                   np.asarray(position_ned, dtype=float), float(yaw_ned))

    @classmethod
    def hover(cls, source: CommandSource) -> "Command":
        return cls(CommandKind.HOVER, source)

    @classmethod
    def teleop(cls, payload: object = None) -> "Command":
        return cls(CommandKind.TELEOP, CommandSource.TELEOP, teleop_payload=payload)


def turn_angle(est: TrailEstimate, cfg: ControlConfig) -> float:
    """Steering angle from the two soft heads; counterclockwise positive."""
    return (cfg.turn_gain_vo * (est.vo.p_right - est.vo.p_left)
            + cfg.turn_gain_lo * (est.lo.p_right - est.lo.p_left))


def make_waypoint(pose: Pose3, turn: float, cfg: ControlConfig) -> Command:
    """Waypoint one lookahead ahead along the turned heading, in NED.

    The planar target sits ``lookahead`` meters from the pose along
    yaw + turn; its height is the configured altitude.  The command yaw
    is the turned heading, converted to NED along with the position.
    """
    if pose.frame is not Frame.ENU:
        raise ValueError(f"expected an ENU pose, got frame {pose.frame}")
    yaw_cmd = wrap_angle(pose.yaw + turn)
    target_enu = np.array([
        pose.position[0] + cfg.lookahead * math.cos(yaw_cmd),
        pose.position[1] + cfg.lookahead * math.sin(yaw_cmd),
        cfg.altitude,
    ])
    return Command.waypoint(enu_to_ned(target_enu), enu_yaw_to_ned(yaw_cmd))


def detection_override(detections, cfg: ControlConfig) -> bool:
    """True when any qualifying detection's bbox area exceeds the threshold."""
    for det in detections:
        if cfg.detection_classes is not None and det.class_name not in cfg.detection_classes:
            continue
        if det.area > cfg.detection_area_threshold:
            return True
    return False


def arbitrate(teleop: object | None, detections, est: TrailEstimate | None,
              now: float, pose: Pose3, cfg: ControlConfig) -> Command:
    """Pick this cycle's command by fixed precedence.

    Teleop input wins outright; a qualifying detection forces a hover;
    otherwise the estimate drives a waypoint.  An absent estimate, or
    one older than the staleness limit, degrades to hover (attributed
    to the label-driven lane, since that lane made the call).
    """
    if teleop is not None:
        return Command.teleop(teleop)
    if detection_override(detections, cfg):
        return Command.hover(CommandSource.DETECTION_OVERRIDE)
    if est is None or (now - est.timestamp) > cfg.staleness_limit:
        return Command.hover(CommandSource.DNN)
    return make_waypoint(pose, turn_angle(est, cfg), cfg)


def command_log_header() -> str:
    return "t,source,kind,x_ned,y_ned,z_ned,yaw_ned"


def command_log_row(t: float, cmd: Command) -> str:
    """One CSV line; non-waypoint commands leave the pose cells empty."""
    if cmd.kind is CommandKind.WAYPOINT:
        x, y, z = (f"{v:.17g}" for v in cmd.position_ned)
        yaw = f"{cmd.yaw_ned:.17g}"
    else:
        x = y = z = yaw = ""
    return f"{t:.17g},{cmd.source.value},{cmd.kind.value},{x},{y},{z},{yaw}"
