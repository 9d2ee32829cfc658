"""Trail geometry and trail-relative state.

A trail is a planar polyline centerline with a constant corridor
width.  The vehicle's relationship to it is summarized by three
numbers: distance along the centerline, signed lateral offset
(positive to the left of the local trail direction), and heading
error (positive when facing left of the trail direction).  All
positions here are ENU x/y in meters; headings are ENU yaw radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import Frame, Pose3, wrap_angle

__all__ = [
    "Trail",
    "CenterlineProjection",
    "RelativeState",
    "project_to_centerline",
    "relative_state",
    "is_off_trail",
    "make_scenario",
    "SCENARIO_NAMES",
    "load_trail",
    "save_trail",
]


@dataclass(frozen=True, eq=False)
class Trail:
    """Polyline centerline (N,2) plus corridor width in meters.

    Consecutive centerline points must be distinct; width must be
    positive.  Segment lengths and cumulative arc lengths are
    precomputed at construction.
    """

    centerline: np.ndarray
    width: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"centerline must be (N>=2, 2), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("centerline points must be finite")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len == 0.0):
            raise ValueError("consecutive centerline points must be distinct")
        if not (math.isfinite(self.width) and self.width > 0.0):
            raise ValueError(f"width must be finite and > 0, got {self.width}")
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_seg_len", seg_len)
        object.__setattr__(self, "_cum_len", np.concatenate([[0.0], np.cumsum(seg_len)]))
        object.__setattr__(self, "_heading", np.arctan2(seg[:, 1], seg[:, 0]))

    @property
    def length(self) -> float:
        """Total centerline arc length in meters."""
        return float(self._cum_len[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Centerline point at arc length ``s`` (clamped to [0, length])."""
        s = min(max(float(s), 0.0), self.length)
        i = self._segment_index(s)
        t = (s - self._cum_len[i]) / self._seg_len[i]
        return self.centerline[i] + t * self._seg[i]

    def heading_at(self, s: float) -> float:
        """Tangent heading (ENU yaw) of the segment containing arc length ``s``."""
        return float(self._heading[self._segment_index(s)])

    def _segment_index(self, s: float) -> int:
        i = int(np.searchsorted(self._cum_len, s, side="right")) - 1
        return min(max(i, 0), len(self._seg) - 1)


@dataclass(frozen=True)
class CenterlineProjection:
    """Closest-point decomposition of a planar position against a trail."""

    arc_length: float       # s, meters from the trail start
    lateral_offset: float   # signed, + left of trail direction; |.| = distance
    heading: float          # tangent heading of the chosen segment


@dataclass(frozen=True)
class RelativeState:
    """Vehicle state expressed relative to a trail."""

    arc_length: float
    lateral_offset: float
    heading_error: float    # + when facing left of the trail direction

    def mirrored(self) -> "RelativeState":
        """The same state reflected across the centerline."""
        return RelativeState(self.arc_length, -self.lateral_offset, -self.heading_error)


def project_to_centerline(trail: Trail, point) -> CenterlineProjection:
    """Project a planar point onto the nearest centerline segment.

    Ties between segments (equidistant corners) resolve to the smaller
    arc length.  The lateral offset satisfies |offset| == distance from
    the point to the polyline, including when the foot is a vertex; the
    sign is taken from the side of the chosen segment's tangent, with
    the degenerate on-tangent case counted as left.
    """
    p = np.asarray(point, dtype=float)[:2]
    A = trail.centerline[:-1]
    t = np.einsum("ij,ij->i", p - A, trail._seg) / (trail._seg_len**2)
    t = np.clip(t, 0.0, 1.0)
    foot = A + t[:, None] * trail._seg
    delta = p - foot
    dist2 = np.einsum("ij,ij->i", delta, delta)
    i = int(np.argmin(dist2))  # first minimum: smallest arc length wins ties
    dist = math.sqrt(dist2[i])
    ux, uy = trail._seg[i] / trail._seg_len[i]
    cross = ux * delta[i, 1] - uy * delta[i, 0]
    d = dist if cross >= 0.0 else -dist
    s = trail._cum_len[i] + t[i] * trail._seg_len[i]
    return CenterlineProjection(float(s), float(d), float(trail._heading[i]))


def relative_state(trail: Trail, pose: Pose3) -> RelativeState:
    """Trail-relative state of an ENU pose (altitude is ignored)."""
    if pose.frame is not Frame.ENU:
        raise ValueError(f"expected an ENU pose, got frame {pose.frame}")
    proj = project_to_centerline(trail, pose.position)
    return RelativeState(
        proj.arc_length,
        proj.lateral_offset,
        wrap_angle(pose.yaw - proj.heading),
    )


def is_off_trail(trail: Trail, point) -> bool:
    """True when the point lies strictly outside the trail corridor."""
    proj = project_to_centerline(trail, point)
    return abs(proj.lateral_offset) > 0.5 * trail.width


def _polyline_from_headings(headings: np.ndarray, seg_len: float) -> np.ndarray:
    steps = seg_len * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def _make_zigzag(total_len: float, n_corners: int, half_bend: float, width: float) -> Trail:
    n_seg = n_corners + 1
    signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n_seg)])
    headings = half_bend * signs
    return Trail(_polyline_from_headings(headings, total_len / n_seg), width)


SCENARIO_NAMES = ("straight100", "zigzag250", "long1k")


def make_scenario(name: str) -> Trail:
    """Build one of the named benchmark trails.

    straight100   100 m straight corridor, 2 m wide.
    zigzag250     250 m with 6 alternating +/-30 degree bends, 1.5 m wide.
    long1k        1 km with 12 alternating bends, 1.5 m wide.
    """
    if name == "straight100":
        return Trail(np.array([[0.0, 0.0], [100.0, 0.0]]), 2.0)
    if name == "zigzag250":
        return _make_zigzag(250.0, 6, math.radians(15.0), 1.5)
    if name == "long1k":
        return _make_zigzag(1000.0, 12, math.radians(15.0), 1.5)
    raise ValueError(f"unknown scenario {name!r}; known: {', '.join(SCENARIO_NAMES)}")


def save_trail(trail: Trail, path) -> None:
    """Write the plain-text trail format: a width header, then x y lines."""
    lines = [f"width {trail.width:.17g}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in trail.centerline]
    Path(path).write_text("\n".join(lines) + "\n")


def load_trail(path) -> Trail:
    """Read the plain-text trail format written by :func:`save_trail`.

    Blank lines and lines starting with '#' are ignored.  The first
    payload line must be ``width <meters>``.
    """
    rows = []
    width = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if width is None:
            parts = line.split()
            if len(parts) != 2 or parts[0] != "width":
                raise ValueError(f"{path}:{lineno}: expected 'width <meters>' header")
            width = float(parts[1])
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        rows.append([float(parts[0]), float(parts[1])])
    if width is None:
        raise ValueError(f"{path}: missing width header")
    return Trail(np.array(rows), width)
