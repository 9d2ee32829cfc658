"""Frames, poses and similarity transforms.

Conventions used throughout the package:

* Vectors are float64 numpy arrays of shape (3,).
* ENU axes are (east, north, up); NED axes are (north, east, down).
* Yaw in ENU is measured counterclockwise from +east (right-hand rule
  about +up).  Yaw in NED is measured clockwise from +north when viewed
  from above, which is the same physical rotation expressed in the
  flipped frame: ``yaw_ned = pi/2 - yaw_enu``.
* All angles are radians.  Degrees appear only at config / CLI
  boundaries.
* Angles are normalized to the half-open interval (-pi, pi].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Frame",
    "Pose3",
    "SimilarityTransform",
    "wrap_angle",
    "enu_to_ned",
    "ned_to_enu",
    "enu_yaw_to_ned",
    "ned_yaw_to_enu",
    "pose_enu_to_ned",
]


class Frame(enum.Enum):
    """Coordinate frame tag carried by poses."""

    ENU = "enu"
    NED = "ned"
    CAMERA = "camera"  # camera / odometry frame, arbitrary scale


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi].

    Both endpoints of the branch cut map to +pi, so the result is
    exactly representable and round trips under negation up to the
    branch point.
    """
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector components must be finite")
    return v


def enu_to_ned(p) -> np.ndarray:
    """Re-express an ENU vector (e, n, u) in NED axes as (n, e, -u).

    The axis permutation has determinant +1, so chirality is preserved
    and vector norms are unchanged.
    """
    v = _as_vec3(p)
    return np.array([v[1], v[0], -v[2]])


def ned_to_enu(p) -> np.ndarray:
    """Inverse of :func:`enu_to_ned`; the mapping is an involution."""
    v = _as_vec3(p)
    return np.array([v[1], v[0], -v[2]])


def enu_yaw_to_ned(yaw_enu: float) -> float:
    """Convert a heading from ENU (ccw from +east) to NED (cw from +north)."""
    return wrap_angle(0.5 * math.pi - yaw_enu)


def ned_yaw_to_enu(yaw_ned: float) -> float:
    """Convert a heading from NED back to ENU; same formula both ways."""
    return wrap_angle(0.5 * math.pi - yaw_ned)


@dataclass(frozen=True, eq=False)
class Pose3:
    """Position plus yaw in a tagged frame.

    Roll and pitch are deliberately absent: the vehicle model is planar
    with altitude, and every consumer in this package reasons about yaw
    only.  Yaw is normalized to (-pi, pi] on construction.
    """

    position: np.ndarray
    yaw: float
    frame: Frame

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec3(self.position))
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if not isinstance(self.frame, Frame):
            raise ValueError(f"frame must be a Frame, got {self.frame!r}")


def pose_enu_to_ned(pose: Pose3) -> Pose3:
    """Re-express an ENU pose in NED axes (position permuted, yaw converted)."""
    if pose.frame is not Frame.ENU:
        raise ValueError(f"expected an ENU pose, got frame {pose.frame}")
    return Pose3(enu_to_ned(pose.position), enu_yaw_to_ned(pose.yaw), Frame.NED)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """Scaled rigid map ``p -> scale * R @ p + translation``.

    The rotation must be a proper orthonormal matrix (R^T R = I,
    det R = +1, both within 1e-9) and the scale strictly positive;
    violations raise ValueError at construction so downstream code can
    assume a valid transform.
    """

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("rotation entries must be finite")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1 within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        """Map a point: ``scale * R @ p + translation``."""
        return self.scale * (self.rotation @ _as_vec3(p)) + self.translation

    def invert(self) -> "SimilarityTransform":
        """Exact inverse: scale 1/s, rotation R^T, translation -R^T t / s."""
        Rt = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale
        )

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Return the transform equivalent to applying ``inner`` first, then self."""
        return SimilarityTransform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * (self.rotation @ inner.translation) + self.translation,
        )
