"""Metric scale alignment between an odometry frame and the MAV frame.

A monocular odometry stream reports poses in an arbitrarily scaled
frame.  Collecting (odometry pose, metric MAV pose) pairs and solving
the position-only similarity problem

    mav_position  =  scale * R @ odometry_position + translation

recovers the scale factor and frame alignment, after which odometry
landmarks (for example points lifted from an inverse-depth map) can be
queried in meters.  Pairs are only collected when the vehicle has
moved enough since the last retained pair; without parallax the
solve is ill-conditioned.

The closed-form least-squares solve follows the classic SVD
construction: cross-covariance of the centered point sets, SVD, and a
determinant-based sign correction so the recovered rotation is proper
even when the optimum of the unconstrained problem is a reflection.
At least three non-collinear pairs are required; collinear
configurations leave the rotation about the line unobservable.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import Frame, Pose3, SimilarityTransform, wrap_angle

__all__ = [
    "InsufficientDataError",
    "DegenerateGeometryError",
    "PosePair",
    "PairBuffer",
    "solve_similarity",
    "CameraIntrinsics",
    "InverseDepthImage",
    "points_from_inverse_depth",
    "nearest_obstacle_distance",
    "running_scale_estimate",
    "make_synthetic_pair_stream",
    "save_pair_trace",
    "load_pair_trace",
    "save_inverse_depth",
    "load_inverse_depth",
]


class InsufficientDataError(ValueError):
    """Fewer pose pairs than the solve requires."""


class DegenerateGeometryError(ValueError):
    """The collected positions are (nearly) collinear; the solve is ill-posed."""


@dataclass(frozen=True)
class PosePair:
    """Simultaneous odometry-frame and metric ENU pose observations."""

    dso: Pose3   # odometry frame, arbitrary scale
    mav: Pose3   # metric ENU
    t: float

    def __post_init__(self) -> None:
        if self.dso.frame is not Frame.CAMERA:
            raise ValueError("odometry pose must carry the CAMERA frame tag")
        if self.mav.frame is not Frame.ENU:
            raise ValueError("MAV pose must carry the ENU frame tag")


class PairBuffer:
    """Bounded pair store with parallax gating.

    A pushed pair is retained only when the buffer is empty or the
    metric position moved at least ``parallax_threshold`` meters since
    the last retained pair (the odometry side has no usable unit before
    alignment).  At capacity the oldest pair is evicted.
    """

    def __init__(self, capacity: int = 50, parallax_threshold: float = 0.3):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if parallax_threshold < 0.0:
            raise ValueError(f"parallax_threshold must be >= 0, got {parallax_threshold}")
        self.capacity = capacity
        self.parallax_threshold = parallax_threshold
        self._pairs: deque[PosePair] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def pairs(self) -> tuple:
        return tuple(self._pairs)

    def push(self, pair: PosePair) -> bool:
        """Retain the pair if it clears the parallax gate; True when kept."""
        if self._pairs:
            moved = np.linalg.norm(pair.mav.position - self._pairs[-1].mav.position)
            if moved < self.parallax_threshold:
                return False
        self._pairs.append(pair)
        return True

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        """(odometry positions, metric positions), each (n, 3)."""
        dso = np.array([p.dso.position for p in self._pairs]).reshape(-1, 3)
        mav = np.array([p.mav.position for p in self._pairs]).reshape(-1, 3)
        return dso, mav


def solve_similarity(buf: PairBuffer) -> SimilarityTransform:
    """Least-squares similarity from odometry positions to metric positions.

    Raises InsufficientDataError with fewer than three pairs and
    DegenerateGeometryError when the odometry positions are collinear
    (second singular value of the cross-covariance below 1e-9 of the
    largest).  On consistent inputs the recovery is exact to rounding.
    """
    X, Y = buf.positions()
    n = len(X)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 pose pairs, have {n}")
    mu_x = X.mean(axis=0)
    mu_y = Y.mean(axis=0)
    Xc = X - mu_x
    Yc = Y - mu_y
    cov = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(cov)
    if D[0] <= 0.0 or D[1] < 1e-9 * D[0]:
        raise DegenerateGeometryError(
            "pose pair positions are collinear; rotation is unobservable"
        )
    sign = 1.0 if np.linalg.det(U) * np.linalg.det(Vt) > 0.0 else -1.0
    S = np.array([1.0, 1.0, sign])
    R = (U * S) @ Vt
    var_x = float((Xc**2).sum()) / n
    scale = float((D * S).sum()) / var_x
    translation = mu_y - scale * (R @ mu_x)
    return SimilarityTransform(scale, R, translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus the image extent the samples must lie in."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: float = 640.0
    height: float = 480.0

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("image extent must be positive")


@dataclass(frozen=True, eq=False)
class InverseDepthImage:
    """Sparse inverse-depth samples: rows of (u, v, inverse depth)."""

    intrinsics: CameraIntrinsics
    samples: np.ndarray  # (n, 3)

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=float).reshape(-1, 3)
        if np.any(s[:, 0] < 0.0) or np.any(s[:, 0] > self.intrinsics.width):
            raise ValueError("u coordinates must lie within the image width")
        if np.any(s[:, 1] < 0.0) or np.any(s[:, 1] > self.intrinsics.height):
            raise ValueError("v coordinates must lie within the image height")
        if np.any(s[:, 2] <= 0.0):
            raise ValueError("inverse depths must be positive")
        object.__setattr__(self, "samples", s)


def points_from_inverse_depth(img: InverseDepthImage) -> np.ndarray:
    """Back-project samples to camera-frame points (n, 3).

    Depth is the reciprocal of the stored inverse depth; x and y follow
    the pinhole model ((u - cx) * z / fx, (v - cy) * z / fy).
    """
    k = img.intrinsics
    z = 1.0 / img.samples[:, 2]
    x = (img.samples[:, 0] - k.cx) * z / k.fx
    y = (img.samples[:, 1] - k.cy) * z / k.fy
    return np.column_stack([x, y, z])


def nearest_obstacle_distance(points, transform: SimilarityTransform, pose: Pose3,
                              cone_half_angle: float = math.pi / 6.0) -> float | None:
    """Closest transformed point inside the forward cone, in meters.

    Points are mapped through ``transform`` into the pose's ENU frame,
    then filtered to bearings within ``cone_half_angle`` of the pose
    yaw; the planar distance of the nearest survivor is returned, or
    None when nothing lies ahead.
    """
    if pose.frame is not Frame.ENU:
        raise ValueError(f"expected an ENU pose, got frame {pose.frame}")
    best = None
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        metric = transform.apply(p)
        dx = metric[0] - pose.position[0]
        dy = metric[1] - pose.position[1]
        dist = math.hypot(dx, dy)
        if dist == 0.0:
            return 0.0
        if abs(wrap_angle(math.atan2(dy, dx) - pose.yaw)) <= cone_half_angle:
            best = dist if best is None else min(best, dist)
    return best


def running_scale_estimate(pairs, buf: PairBuffer, target_dso,
                           observer_enu=(0.0, 0.0, 0.0)) -> list:
    """Feed pairs through the buffer, re-solving after each retained pair.

    For every retained pair the current buffer is solved and the metric
    distance from ``observer_enu`` to the transformed odometry-frame
    target is recorded; while the buffer cannot be solved yet the entry
    is None.  Returns [(t, distance-or-None), ...], one entry per
    retained pair.
    """
    target = np.asarray(target_dso, dtype=float)
    observer = np.asarray(observer_enu, dtype=float)
    series = []
    for pair in pairs:
        if not buf.push(pair):
            continue
        try:
            T = solve_similarity(buf)
            estimate = float(np.linalg.norm(T.apply(target) - observer))
        except (InsufficientDataError, DegenerateGeometryError):
            estimate = None
        series.append((pair.t, estimate))
    return series


def make_synthetic_pair_stream(true_transform: SimilarityTransform, n: int,
                               spacing: float = 0.35, noise_std: float = 0.0,
                               rng: np.random.Generator | None = None,
                               dt: float = 0.2) -> list:
    """Pose pairs along a weaving flight, consistent with a known transform.

    The metric trajectory curves laterally and vertically so that any
    three retained positions are non-collinear.  The odometry side is
    the exact inverse image of the clean metric position; Gaussian
    noise of ``noise_std`` meters, when requested, perturbs the metric
    side as measurement error.
    """
    if noise_std > 0.0 and rng is None:
        raise ValueError("noise_std > 0 requires an rng")
    inv = true_transform.invert()
    pairs = []
    for i in range(n):
        u = i * spacing
        mav_pos = np.array([
            u,
            1.5 * math.sin(0.15 * u),
            2.0 + 0.5 * math.sin(0.23 * u + 1.0),
        ])
        yaw = math.atan2(1.5 * 0.15 * math.cos(0.15 * u), 1.0)
        dso_pos = inv.apply(mav_pos)
        measured = mav_pos if noise_std == 0.0 else mav_pos + rng.normal(0.0, noise_std, 3)
        pairs.append(PosePair(
            Pose3(dso_pos, yaw, Frame.CAMERA),
            Pose3(measured, yaw, Frame.ENU),
            i * dt,
        ))
    return pairs


# ---------------------------------------------------------------------------
# File formats

_TRACE_HEADER = "t,dso_x,dso_y,dso_z,dso_yaw,mav_x,mav_y,mav_z,mav_yaw"


def save_pair_trace(pairs, path) -> None:
    lines = [_TRACE_HEADER]
    for p in pairs:
        cells = [p.t, *p.dso.position, p.dso.yaw, *p.mav.position, p.mav.yaw]
        lines.append(",".join(f"{v:.17g}" for v in cells))
    Path(path).write_text("\n".join(lines) + "\n")


def load_pair_trace(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _TRACE_HEADER:
        raise ValueError(f"{path}: unexpected pose-pair trace header")
    pairs = []
    for line in lines[1:]:
        if not line:
            continue
        v = [float(c) for c in line.split(",")]
        if len(v) != 9:
            raise ValueError(f"{path}: expected 9 columns, got {len(v)}")
        pairs.append(PosePair(
            Pose3(np.array(v[1:4]), v[4], Frame.CAMERA),
            Pose3(np.array(v[5:8]), v[8], Frame.ENU),
            v[0],
        ))
    return pairs


def save_inverse_depth(img: InverseDepthImage, path) -> None:
    k = img.intrinsics
    lines = [
        f"# intrinsics fx={k.fx:.17g} fy={k.fy:.17g} cx={k.cx:.17g} cy={k.cy:.17g}"
        f" width={k.width:.17g} height={k.height:.17g}",
        "u,v,inv_depth",
    ]
    for u, v, q in img.samples:
        lines.append(f"{u:.17g},{v:.17g},{q:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_inverse_depth(path) -> InverseDepthImage:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# intrinsics "):
        raise ValueError(f"{path}: missing intrinsics header")
    fields = dict(item.split("=") for item in lines[0][len("# intrinsics "):].split())
    try:
        k = CameraIntrinsics(
            fx=float(fields["fx"]), fy=float(fields["fy"]),
            cx=float(fields["cx"]), cy=float(fields["cy"]),
            width=float(fields["width"]), height=float(fields["height"]),
        )
    except KeyError as missing:
        raise ValueError(f"{path}: intrinsics header missing {missing}") from None
    if lines[1] != "u,v,inv_depth":
        raise ValueError(f"{path}: unexpected column header")
    rows = [[float(c) for c in line.split(",")] for line in lines[2:] if line]
    return InverseDepthImage(k, np.array(rows).reshape(-1, 3))
