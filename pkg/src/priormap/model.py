"""Core vectorized-map data model.

Map features are fixed-length 2D control-point sequences with a semantic
class and a symmetry (invariance) class; frames collect features around an
ego pose with a square field of view. Everything here is an immutable
value object and every operation is a pure function, so frames can be
processed from any number of workers without coordination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


class FeatureClass(Enum):
    """Semantic class of a map feature. NO_OBJECT marks padded label slots
    and never appears in input files."""

    LANE_CENTER = "lane_center"
    LANE_DIVIDER = "lane_divider"
    ROAD_BOUNDARY = "road_boundary"
    DRIVEWAY = "driveway"
    NO_OBJECT = "no_object"


#: Classes a real feature may carry, in canonical score-column order.
REAL_CLASSES: tuple[FeatureClass, ...] = (
    FeatureClass.LANE_CENTER,
    FeatureClass.LANE_DIVIDER,
    FeatureClass.ROAD_BOUNDARY,
    FeatureClass.DRIVEWAY,
)


class InvarianceClass(Enum):
    """Symmetry group under which a feature's point ordering is equivalent."""

    DIRECTED_POLYLINE = "directed_polyline"
    UNDIRECTED_POLYLINE = "undirected_polyline"
    POLYGON = "polygon"


#: Default semantic-class to invariance-class table; overridable wherever a
#: table argument is accepted.
DEFAULT_INVARIANCE: Mapping[FeatureClass, InvarianceClass] = {
    FeatureClass.LANE_CENTER: InvarianceClass.DIRECTED_POLYLINE,
    FeatureClass.LANE_DIVIDER: InvarianceClass.UNDIRECTED_POLYLINE,
    FeatureClass.ROAD_BOUNDARY: InvarianceClass.UNDIRECTED_POLYLINE,
    FeatureClass.DRIVEWAY: InvarianceClass.POLYGON,
}


class DegenerateFeatureError(ValueError):
    """Raised when a polyline has no usable arc length."""


class FrameOverflowError(ValueError):
    """Raised when a frame holds more features than the configured maximum."""


def as_points(points: Sequence | np.ndarray) -> np.ndarray:
    """Coerce to a read-only (n, 2) float64 array of finite coordinates."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite (no NaN/Inf)")
    pts.flags.writeable = False
    return pts


@dataclass(frozen=True, eq=False)
class MapFeature:
    """One vectorized feature: a control-point sequence plus its classes.

    Polygons are stored as an open ring (no repeated closing vertex);
    closure is implied by the invariance class. Confidence is 1.0 for
    labels and priors, and a model score for predictions.
    """

    feature_class: FeatureClass
    invariance: InvarianceClass
    points: np.ndarray
    confidence: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", as_points(self.points))
        conf = float(self.confidence)
        if not (0.0 <= conf <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {conf}")
        object.__setattr__(self, "confidence", conf)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the control points."""
        mn = self.points.min(axis=0)
        mx = self.points.max(axis=0)
        return float(mn[0]), float(mn[1]), float(mx[0]), float(mx[1])

    def with_points(self, points: np.ndarray) -> "MapFeature":
        return replace(self, points=points)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MapFeature):
            return NotImplemented
        return (
            self.feature_class is other.feature_class
            and self.invariance is other.invariance
            and self.confidence == other.confidence
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(float(yaw), math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    """World-frame planar pose; yaw is normalized to (-pi, pi] radians."""

    x: float
    y: float
    yaw: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "yaw"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"pose {name} must be finite")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclass(frozen=True, eq=False)
class MapFrame:
    """An ego-centered scene: pose, square field of view, and features.

    Feature coordinates are in the ego frame (+x forward, +y left); the
    field of view is the square [-fov_side/2, +fov_side/2]^2.
    """

    frame_id: str
    ego_pose: Pose2D
    fov_side: float = 90.0
    features: tuple[MapFeature, ...] = ()

    def __post_init__(self) -> None:
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        fov = float(self.fov_side)
        if not (math.isfinite(fov) and fov > 0):
            raise ValueError(f"fov_side must be positive, got {self.fov_side}")
        object.__setattr__(self, "fov_side", fov)
        object.__setattr__(self, "features", tuple(self.features))

    def with_features(self, features: Iterable[MapFeature]) -> "MapFrame":
        return replace(self, features=tuple(features))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MapFrame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.ego_pose == other.ego_pose
            and self.fov_side == other.fov_side
            and self.features == other.features
        )


@dataclass(frozen=True)
class ModelDims:
    """Tensor dimensions shared by the matching layer.

    The prediction and label slot counts are equal by construction; every
    polyline carries the same number of 2D control points.
    """

    m_pred: int = 50
    m_gt: int = 50
    n_points: int = 20
    p_dim: int = 2

    def __post_init__(self) -> None:
        if self.m_pred != self.m_gt:
            raise ValueError("m_pred and m_gt must be equal")
        if self.m_gt < 1:
            raise ValueError("m_gt must be positive")
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if self.p_dim != 2:
            raise ValueError("only planar (p_dim=2) features are supported")


DEFAULT_DIMS = ModelDims()


def _arc_lengths(pts: np.ndarray, closed: bool) -> tuple[np.ndarray, np.ndarray]:
    ring = np.vstack([pts, pts[:1]]) if closed else pts
    seg = np.linalg.norm(np.diff(ring, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return ring, cum


def resample_polyline(points: Sequence | np.ndarray, n: int, closed: bool = False) -> np.ndarray:
    """Resample a polyline to n points at equal arc-length spacing.

    Open polylines keep both endpoints exactly; closed rings are sampled at
    spacing L/n starting from the first vertex, without a repeated closing
    vertex. Consecutive duplicate input points are tolerated.
    """
    pts = as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("resampling needs at least 2 input points")
    if n < 2:
        raise ValueError("resampling needs n >= 2 output points")
    ring, cum = _arc_lengths(pts, closed)
    total = float(cum[-1])
    if total <= 0.0:
        raise DegenerateFeatureError("degenerate feature: zero arc length")
    if closed:
        targets = np.arange(n, dtype=np.float64) * (total / n)
    else:
        targets = np.linspace(0.0, total, n)
    out = np.empty((n, 2), dtype=np.float64)
    out[:, 0] = np.interp(targets, cum, ring[:, 0])
    out[:, 1] = np.interp(targets, cum, ring[:, 1])
    return out


def polyline_length(points: np.ndarray, closed: bool = False) -> float:
    """Total arc length of a polyline (perimeter when closed)."""
    _, cum = _arc_lengths(np.asarray(points, dtype=np.float64), closed)
    return float(cum[-1])


def apply_rigid_transform(frame: MapFrame, dx: float, dy: float, dyaw: float) -> MapFrame:
    """Rotate every control point by dyaw about the ego origin, then
    translate by (dx, dy). The ego pose is untouched: the map moves
    relative to the robot, not the other way round."""
    if dx == 0.0 and dy == 0.0 and dyaw == 0.0:
        return frame
    c, s = math.cos(dyaw), math.sin(dyaw)
    rot = np.array([[c, -s], [s, c]], dtype=np.float64)
    offset = np.array([dx, dy], dtype=np.float64)
    feats = tuple(f.with_points(f.points @ rot.T + offset) for f in frame.features)
    return frame.with_features(feats)


def pad_feature(n_points: int) -> MapFeature:
    """The no-object padding slot: zero geometry, zero confidence."""
    return MapFeature(
        feature_class=FeatureClass.NO_OBJECT,
        invariance=InvarianceClass.DIRECTED_POLYLINE,
        points=np.zeros((n_points, 2), dtype=np.float64),
        confidence=0.0,
    )


def pad_to_fixed(features: Sequence[MapFeature], dims: ModelDims = DEFAULT_DIMS) -> tuple[MapFeature, ...]:
    """Pad a feature list with no-object slots up to exactly m_gt entries.

    Original order is preserved and pads are appended at the end. Padding
    an already-padded list is an error so pipeline double-padding surfaces
    instead of silently growing.
    """
    feats = tuple(features)
    if any(f.feature_class is FeatureClass.NO_OBJECT for f in feats):
        raise ValueError("input already contains no-object padding")
    if len(feats) > dims.m_gt:
        raise FrameOverflowError(
            f"frame overflow: {len(feats)} features exceed m_gt={dims.m_gt}"
        )
    pad = pad_feature(dims.n_points)
    return feats + (pad,) * (dims.m_gt - len(feats))


def _clip_segment_halfplane(
    a: np.ndarray, b: np.ndarray, axis: int, bound: float, keep_below: bool
) -> tuple[np.ndarray, np.ndarray] | None:
    """Clip segment a->b against one axis-aligned half-plane.

    Crossing points get the boundary coordinate assigned exactly, so
    clipped endpoints sit on the box edge bit-exactly.
    """
    fa = a[axis] - bound
    fb = b[axis] - bound
    ina = fa <= 0.0 if keep_below else fa >= 0.0
    inb = fb <= 0.0 if keep_below else fb >= 0.0
    if ina and inb:
        return a, b
    if not ina and not inb:
        return None
    t = fa / (fa - fb)
    cross = a + t * (b - a)
    cross[axis] = bound
    return (a, cross) if ina else (cross, b)


_HALFPLANES = (
    (0, False),  # x >= lo
    (0, True),   # x <= hi
    (1, False),  # y >= lo
    (1, True),   # y <= hi
)


def _clip_segment_box(a: np.ndarray, b: np.ndarray, lo: float, hi: float):
    seg = (a.copy(), b.copy())
    for axis, below in _HALFPLANES:
        bound = hi if below else lo
        seg = _clip_segment_halfplane(seg[0], seg[1], axis, bound, below)
        if seg is None:
            return None
    return seg


def _clip_polyline_box(pts: np.ndarray, lo: float, hi: float) -> list[np.ndarray]:
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] | None = None
    for i in range(pts.shape[0] - 1):
        seg = _clip_segment_box(pts[i], pts[i + 1], lo, hi)
        if seg is None:
            current = None
            continue
        a, b = seg
        if current is not None and np.array_equal(current[-1], a):
            current.append(b)
        else:
            current = [a, b]
            pieces.append(current)
    return [np.asarray(p) for p in pieces]


def _clip_polygon_box(pts: np.ndarray, lo: float, hi: float) -> np.ndarray | None:
    """Sutherland-Hodgman clip of a closed ring against the box; returns an
    open ring (no repeated closing vertex) or None when nothing remains."""
    poly = [p.copy() for p in pts]
    for axis, below in _HALFPLANES:
        bound = hi if below else lo
        if not poly:
            return None
        out: list[np.ndarray] = []
        for i, cur in enumerate(poly):
            prev = poly[i - 1]
            fc = cur[axis] - bound
            fp = prev[axis] - bound
            cur_in = fc <= 0.0 if below else fc >= 0.0
            prev_in = fp <= 0.0 if below else fp >= 0.0
            if cur_in != prev_in:
                t = fp / (fp - fc)
                cross = prev + t * (cur - prev)
                cross[axis] = bound
                out.append(cross)
            if cur_in:
                out.append(cur.copy())
        poly = out
    if not poly:
        return None
    # Drop consecutive duplicates, including the wrap-around pair.
    kept: list[np.ndarray] = []
    for p in poly:
        if not kept or not np.array_equal(kept[-1], p):
            kept.append(p)
    if len(kept) > 1 and np.array_equal(kept[0], kept[-1]):
        kept.pop()
    if len(kept) < 3:
        return None
    ring = np.asarray(kept)
    if polyline_length(ring, closed=True) <= 0.0:
        return None
    return ring


def clip_to_fov(frame: MapFrame) -> MapFrame:
    """Intersect every feature with the frame's field-of-view square.

    Features entirely inside pass through untouched. Polylines crossing the
    boundary are split at the boundary and each surviving piece is
    resampled back to the feature's own point count; polygons are clipped
    as rings. Fully-outside features are dropped.
    """
    half = frame.fov_side / 2.0
    lo, hi = -half, half
    out: list[MapFeature] = []
    for feat in frame.features:
        pts = feat.points
        if np.all((pts >= lo) & (pts <= hi)):
            out.append(feat)
            continue
        if feat.invariance is InvarianceClass.POLYGON:
            ring = _clip_polygon_box(pts, lo, hi)
            if ring is not None:
                out.append(feat.with_points(resample_polyline(ring, feat.n_points, closed=True)))
        else:
            for piece in _clip_polyline_box(pts, lo, hi):
                if polyline_length(piece) > 0.0:
                    out.append(feat.with_points(resample_polyline(piece, feat.n_points)))
    return frame.with_features(out)


def world_to_ego(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Transform world-frame points into the ego frame at the given pose."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    shifted = pts - np.array([pose.x, pose.y])
    rot = np.array([[c, s], [-s, c]], dtype=np.float64)
    return shifted @ rot.T


def ego_to_world(points: np.ndarray, pose: Pose2D) -> np.ndarray:
    """Inverse of :func:`world_to_ego`."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rot = np.array([[c, -s], [s, c]], dtype=np.float64)
    return pts @ rot.T + np.array([pose.x, pose.y])
