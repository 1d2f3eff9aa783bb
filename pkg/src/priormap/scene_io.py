"""Line-delimited file formats: scenes, world map versions, trajectories.

Every record is one JSON object per line with fields emitted in a fixed
order, so repeated runs produce diff-stable, byte-identical files.
Coordinates round-trip bit-exactly because Python serializes doubles via
their shortest exact decimal representation. Readers are strict: unknown
keys, non-finite numbers, and malformed records are rejected with the
offending line number and field path.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .model import (
    FeatureClass,
    InvarianceClass,
    MapFeature,
    MapFrame,
    Pose2D,
)


class SceneFormatError(ValueError):
    """A record failed schema validation."""


def _reject_constant(token: str):
    raise SceneFormatError(f"non-finite number {token!r} is not allowed")


def _loads(line: str) -> dict:
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise SceneFormatError("record must be a JSON object")
    return obj


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _take(record: dict, key: str, where: str):
    if key not in record:
        raise SceneFormatError(f"{where}: missing field '{key}'")
    return record.pop(key)


def _no_extras(record: dict, where: str) -> None:
    if record:
        extras = ", ".join(sorted(record))
        raise SceneFormatError(f"{where}: unknown field(s): {extras}")


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneFormatError(f"{where}: expected a number")
    out = float(value)
    if not math.isfinite(out):
        raise SceneFormatError(f"{where}: must be finite")
    return out


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise SceneFormatError(f"{where}: expected a string")
    return value


_CLASS_BY_VALUE = {c.value: c for c in FeatureClass}
_INVARIANCE_BY_VALUE = {c.value: c for c in InvarianceClass}


def _parse_points(raw, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) < 2:
        raise SceneFormatError(f"{where}: 'points' must be a list of at least 2 [x, y] pairs")
    pts = np.empty((len(raw), 2), dtype=np.float64)
    for k, pair in enumerate(raw):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SceneFormatError(f"{where}.points[{k}]: expected an [x, y] pair")
        pts[k, 0] = _as_float(pair[0], f"{where}.points[{k}][0]")
        pts[k, 1] = _as_float(pair[1], f"{where}.points[{k}][1]")
    return pts


def feature_to_record(feature: MapFeature) -> dict:
    return {
        "class": feature.feature_class.value,
        "invariance": feature.invariance.value,
        "confidence": feature.confidence,
        "points": [[float(x), float(y)] for x, y in feature.points],
    }


def feature_from_record(record: dict, where: str, allow_no_object: bool = False) -> MapFeature:
    rec = dict(record)
    cls_name = _as_str(_take(rec, "class", where), f"{where}.class")
    if cls_name not in _CLASS_BY_VALUE:
        raise SceneFormatError(f"{where}.class: unknown class {cls_name!r}")
    cls = _CLASS_BY_VALUE[cls_name]
    if cls is FeatureClass.NO_OBJECT and not allow_no_object:
        raise SceneFormatError(f"{where}.class: 'no_object' is not allowed in input files")
    inv_name = _as_str(_take(rec, "invariance", where), f"{where}.invariance")
    if inv_name not in _INVARIANCE_BY_VALUE:
        raise SceneFormatError(f"{where}.invariance: unknown invariance {inv_name!r}")
    invariance = _INVARIANCE_BY_VALUE[inv_name]
    confidence = _as_float(_take(rec, "confidence", where), f"{where}.confidence")
    if not (0.0 <= confidence <= 1.0):
        raise SceneFormatError(f"{where}.confidence: must lie in [0, 1]")
    pts = _parse_points(_take(rec, "points", where), where)
    _no_extras(rec, where)
    if invariance is InvarianceClass.POLYGON:
        if pts.shape[0] < 3:
            raise SceneFormatError(f"{where}.points: polygons need at least 3 points")
        if np.array_equal(pts[0], pts[-1]):
            raise SceneFormatError(
                f"{where}.points: polygons must not repeat the closing vertex"
            )
    return MapFeature(feature_class=cls, invariance=invariance, points=pts, confidence=confidence)


def frame_to_record(frame: MapFrame) -> dict:
    return {
        "frame_id": frame.frame_id,
        "ego_pose": {"x": frame.ego_pose.x, "y": frame.ego_pose.y, "yaw": frame.ego_pose.yaw},
        "fov_side": frame.fov_side,
        "features": [feature_to_record(f) for f in frame.features],
    }


def frame_from_record(record: dict) -> MapFrame:
    rec = dict(record)
    frame_id = _as_str(_take(rec, "frame_id", "frame"), "frame.frame_id")
    where = f"frame '{frame_id}'"
    pose_rec = _take(rec, "ego_pose", where)
    if not isinstance(pose_rec, dict):
        raise SceneFormatError(f"{where}.ego_pose: expected an object")
    pose_rec = dict(pose_rec)
    pose = Pose2D(
        x=_as_float(_take(pose_rec, "x", f"{where}.ego_pose"), f"{where}.ego_pose.x"),
        y=_as_float(_take(pose_rec, "y", f"{where}.ego_pose"), f"{where}.ego_pose.y"),
        yaw=_as_float(_take(pose_rec, "yaw", f"{where}.ego_pose"), f"{where}.ego_pose.yaw"),
    )
    _no_extras(pose_rec, f"{where}.ego_pose")
    fov_side = _as_float(_take(rec, "fov_side", where), f"{where}.fov_side")
    feats_rec = _take(rec, "features", where)
    if not isinstance(feats_rec, list):
        raise SceneFormatError(f"{where}.features: expected a list")
    _no_extras(rec, where)
    features = [
        feature_from_record(fr, f"{where}.features[{k}]") if isinstance(fr, dict)
        else _bad_feature(f"{where}.features[{k}]")
        for k, fr in enumerate(feats_rec)
    ]
    return MapFrame(frame_id=frame_id, ego_pose=pose, fov_side=fov_side, features=tuple(features))


def _bad_feature(where: str):
    raise SceneFormatError(f"{where}: expected an object")


def write_scenes(frames: Iterable[MapFrame], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_scenes_to(frames, fh)


def write_scenes_to(frames: Iterable[MapFrame], fh: IO[str]) -> None:
    for frame in frames:
        fh.write(_dumps(frame_to_record(frame)))
        fh.write("\n")


def iter_scenes(path: str | Path) -> Iterator[MapFrame]:
    """Yield frames from a scene file, reporting errors with line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield frame_from_record(_loads(line))
            except SceneFormatError as exc:
                raise SceneFormatError(f"{path}: line {lineno}: {exc}") from None


def read_scenes(path: str | Path) -> list[MapFrame]:
    return list(iter_scenes(path))


def write_map_version(
    version_id: str,
    features: Sequence[MapFeature],
    path: str | Path,
    feature_ids: Sequence[str] | None = None,
) -> None:
    """Write a world-frame map version: a header line, then one feature per
    line with an optional stable id."""
    if feature_ids is not None and len(feature_ids) != len(features):
        raise ValueError("feature_ids must match features in length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"version_id": version_id}))
        fh.write("\n")
        for k, feat in enumerate(features):
            rec = feature_to_record(feat)
            if feature_ids is not None:
                rec = {"id": feature_ids[k], **rec}
            fh.write(_dumps(rec))
            fh.write("\n")


def read_map_version(path: str | Path) -> tuple[str, list[MapFeature], list[str] | None]:
    """Read a map version file; returns (version_id, features, ids or None)."""
    version_id: str | None = None
    features: list[MapFeature] = []
    ids: list[str] = []
    with_ids: bool | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = _loads(line)
                if version_id is None:
                    version_id = _as_str(_take(rec, "version_id", "header"), "header.version_id")
                    _no_extras(rec, "header")
                    continue
                has_id = "id" in rec
                if with_ids is None:
                    with_ids = has_id
                elif with_ids != has_id:
                    raise SceneFormatError(
                        "feature ids must be present on all features or none"
                    )
                fid = _as_str(rec.pop("id"), "feature.id") if has_id else ""
                features.append(feature_from_record(rec, f"feature[{len(features)}]"))
                if has_id:
                    ids.append(fid)
            except SceneFormatError as exc:
                raise SceneFormatError(f"{path}: line {lineno}: {exc}") from None
    if version_id is None:
        raise SceneFormatError(f"{path}: missing version header line")
    return version_id, features, (ids if with_ids else None)


def write_trajectory(poses: Sequence[tuple[float, Pose2D]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, pose in poses:
            fh.write(_dumps({"t": float(t), "x": pose.x, "y": pose.y, "yaw": pose.yaw}))
            fh.write("\n")


def read_trajectory(path: str | Path) -> list[tuple[float, Pose2D]]:
    out: list[tuple[float, Pose2D]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = _loads(line)
                t = _as_float(_take(rec, "t", "pose"), "pose.t")
                pose = Pose2D(
                    x=_as_float(_take(rec, "x", "pose"), "pose.x"),
                    y=_as_float(_take(rec, "y", "pose"), "pose.y"),
                    yaw=_as_float(_take(rec, "yaw", "pose"), "pose.yaw"),
                )
                _no_extras(rec, "pose")
            except SceneFormatError as exc:
                raise SceneFormatError(f"{path}: line {lineno}: {exc}") from None
            out.append((t, pose))
    return out


def load_json_config(path: str | Path) -> dict:
    """Load a single-object JSON config file, rejecting non-finite numbers."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise SceneFormatError(f"{path}: config must be a JSON object")
    return obj
