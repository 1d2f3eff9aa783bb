"""Chamfer-distance mAP over predicted map frames.

Predictions and ground truth are matched greedily per frame and per class
in descending confidence order; a prediction claims the nearest unmatched
label when their symmetric Chamfer distance is within the threshold.
Average precision integrates the interpolated precision envelope with a
threshold sweep over confidence levels, which makes the result invariant
to frame and prediction ordering. The report averages per-class AP over
thresholds first, then over classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import (
    REAL_CLASSES,
    FeatureClass,
    InvarianceClass,
    MapFeature,
    MapFrame,
    resample_polyline,
)

_CLASS_BY_VALUE = {c.value: c for c in FeatureClass}


@dataclass(frozen=True)
class EvalConfig:
    """Thresholds are meters of Chamfer distance, strictly increasing.
    Predictions classified no-object or scored below the floor are dropped
    before matching. densify > 0 resamples features to that many points
    before the distance computation."""

    thresholds: tuple[float, ...] = (0.5, 1.0, 1.5)
    classes: tuple[FeatureClass, ...] = REAL_CLASSES
    score_floor: float = 0.05
    densify: int = 0

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.thresholds)
        if not ts or any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("thresholds must be positive and strictly increasing")
        object.__setattr__(self, "thresholds", ts)
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EvalConfig":
        rec = dict(raw)
        kwargs: dict = {}
        if "thresholds" in rec:
            kwargs["thresholds"] = tuple(rec.pop("thresholds"))
        if "classes" in rec:
            names = rec.pop("classes")
            try:
                kwargs["classes"] = tuple(_CLASS_BY_VALUE[n] for n in names)
            except KeyError as exc:
                raise ValueError(f"eval config: unknown class {exc.args[0]!r}") from None
        for name in ("score_floor", "densify"):
            if name in rec:
                kwargs[name] = rec.pop(name)
        if rec:
            raise ValueError(f"eval config: unknown key(s): {', '.join(sorted(rec))}")
        return cls(**kwargs)


def chamfer_distance(a: MapFeature | np.ndarray, b: MapFeature | np.ndarray) -> float:
    """Symmetric Chamfer distance between two control-point sets: the mean
    of the two directed mean nearest-point distances."""
    pa = a.points if isinstance(a, MapFeature) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, MapFeature) else np.asarray(b, dtype=np.float64)
    diff = pa[:, None, :] - pb[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    return 0.5 * (float(dist.min(axis=1).mean()) + float(dist.min(axis=0).mean()))


@dataclass
class FrameMatches:
    """Greedy matching outcome for one frame and one class."""

    tp_confidences: list[float] = field(default_factory=list)
    fp_confidences: list[float] = field(default_factory=list)
    fn: int = 0


def match_predictions(
    preds: Sequence[MapFeature], gts: Sequence[MapFeature], tau: float
) -> FrameMatches:
    """Greedy one-to-one matching within a class: in descending confidence
    order each prediction takes the lowest-Chamfer unmatched label if that
    distance is within tau, otherwise it is a false positive; leftover
    labels count as false negatives."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken = [False] * len(gts)
    out = FrameMatches()
    for i in order:
        best_j = -1
        best_d = np.inf
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            d = chamfer_distance(preds[i], gt)
            if d < best_d:
                best_d = d
                best_j = j
        if best_j >= 0 and best_d <= tau:
            taken[best_j] = True
            out.tp_confidences.append(preds[i].confidence)
        else:
            out.fp_confidences.append(preds[i].confidence)
    out.fn = taken.count(False)
    return out


def average_precision(records: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """Area under the interpolated precision-recall curve.

    records are (confidence, is_true_positive) pairs pooled over the
    dataset; recall is measured against the total label count. Equal
    confidences enter the curve together, so the result does not depend on
    input ordering. Returns None when there are no labels.
    """
    if n_gt <= 0:
        return None
    if not records:
        return 0.0
    confs = np.asarray([r[0] for r in records], dtype=np.float64)
    flags = np.asarray([r[1] for r in records], dtype=bool)
    order = np.argsort(-confs, kind="stable")
    confs = confs[order]
    flags = flags[order]
    # One PR point per distinct confidence level (threshold sweep).
    boundaries = np.nonzero(np.diff(confs))[0]
    cut = np.concatenate([boundaries, [len(confs) - 1]])
    tp = np.cumsum(flags)[cut].astype(np.float64)
    fp = np.cumsum(~flags)[cut].astype(np.float64)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * envelope).sum())


@dataclass(frozen=True)
class EvalReport:
    """AP per class and threshold, per-class means, the overall mAP, and
    aggregate TP/FP/FN counts per threshold."""

    ap: Mapping[FeatureClass, Mapping[float, float | None]]
    class_mean: Mapping[FeatureClass, float | None]
    mean_ap: float | None
    counts: Mapping[float, tuple[int, int, int]]
    config: EvalConfig

    def to_dict(self) -> dict:
        return {
            "ap": {
                cls.value: {f"{tau:g}": self.ap[cls][tau] for tau in self.config.thresholds}
                for cls in self.config.classes
            },
            "class_mean_ap": {cls.value: self.class_mean[cls] for cls in self.config.classes},
            "mean_ap": self.mean_ap,
            "counts": {
                f"{tau:g}": {"tp": c[0], "fp": c[1], "fn": c[2]}
                for tau, c in ((t, self.counts[t]) for t in self.config.thresholds)
            },
        }


def _usable_predictions(frame: MapFrame, config: EvalConfig) -> list[MapFeature]:
    return [
        f
        for f in frame.features
        if f.feature_class is not FeatureClass.NO_OBJECT and f.confidence >= config.score_floor
    ]


def _densified(feature: MapFeature, config: EvalConfig) -> MapFeature:
    if config.densify <= 0 or feature.n_points == config.densify:
        return feature
    closed = feature.invariance is InvarianceClass.POLYGON
    return feature.with_points(resample_polyline(feature.points, config.densify, closed=closed))


def pair_frames(
    pred_frames: Sequence[MapFrame], gt_frames: Sequence[MapFrame]
) -> list[tuple[MapFrame, MapFrame]]:
    """Pair frames 1:1 by frame id, in ground-truth order; mismatches raise
    with the offending ids listed."""
    pred_by_id = {f.frame_id: f for f in pred_frames}
    gt_by_id = {f.frame_id: f for f in gt_frames}
    if len(pred_by_id) != len(pred_frames) or len(gt_by_id) != len(gt_frames):
        raise ValueError("duplicate frame ids in input")
    missing_pred = sorted(set(gt_by_id) - set(pred_by_id))
    missing_gt = sorted(set(pred_by_id) - set(gt_by_id))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"missing predictions for: {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"missing ground truth for: {', '.join(missing_gt)}")
        raise ValueError("; ".join(parts))
    return [(pred_by_id[f.frame_id], f) for f in gt_frames]


def evaluate(
    pred_frames: Sequence[MapFrame],
    gt_frames: Sequence[MapFrame],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Evaluate predicted frames against ground truth frames paired by id.

    Classes with no labels anywhere are excluded from the mAP mean; the
    mAP is the mean over remaining classes of the mean over thresholds.
    """
    pairs = pair_frames(pred_frames, gt_frames)
    records: dict[FeatureClass, dict[float, list[tuple[float, bool]]]] = {
        cls: {tau: [] for tau in config.thresholds} for cls in config.classes
    }
    fn_count: dict[FeatureClass, dict[float, int]] = {
        cls: {tau: 0 for tau in config.thresholds} for cls in config.classes
    }
    n_gt: dict[FeatureClass, int] = {cls: 0 for cls in config.classes}
    for pred_frame, gt_frame in pairs:
        preds = [_densified(f, config) for f in _usable_predictions(pred_frame, config)]
        gts = [_densified(f, config) for f in gt_frame.features]
        for cls in config.classes:
            cls_preds = [f for f in preds if f.feature_class is cls]
            cls_gts = [f for f in gts if f.feature_class is cls]
            n_gt[cls] += len(cls_gts)
            for tau in config.thresholds:
                matches = match_predictions(cls_preds, cls_gts, tau)
                records[cls][tau].extend((c, True) for c in matches.tp_confidences)
                records[cls][tau].extend((c, False) for c in matches.fp_confidences)
                fn_count[cls][tau] += matches.fn
    ap: dict[FeatureClass, dict[float, float | None]] = {}
    class_mean: dict[FeatureClass, float | None] = {}
    for cls in config.classes:
        ap[cls] = {
            tau: average_precision(records[cls][tau], n_gt[cls]) for tau in config.thresholds
        }
        vals = [v for v in ap[cls].values() if v is not None]
        class_mean[cls] = float(np.mean(vals)) if vals else None
    present = [v for v in class_mean.values() if v is not None]
    mean_ap = float(np.mean(present)) if present else None
    counts = {}
    for tau in config.thresholds:
        tp = sum(sum(1 for _, flag in records[cls][tau] if flag) for cls in config.classes)
        fp = sum(sum(1 for _, flag in records[cls][tau] if not flag) for cls in config.classes)
        fn = sum(fn_count[cls][tau] for cls in config.classes)
        counts[tau] = (tp, fp, fn)
    return EvalReport(ap=ap, class_mean=class_mean, mean_ap=mean_ap, counts=counts, config=config)
