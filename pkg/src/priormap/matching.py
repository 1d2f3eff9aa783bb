"""Single-stage set-matching loss for vectorized map features.

The pairwise cost between a prediction and a label is the L1 distance over
control points, minimized over the label's symmetry group (identity for
directed polylines, reversal for undirected ones, all cyclic shifts of
both orientations for polygons). Class-specific matrices are masked by
label column so they partition cleanly, a focal classification cost and an
optional edge-direction penalty are blended in, and one Hungarian pass on
the combined matrix yields the optimal assignment whose matched entries
are summed directly. All tie-breaks (permutation argmin, assignment) are
deterministic, so results are stable across runs, platforms, and worker
counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import (
    DEFAULT_DIMS,
    REAL_CLASSES,
    FeatureClass,
    InvarianceClass,
    MapFrame,
    ModelDims,
    pad_to_fixed,
    resample_polyline,
)

#: Column order of class-score vectors; the no-object score sits last.
SCORE_CLASSES: tuple[FeatureClass, ...] = REAL_CLASSES + (FeatureClass.NO_OBJECT,)
_SCORE_INDEX = {c: i for i, c in enumerate(SCORE_CLASSES)}

_PROB_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Blend weights for the combined cost matrix.

    combined = class_weight * focal
             + point_weight * (point_cost + cosine_weight * edge_penalty)

    The edge-direction penalty is evaluated under the L1-minimizing
    permutation by default; with joint_cosine the permutation minimizes
    the positional and direction terms together.
    """

    class_weight: float = 2.0
    point_weight: float = 5.0
    cosine_weight: float = 0.02
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    joint_cosine: bool = False

    def __post_init__(self) -> None:
        for name in ("class_weight", "point_weight", "cosine_weight", "focal_alpha", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "LossWeights":
        rec = dict(raw)
        kwargs = {}
        for name in (
            "class_weight",
            "point_weight",
            "cosine_weight",
            "focal_alpha",
            "focal_gamma",
            "joint_cosine",
        ):
            if name in rec:
                kwargs[name] = rec.pop(name)
        if rec:
            raise ValueError(f"weights: unknown key(s): {', '.join(sorted(rec))}")
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Fixed-size prediction tensor: points (m, n, 2) and class-score rows
    over SCORE_CLASSES that each sum to one."""

    points: np.ndarray
    class_scores: np.ndarray

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        scores = np.ascontiguousarray(self.class_scores, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValueError(f"points must have shape (m, n, 2), got {pts.shape}")
        if scores.shape != (pts.shape[0], len(SCORE_CLASSES)):
            raise ValueError(
                f"class_scores must have shape ({pts.shape[0]}, {len(SCORE_CLASSES)})"
            )
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(scores)):
            raise ValueError("prediction tensors must be finite")
        if np.any(scores < 0) or np.any(scores > 1):
            raise ValueError("class scores must lie in [0, 1]")
        if not np.allclose(scores.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("class score rows must sum to 1")
        pts.flags.writeable = False
        scores.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "class_scores", scores)

    @property
    def m(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class LabelSet:
    """Fixed-size label tensor: points (m, n, 2) with per-row semantic and
    invariance classes; padded rows carry NO_OBJECT."""

    points: np.ndarray
    classes: tuple[FeatureClass, ...]
    invariances: tuple[InvarianceClass, ...]

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise ValueError(f"points must have shape (m, n, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("label points must be finite")
        if len(self.classes) != pts.shape[0] or len(self.invariances) != pts.shape[0]:
            raise ValueError("classes and invariances must have one entry per row")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "invariances", tuple(self.invariances))

    @property
    def m(self) -> int:
        return self.points.shape[0]


def _frame_points(frame: MapFrame, dims: ModelDims) -> list[np.ndarray]:
    pts = []
    for feat in frame.features:
        if feat.n_points == dims.n_points:
            pts.append(feat.points)
        else:
            closed = feat.invariance is InvarianceClass.POLYGON
            pts.append(resample_polyline(feat.points, dims.n_points, closed=closed))
    return pts


def label_set_from_frame(frame: MapFrame, dims: ModelDims = DEFAULT_DIMS) -> LabelSet:
    """Stack a frame's features into a padded label tensor."""
    resampled = _frame_points(frame, dims)
    padded = pad_to_fixed(
        [f.with_points(p) for f, p in zip(frame.features, resampled)], dims
    )
    return LabelSet(
        points=np.stack([f.points for f in padded]),
        classes=tuple(f.feature_class for f in padded),
        invariances=tuple(f.invariance for f in padded),
    )


def prediction_set_from_frame(frame: MapFrame, dims: ModelDims = DEFAULT_DIMS) -> PredictionSet:
    """Stack a predicted frame into a prediction tensor.

    A feature's score vector puts its confidence on its class and the
    remaining mass on no-object; padded slots score no-object outright.
    """
    resampled = _frame_points(frame, dims)
    padded = pad_to_fixed(
        [f.with_points(p) for f, p in zip(frame.features, resampled)], dims
    )
    scores = np.zeros((dims.m_pred, len(SCORE_CLASSES)), dtype=np.float64)
    for i, feat in enumerate(padded):
        if feat.feature_class is FeatureClass.NO_OBJECT:
            scores[i, _SCORE_INDEX[FeatureClass.NO_OBJECT]] = 1.0
        else:
            scores[i, _SCORE_INDEX[feat.feature_class]] = feat.confidence
            scores[i, _SCORE_INDEX[FeatureClass.NO_OBJECT]] = 1.0 - feat.confidence
    return PredictionSet(points=np.stack([f.points for f in padded]), class_scores=scores)


@dataclass(frozen=True)
class PermutationSet:
    """The valid point-order permutations for one invariance class, in
    canonical order (identity first, then reversal, then their shifts)."""

    invariance: InvarianceClass
    perms: np.ndarray  # (count, n_points) integer index rows

    @property
    def count(self) -> int:
        return self.perms.shape[0]


def valid_permutations(invariance: InvarianceClass, n_points: int) -> PermutationSet:
    """Enumerate the symmetry group of an invariance class.

    Directed polylines admit only the identity; undirected ones add the
    reversal; polygons admit every cyclic shift of both orientations
    (2 * n_points entries, deduplicated for n_points = 2).
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    ident = np.arange(n_points)
    if invariance is InvarianceClass.DIRECTED_POLYLINE:
        rows = [ident]
    elif invariance is InvarianceClass.UNDIRECTED_POLYLINE:
        rows = [ident, ident[::-1]]
    else:
        rows = [np.roll(ident, -s) for s in range(n_points)]
        rows += [np.roll(ident[::-1], -s) for s in range(n_points)]
    seen: set[tuple[int, ...]] = set()
    unique = []
    for row in rows:
        key = tuple(int(v) for v in row)
        if key not in seen:
            seen.add(key)
            unique.append(row)
    return PermutationSet(invariance=invariance, perms=np.asarray(unique, dtype=np.intp))


def _column_mask(labels: LabelSet, invariance: InvarianceClass) -> np.ndarray:
    return np.array(
        [
            inv is invariance and cls is not FeatureClass.NO_OBJECT
            for cls, inv in zip(labels.classes, labels.invariances)
        ],
        dtype=bool,
    )


def _l1_per_permutation(
    pred_points: np.ndarray, label_points: np.ndarray, perms: np.ndarray
) -> np.ndarray:
    """L1 point cost for every (permutation, prediction, label) triple."""
    permuted = np.moveaxis(pred_points[:, perms, :], 1, 0)  # (P, m, n, 2)
    diff = permuted[:, :, None, :, :] - label_points[None, None, :, :, :]
    return np.abs(diff).sum(axis=(3, 4))  # (P, m, m)


def _edge_penalty_for_perms(
    pred_points: np.ndarray, label_points: np.ndarray, perms: np.ndarray
) -> np.ndarray:
    """Mean (1 - cos) between consecutive edges, per permutation.

    Edge pairs where either edge has zero length contribute penalty 1.
    """
    permuted = np.moveaxis(pred_points[:, perms, :], 1, 0)  # (P, m, n, 2)
    pe = np.diff(permuted, axis=2)  # (P, m, n-1, 2)
    le = np.diff(label_points, axis=1)  # (m, n-1, 2)
    dot = np.einsum("pike,jke->pijk", pe, le)
    # sqrt of the squared-norm product keeps cos exactly +-1 for exactly
    # parallel or antiparallel edge pairs
    nsq_p = np.einsum("pike,pike->pik", pe, pe)
    nsq_l = np.einsum("jke,jke->jk", le, le)
    denom = np.sqrt(nsq_p[:, :, None, :] * nsq_l[None, None, :, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0.0, dot / denom, 0.0)
    return (1.0 - cos).mean(axis=3)  # (P, m, m)


def _class_costs(
    pred: PredictionSet,
    labels: LabelSet,
    invariance: InvarianceClass,
    joint_cosine_weight: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masked point cost, selected-permutation index, and column mask for
    one invariance class. The permutation argmin breaks ties toward the
    lowest canonical index; with a joint cosine weight the argmin runs on
    the blended positional-plus-direction objective."""
    if pred.points.shape != labels.points.shape:
        raise ValueError(
            f"shape mismatch: predictions {pred.points.shape} vs labels {labels.points.shape}"
        )
    perms = valid_permutations(invariance, pred.points.shape[1]).perms
    l1 = _l1_per_permutation(pred.points, labels.points, perms)
    objective = l1
    if joint_cosine_weight is not None and joint_cosine_weight != 0.0:
        objective = l1 + joint_cosine_weight * _edge_penalty_for_perms(
            pred.points, labels.points, perms
        )
    selected = objective.argmin(axis=0)  # first minimum wins ties
    cost = np.take_along_axis(l1, selected[None], axis=0)[0]
    mask = _column_mask(labels, invariance)
    cost = np.where(mask[None, :], cost, 0.0)
    return cost, selected, mask


def point_cost_matrix(
    pred: PredictionSet, labels: LabelSet, invariance: InvarianceClass
) -> np.ndarray:
    """Pairwise symmetry-minimized L1 cost for one invariance class; label
    columns of any other class (including no-object pads) are zero."""
    cost, _, _ = _class_costs(pred, labels, invariance)
    return cost


def point_cost_total(pred: PredictionSet, labels: LabelSet) -> np.ndarray:
    """Sum of the three class matrices. The column masks partition the
    label indices, so each column equals exactly one class matrix column."""
    total = np.zeros((pred.m, labels.m), dtype=np.float64)
    for invariance in InvarianceClass:
        total += point_cost_matrix(pred, labels, invariance)
    return total


def edge_direction_penalty(
    pred: PredictionSet, labels: LabelSet, joint_cosine_weight: float | None = None
) -> np.ndarray:
    """Pairwise mean (1 - cos) between consecutive prediction and label
    edges, evaluated under each pair's selected permutation; masked columns
    are zero and zero-length edges contribute penalty 1."""
    out = np.zeros((pred.m, labels.m), dtype=np.float64)
    perms_cache: dict[InvarianceClass, np.ndarray] = {}
    for invariance in InvarianceClass:
        _, selected, mask = _class_costs(pred, labels, invariance, joint_cosine_weight)
        if not mask.any():
            continue
        perms = perms_cache.setdefault(
            invariance, valid_permutations(invariance, pred.points.shape[1]).perms
        )
        penalty = _edge_penalty_for_perms(pred.points, labels.points, perms)
        chosen = np.take_along_axis(penalty, selected[None], axis=0)[0]
        out[:, mask] = chosen[:, mask]
    return out


def focal_cost_matrix(
    pred: PredictionSet, labels: LabelSet, alpha: float = 0.25, gamma: float = 2.0
) -> np.ndarray:
    """Pairwise focal matching cost of each prediction for each label's
    class (positive-minus-negative form); no-object columns use the
    no-object score. Probabilities are clamped away from 0 and 1."""
    cols = np.array([_SCORE_INDEX[c] for c in labels.classes], dtype=np.intp)
    p = pred.class_scores[:, cols]  # (m_pred, m_gt)
    p = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    positive = alpha * (1.0 - p) ** gamma * (-np.log(p))
    negative = (1.0 - alpha) * p**gamma * (-np.log(1.0 - p))
    return positive - negative


@dataclass(frozen=True, eq=False)
class LossMatrices:
    """All pairwise cost matrices feeding the assignment step."""

    point_by_class: Mapping[InvarianceClass, np.ndarray]
    point_total: np.ndarray
    focal: np.ndarray
    cosine: np.ndarray
    combined: np.ndarray


def combined_cost_matrix(
    pred: PredictionSet, labels: LabelSet, weights: LossWeights = LossWeights()
) -> LossMatrices:
    """Blend focal, positional, and edge-direction costs into the single
    matrix the Hungarian step minimizes; component matrices ride along for
    introspection."""
    joint = weights.cosine_weight if weights.joint_cosine else None
    by_class: dict[InvarianceClass, np.ndarray] = {}
    point_total = np.zeros((pred.m, labels.m), dtype=np.float64)
    for invariance in InvarianceClass:
        cost, _, _ = _class_costs(pred, labels, invariance, joint)
        by_class[invariance] = cost
        point_total += cost
    focal = focal_cost_matrix(pred, labels, weights.focal_alpha, weights.focal_gamma)
    cosine = edge_direction_penalty(pred, labels, joint)
    combined = weights.class_weight * focal + weights.point_weight * (
        point_total + weights.cosine_weight * cosine
    )
    return LossMatrices(
        point_by_class=by_class,
        point_total=point_total,
        focal=focal,
        cosine=cosine,
        combined=combined,
    )


@dataclass(frozen=True)
class MatchResult:
    """A perfect matching: assignment[i] is the label index matched to
    prediction i; total_loss is the sum of the matched cost entries."""

    assignment: tuple[int, ...]
    total_loss: float
    pair_losses: tuple[float, ...]


def _lexicographic_refine(cost: np.ndarray, base_cols: np.ndarray) -> np.ndarray:
    """Among all minimum-cost assignments, pick the lexicographically
    smallest assignment vector.

    Rows are fixed in order; for each row the smallest column admitting an
    optimal completion wins. Totals are compared with exactly rounded sums
    so equal-cost completions are recognized reliably.
    """
    m = cost.shape[0]
    optimum = math.fsum(cost[i, base_cols[i]] for i in range(m))
    current = list(base_cols)
    available = sorted(range(m))
    fixed_entries: list[float] = []
    for row in range(m):
        incumbent = current[row]
        for col in available:
            if col >= incumbent:
                break
            rest_rows = list(range(row + 1, m))
            rest_cols = [c for c in available if c != col]
            sub = cost[np.ix_(rest_rows, rest_cols)]
            rr, cc = linear_sum_assignment(sub)
            candidate = math.fsum(
                fixed_entries
                + [float(cost[row, col])]
                + [float(sub[a, b]) for a, b in zip(rr, cc)]
            )
            if candidate == optimum:
                incumbent = col
                for a, b in zip(rr, cc):
                    current[rest_rows[a]] = rest_cols[b]
                break
        current[row] = incumbent
        fixed_entries.append(float(cost[row, incumbent]))
        available.remove(incumbent)
    return np.asarray(current, dtype=np.intp)


def hungarian_assign(cost: np.ndarray) -> MatchResult:
    """Solve the square assignment problem for a minimum-cost perfect
    matching, deterministically tie-broken to the lexicographically
    smallest assignment vector."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(cost)
    assignment = _lexicographic_refine(cost, cols)
    matched = cost[np.arange(cost.shape[0]), assignment]
    return MatchResult(
        assignment=tuple(int(c) for c in assignment),
        total_loss=float(matched.sum()),
        pair_losses=tuple(float(v) for v in matched),
    )


@dataclass(frozen=True)
class MatchedLoss:
    """The single-stage objective value for one frame.

    Components are the raw matched sums of each cost matrix, so
    total = class_weight * classification
          + point_weight * (positional + cosine_weight * cosine).
    """

    assignment: tuple[int, ...]
    total: float
    pair_losses: tuple[float, ...]
    positional: float
    classification: float
    cosine: float


def matched_loss(
    pred: PredictionSet, labels: LabelSet, weights: LossWeights = LossWeights()
) -> MatchedLoss:
    """Build the combined matrix, find the optimal assignment, and sum the
    matched entries directly: the single-stage objective."""
    matrices = combined_cost_matrix(pred, labels, weights)
    result = hungarian_assign(matrices.combined)
    rows = np.arange(pred.m)
    cols = np.asarray(result.assignment, dtype=np.intp)
    return MatchedLoss(
        assignment=result.assignment,
        total=result.total_loss,
        pair_losses=result.pair_losses,
        positional=float(matrices.point_total[rows, cols].sum()),
        classification=float(matrices.focal[rows, cols].sum()),
        cosine=float(matrices.cosine[rows, cols].sum()),
    )
