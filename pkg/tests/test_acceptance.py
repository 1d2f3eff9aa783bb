"""Acceptance gate: one test per criterion, each printing a PASS line with
its measured quantities (run with -s to see them). Oracles here are
self-contained re-derivations, independent of the library internals."""
from __future__ import annotations

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import grid_world, line_feature, random_frame
from priormap import (
    DEFAULT_INVARIANCE,
    PerlinParams,
    Box,
    FeatureClass,
    InvarianceClass,
    LabelSet,
    LossWeights,
    MapFrame,
    MapVersion,
    MutationStream,
    Pose2D,
    PredictionSet,
    WarpField,
    apply_recipe,
    average_precision,
    build_scene_pair,
    change_regions,
    corrupt_class,
    diff_maps,
    drop_features,
    duplicate_features,
    evaluate,
    hungarian_assign,
    jitter_control_points,
    localization_noise,
    low_all_noise_recipe,
    matched_loss,
    mine_frames,
    perlin_warp,
    point_cost_total,
    recipe_to_dict,
    shift_features,
    stable_key,
    write_scenes,
)
from priormap.cli import main as cli_main
from priormap.matching import SCORE_CLASSES

REAL = tuple(c for c in SCORE_CLASSES if c is not FeatureClass.NO_OBJECT)


def _random_sets(rng: np.random.Generator, m: int, n: int):
    classes, invariances = [], []
    pts = np.zeros((m, n, 2))
    n_real = int(rng.integers(1, m + 1))
    real_rows = set(rng.choice(m, size=n_real, replace=False).tolist())
    for j in range(m):
        if j in real_rows:
            cls = REAL[int(rng.integers(len(REAL)))]
            classes.append(cls)
            invariances.append(DEFAULT_INVARIANCE[cls])
            pts[j] = rng.uniform(-10, 10, (n, 2))
        else:
            classes.append(FeatureClass.NO_OBJECT)
            invariances.append(InvarianceClass.DIRECTED_POLYLINE)
    labels = LabelSet(points=pts, classes=tuple(classes), invariances=tuple(invariances))
    scores = rng.uniform(0.05, 1.0, (m, len(SCORE_CLASSES)))
    scores /= scores.sum(axis=1, keepdims=True)
    pred = PredictionSet(points=rng.uniform(-10, 10, (m, n, 2)), class_scores=scores)
    return pred, labels


def _permutation_matrices(invariance: InvarianceClass, n: int) -> np.ndarray:
    """Explicit permutation matrices derived by filtering all n! orderings
    against the symmetry definition."""
    mats = []
    for seq in itertools.permutations(range(n)):
        if invariance is InvarianceClass.DIRECTED_POLYLINE:
            ok = seq == tuple(range(n))
        elif invariance is InvarianceClass.UNDIRECTED_POLYLINE:
            ok = seq in (tuple(range(n)), tuple(reversed(range(n))))
        else:
            steps = {(seq[k + 1] - seq[k]) % n for k in range(n - 1)}
            ok = steps in ({1}, {n - 1})
        if ok:
            mat = np.zeros((n, n))
            for k, s in enumerate(seq):
                mat[k, s] = 1.0
            mats.append(mat)
    return np.stack(mats)


def test_criterion_1_point_cost_oracle_equivalence():
    started = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    runs = 1000
    matrices_cache: dict[tuple[InvarianceClass, int], np.ndarray] = {}
    for _ in range(runs):
        m = int(rng.integers(2, 7))
        n = int(rng.integers(2, 7))
        pred, labels = _random_sets(rng, m, n)
        got = point_cost_total(pred, labels)
        want = np.zeros((m, m))
        for j in range(m):
            if labels.classes[j] is FeatureClass.NO_OBJECT:
                continue
            inv = labels.invariances[j]
            mats = matrices_cache.setdefault((inv, n), _permutation_matrices(inv, n))
            permuted = np.einsum("pab,mbc->pmac", mats, pred.points)
            costs = np.abs(permuted - labels.points[j][None, None]).sum(axis=(2, 3))
            want[:, j] = costs.min(axis=0)
        worst = max(worst, float(np.max(np.abs(got - want))))
        assert np.allclose(got, want, atol=1e-12)
    elapsed = time.time() - started
    assert elapsed < 10.0
    print(
        f"[criterion 1] PASS: point cost equals permutation-matrix enumeration on "
        f"{runs} instances (max |diff| {worst:.2e}, {elapsed:.1f}s < 10s)"
    )


def test_criterion_2_hungarian_optimality():
    started = time.time()
    rng = np.random.default_rng(7)
    runs = 1000
    perms_cache: dict[int, np.ndarray] = {}
    for _ in range(runs):
        m = int(rng.integers(2, 8))
        cost = rng.uniform(0.0, 10.0, (m, m))
        perms = perms_cache.setdefault(
            m, np.array(list(itertools.permutations(range(m))), dtype=np.intp)
        )
        optimum = float(cost[np.arange(m), perms].sum(axis=1).min())
        res = hungarian_assign(cost)
        assert res.total_loss == optimum
    elapsed = time.time() - started
    assert elapsed < 30.0
    print(
        f"[criterion 2] PASS: assignment total equals m!-enumeration optimum exactly "
        f"on {runs} matrices m<=7 ({elapsed:.1f}s < 30s)"
    )


def test_criterion_3_self_match_identity():
    rng = np.random.default_rng(31)
    runs = 100
    weights = LossWeights()
    for _ in range(runs):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(2, 7))
        _, labels = _random_sets(rng, m, n)
        scores = np.zeros((m, len(SCORE_CLASSES)))
        col_of = {c: k for k, c in enumerate(SCORE_CLASSES)}
        for j, cls in enumerate(labels.classes):
            scores[j, col_of[cls]] = 1.0
        pred = PredictionSet(points=labels.points.copy(), class_scores=scores)
        out = matched_loss(pred, labels, weights)
        assert out.positional == 0.0
        assert out.assignment == tuple(range(m))
    print(
        f"[criterion 3] PASS: self-match has exactly zero positional loss and "
        f"identity assignment on {runs} random label sets"
    )


def test_criterion_4_mask_partition():
    rng = np.random.default_rng(41)
    runs = 200
    from priormap import point_cost_matrix

    for _ in range(runs):
        m = int(rng.integers(2, 8))
        n = int(rng.integers(2, 6))
        pred, labels = _random_sets(rng, m, n)
        total = point_cost_total(pred, labels)
        by_class = {
            inv: point_cost_matrix(pred, labels, inv) for inv in InvarianceClass
        }
        for j in range(m):
            if labels.classes[j] is FeatureClass.NO_OBJECT:
                assert not total[:, j].any()
                for mat in by_class.values():
                    assert not mat[:, j].any()
            else:
                inv = labels.invariances[j]
                np.testing.assert_array_equal(total[:, j], by_class[inv][:, j])
    print(
        f"[criterion 4] PASS: class matrices partition label columns and no-object "
        f"columns are identically zero on {runs} instances"
    )


def test_criterion_5_mutation_identity_and_statistics():
    rng = np.random.default_rng(51)
    frame = random_frame(rng, "ident", n_features=6)
    stream = MutationStream(1, stable_key("ident"), 0)
    assert drop_features(frame, 0.0, stream) is frame
    assert duplicate_features(frame, 0.0, 50, stream) is frame
    assert corrupt_class(frame, 0.0, stream) is frame
    assert jitter_control_points(frame, 0.0, stream) is frame
    assert shift_features(frame, 0.0, stream) is frame
    assert localization_noise(frame, 0.0, 0.0, stream) is frame
    assert perlin_warp(frame, 0.0, PerlinParams(), stream) is frame

    n = 10_000
    big = MapFrame(
        "stats",
        Pose2D(0, 0, 0),
        90.0,
        tuple(line_feature(y=float(rng.uniform(-40, 40)), n=4) for _ in range(n)),
    )

    def bound(p):
        return 4.0 * math.sqrt(p * (1.0 - p) / n)

    p_drop = 0.4
    kept = len(drop_features(big, p_drop, MutationStream(11, 0, 0)).features)
    drop_rate = 1.0 - kept / n
    assert abs(drop_rate - p_drop) <= bound(p_drop)

    p_dup = 0.3
    grown = len(duplicate_features(big, p_dup, 3 * n, MutationStream(12, 0, 0)).features)
    dup_rate = (grown - n) / n
    assert abs(dup_rate - p_dup) <= bound(p_dup)

    p_cls = 0.5
    corrupted = corrupt_class(big, p_cls, MutationStream(13, 0, 0))
    cls_rate = (
        sum(1 for a, b in zip(big.features, corrupted.features)
            if a.feature_class is not b.feature_class) / n
    )
    assert abs(cls_rate - p_cls) <= bound(p_cls)

    sigma = 0.5
    mid = MapFrame(
        "jit",
        Pose2D(0, 0, 0),
        90.0,
        tuple(line_feature(y=float(rng.uniform(-40, 40)), n=20) for _ in range(5000)),
    )
    jittered = jitter_control_points(mid, sigma, MutationStream(14, 0, 0))
    deltas = np.concatenate(
        [a.points - b.points for a, b in zip(jittered.features, mid.features)]
    )
    jitter_std = float(deltas.std())
    assert abs(jitter_std - sigma) <= 0.01 * sigma
    print(
        "[criterion 5] PASS: zero-parameter mutations are bit-identical; rates "
        f"drop={drop_rate:.4f} dup={dup_rate:.4f} class={cls_rate:.4f} within 4-sigma "
        f"of p; jitter std {jitter_std:.4f} within 1% of {sigma}"
    )


def test_criterion_6_warp_field_contract():
    started = time.time()
    params = PerlinParams()
    sigma = 1.0
    half = 45.0
    axis = np.linspace(-half, half, 128)
    mx, my = np.meshgrid(axis, axis)
    grid = np.column_stack([mx.ravel(), my.ravel()])
    for seed in range(5):
        disp = WarpField(params, sigma, seed)(grid)
        assert np.abs(disp.mean(axis=0)).max() < 1e-6 * sigma
        assert np.abs(disp.std(axis=0) - sigma).max() < 1e-3 * sigma

    probe = np.array([[0.0, 0.0], [0.1 * params.grid_scale, 0.0]])
    seeds = 1000
    samples = np.empty((seeds, 2))
    for seed in range(seeds):
        samples[seed] = WarpField(params, sigma, seed)(probe)[:, 0]
    corr = float(np.corrcoef(samples[:, 0], samples[:, 1])[0, 1])
    elapsed = time.time() - started
    assert corr > 0.9
    assert elapsed < 60.0
    print(
        f"[criterion 6] PASS: warp grid mean/std within contract; correlation at "
        f"0.1*grid_scale = {corr:.4f} > 0.9 over {seeds} seeds ({elapsed:.1f}s < 60s)"
    )


def test_criterion_7_cli_determinism(tmp_path):
    rng = np.random.default_rng(71)
    frames = [random_frame(rng, f"frame_{i}", n_features=6) for i in range(6)]
    scenes = tmp_path / "scenes.jsonl"
    write_scenes(frames, scenes)
    recipe = tmp_path / "recipe.json"
    recipe.write_text(json.dumps(recipe_to_dict(low_all_noise_recipe(31337))))
    outputs = []
    for tag, jobs in (("a", 1), ("b", 1), ("c", 8)):
        out = tmp_path / f"out_{tag}.jsonl"
        rc = cli_main(
            ["perturb", "--scenes", str(scenes), "--recipe", str(recipe),
             "--out", str(out), "--jobs", str(jobs)]
        )
        assert rc == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
    print(
        "[criterion 7] PASS: perturb output byte-identical across repeat runs and "
        "--jobs in {1, 8}"
    )


def test_criterion_8_evaluation_sanity():
    rng = np.random.default_rng(81)
    gts = [random_frame(rng, f"f{i}", n_features=5) for i in range(3)]
    assert evaluate(gts, gts).mean_ap == 1.0

    spread = [
        MapFrame(
            f"s{i}",
            Pose2D(0, 0, 0),
            90.0,
            tuple(line_feature(y=-30.0 + 15.0 * k, cls=cls)
                  for k, cls in enumerate(REAL)),
        )
        for i in range(3)
    ]
    shifted = [
        f.with_features([g.with_points(g.points + [0.0, 5.0]) for g in f.features])
        for f in spread
    ]
    assert evaluate(shifted, spread).mean_ap == 0.0

    fixture_ap = average_precision([(1.0, True), (0.9, False), (0.8, True)], 2)
    assert fixture_ap == pytest.approx(0.83333333333333, abs=1e-9)
    print(
        f"[criterion 8] PASS: perfect mAP 1.0, far-shifted mAP 0.0, "
        f"hand-computed AP fixture {fixture_ap:.10f}"
    )


def test_criterion_9_diff_mine_round_trip():
    world = grid_world(n_blocks=3)
    old = MapVersion.build("v2020", world)
    # one added, one removed, one shifted 2 m
    added_feat = line_feature(y=0.0, x0=150.0, x1=200.0)
    added_feat = added_feat.with_points(added_feat.points + [0.0, 60.0])
    removed_index = next(
        i for i, f in enumerate(world) if f.feature_class is FeatureClass.DRIVEWAY
    )
    shifted_index = next(
        i for i, f in enumerate(world)
        if f.feature_class is FeatureClass.ROAD_BOUNDARY and f.bounds()[1] > 200.0
    )
    new_feats = []
    for i, f in enumerate(world):
        if i == removed_index:
            continue
        if i == shifted_index:
            f = f.with_points(f.points + [0.0, 2.0])
        new_feats.append(f)
    new_feats.append(added_feat)
    new = MapVersion.build("v2023", new_feats)

    report = diff_maps(old, new, modify_tol=0.25)
    assert len(report.added) == 1
    assert len(report.removed) == 1
    assert len(report.modified) == 1
    assert report.modified[0][2] == pytest.approx(2.0, abs=1e-9)

    regions = change_regions(report, buffer=20.0)
    assert regions
    # drive straight through the first change region
    y_cross = (regions[0].min_y + regions[0].max_y) / 2.0
    x_start = regions[0].min_x - 300.0
    trajectory = [
        (float(t), Pose2D(x_start + 5.0 * float(t), y_cross, 0.0)) for t in range(160)
    ]
    windows = mine_frames(trajectory, regions, fov_side=90.0, window=30.0)
    assert windows
    for win in windows:
        _, pose = trajectory[win.anchor_index]
        fov = Box(pose.x - 45.0, pose.y - 45.0, pose.x + 45.0, pose.y + 45.0)
        assert any(fov.intersects(r) for r in regions)
    print(
        f"[criterion 9] PASS: diff recovered exactly 1 added / 1 removed / 1 modified "
        f"(chamfer {report.modified[0][2]:.3f} m); {len(windows)} mined window(s), all "
        f"anchor FOVs intersect change regions"
    )


def test_criterion_10_pass_through_sim_gap():
    # Current-map ground truth plus a prior that is out of date in a few
    # localized places (driveway rebuilds and one short repainted lane);
    # the pass-through predictor copies the prior.
    base = grid_world(n_blocks=8, block=60.0)

    def ring_at(cx, cy):
        for i, f in enumerate(base):
            if f.feature_class is FeatureClass.DRIVEWAY:
                b = f.bounds()
                if abs((b[0] + b[2]) / 2 - cx) < 1 and abs((b[1] + b[3]) / 2 - cy) < 1:
                    return i
        raise AssertionError("fixture ring not found")

    removed = {ring_at(30.0, 30.0), ring_at(150.0, 150.0)}
    shifted = {ring_at(270.0, 270.0)}
    # gone from the world after the old survey: prior still carries them
    new_feats = [f for i, f in enumerate(base) if i not in removed]
    old_feats = [
        f.with_points(f.points + [2.5, 0.0]) if i in shifted else f
        for i, f in enumerate(base)
    ]
    extra_old = line_feature(y=90.0, x0=210.0, x1=250.0, n=12)
    old_feats.append(extra_old)  # repainted away in the current map
    old = MapVersion.build("v2020", old_feats)
    new = MapVersion.build("v2023", new_feats)

    report = diff_maps(old, new, modify_tol=0.25)
    regions = change_regions(report, buffer=20.0)
    assert regions

    def pass_through(pairs):
        priors = [p.prior for p in pairs]
        gts = [p.ground_truth for p in pairs]
        return evaluate(priors, gts).mean_ap

    def region_center_pose(region):
        return Pose2D(
            min(max((region.min_x + region.max_x) / 2.0, 0.0), 480.0),
            min(max((region.min_y + region.max_y) / 2.0, 0.0), 480.0),
            0.0,
        )

    change_pairs = [
        build_scene_pair(old, new, region_center_pose(r), frame_id=f"change_{k}")
        for k, r in enumerate(regions)
    ]
    quiet_poses = [Pose2D(400.0, 400.0, 0.0), Pose2D(420.0, 60.0, 0.2),
                   Pose2D(60.0, 420.0, -0.4)]
    for pose in quiet_poses:
        fov = Box(pose.x - 64.0, pose.y - 64.0, pose.x + 64.0, pose.y + 64.0)
        assert not any(fov.intersects(r) for r in regions)
    unchanged_pairs = [
        build_scene_pair(old, new, pose, frame_id=f"quiet_{k}")
        for k, pose in enumerate(quiet_poses)
    ]

    map_changed = pass_through(change_pairs)
    map_unchanged = pass_through(unchanged_pairs)

    # synthetic low-noise pairs: ground truth frames with a perturbed prior
    recipe = low_all_noise_recipe(2027)
    sim_poses = [Pose2D(80.0 + 80.0 * k, 80.0 + 80.0 * j, 0.0)
                 for k in range(3) for j in range(3)]
    sim_gts = [
        build_scene_pair(new, new, pose, frame_id=f"sim_{k}").ground_truth
        for k, pose in enumerate(sim_poses)
    ]
    sim_priors = [apply_recipe(f, recipe) for f in sim_gts]
    map_sim = evaluate(sim_priors, sim_gts).mean_ap

    assert map_unchanged >= 0.99
    assert map_changed < map_unchanged
    assert map_changed >= 0.5  # most features in a change scene still match
    print(
        "[criterion 10] PASS: pass-through mAP "
        f"unchanged={map_unchanged:.4f} > changed={map_changed:.4f} "
        f"(low-all-noise synthetic={map_sim:.4f}); gap is directionally consistent "
        "with real changes being harder than clean priors"
    )
