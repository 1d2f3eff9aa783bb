"""Batch command-line front end.

One binary, six subcommands: perturb scenes with a recipe, score
predictions against labels with the set-matching loss, evaluate Chamfer
mAP, diff two map versions, mine change scenes along a trajectory, and
render scenes to SVG. Every command is a pure function of its inputs plus
configuration, emits records in input order regardless of worker count,
and writes a run manifest next to its primary output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .changes import MapVersion, build_scene_pair, change_regions, diff_maps, mine_frames
from .evaluation import EvalConfig, evaluate, pair_frames
from .matching import (
    LossWeights,
    label_set_from_frame,
    matched_loss,
    prediction_set_from_frame,
)
from .model import DEFAULT_DIMS, ModelDims
from .perturb import apply_recipe, recipe_from_dict, recipe_to_dict
from .render import write_frame_svg
from .scene_io import (
    SceneFormatError,
    load_json_config,
    read_map_version,
    read_scenes,
    read_trajectory,
    write_scenes,
)


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    master_seed: int | None
    input_digests: dict[str, str]
    tool_version: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "input_digests": self.input_digests,
            "tool_version": self.tool_version,
            "wall_time_s": self.wall_time_s,
        }


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_manifest(
    out_path: Path,
    command: str,
    config: dict,
    inputs: Sequence[Path],
    master_seed: int | None,
    started: float,
) -> None:
    manifest = RunManifest(
        command=command,
        config_hash=_config_hash(config),
        master_seed=master_seed,
        input_digests={str(p): _sha256_file(p) for p in inputs},
        tool_version=__version__,
        wall_time_s=time.time() - started,
    )
    path = out_path.with_name(out_path.name + ".manifest.json")
    path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Apply fn over items preserving input order; fn must be pure."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _dims_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-points", type=int, default=DEFAULT_DIMS.n_points,
                        help="control points per feature")
    parser.add_argument("--m-max", type=int, default=DEFAULT_DIMS.m_gt,
                        help="prediction/label slot count")


def _dims_from(args: argparse.Namespace) -> ModelDims:
    return ModelDims(m_pred=args.m_max, m_gt=args.m_max, n_points=args.n_points)


def cmd_perturb(args: argparse.Namespace) -> int:
    started = time.time()
    recipe_raw = load_json_config(args.recipe)
    recipe = recipe_from_dict(recipe_raw)
    if args.seed is not None:
        recipe = replace(recipe, master_seed=args.seed)
    dims = _dims_from(args)
    frames = read_scenes(args.scenes)
    out_frames = _parallel_map(lambda f: apply_recipe(f, recipe, dims), frames, args.jobs)
    out_path = Path(args.out)
    write_scenes(out_frames, out_path)
    _write_manifest(
        out_path,
        "perturb",
        {"recipe": recipe_to_dict(recipe), "n_points": dims.n_points, "m_max": dims.m_gt},
        [Path(args.scenes), Path(args.recipe)],
        recipe.master_seed,
        started,
    )
    print(f"perturbed {len(out_frames)} frame(s) -> {out_path}")
    return 0


def cmd_loss(args: argparse.Namespace) -> int:
    started = time.time()
    weights = (
        LossWeights.from_dict(load_json_config(args.weights))
        if args.weights
        else LossWeights()
    )
    dims = _dims_from(args)
    preds = read_scenes(args.pred)
    labels = read_scenes(args.labels)
    pairs = pair_frames(preds, labels)

    def score(pair):
        pred_frame, label_frame = pair
        loss = matched_loss(
            prediction_set_from_frame(pred_frame, dims),
            label_set_from_frame(label_frame, dims),
            weights,
        )
        return {
            "frame_id": label_frame.frame_id,
            "total": loss.total,
            "positional": loss.positional,
            "classification": loss.classification,
            "cosine": loss.cosine,
            "assignment": list(loss.assignment),
            "pair_losses": list(loss.pair_losses),
        }

    rows = _parallel_map(score, pairs, args.jobs)
    aggregate = {
        "frames": len(rows),
        "total": sum(r["total"] for r in rows),
        "positional": sum(r["positional"] for r in rows),
        "classification": sum(r["classification"] for r in rows),
        "cosine": sum(r["cosine"] for r in rows),
    }
    out_path = Path(args.out)
    _write_json(out_path, {"aggregate": aggregate, "per_frame": rows})
    _write_manifest(
        out_path,
        "loss",
        {
            "weights": {
                "class_weight": weights.class_weight,
                "point_weight": weights.point_weight,
                "cosine_weight": weights.cosine_weight,
                "focal_alpha": weights.focal_alpha,
                "focal_gamma": weights.focal_gamma,
                "joint_cosine": weights.joint_cosine,
            },
            "n_points": dims.n_points,
            "m_max": dims.m_gt,
        },
        [Path(args.pred), Path(args.labels)],
        None,
        started,
    )
    print(f"loss over {len(rows)} frame(s): total={aggregate['total']:.6f} "
          f"positional={aggregate['positional']:.6f}")
    return 0


def _print_eval_table(report) -> None:
    cfg = report.config
    taus = cfg.thresholds
    header = "class".ljust(16) + "".join(f"AP@{t:g}".rjust(10) for t in taus) + "mean".rjust(10)
    print(header)
    for cls in cfg.classes:
        cells = "".join(
            f"{report.ap[cls][t]:.4f}".rjust(10) if report.ap[cls][t] is not None else "-".rjust(10)
            for t in taus
        )
        mean = report.class_mean[cls]
        mean_s = f"{mean:.4f}" if mean is not None else "-"
        print(cls.value.ljust(16) + cells + mean_s.rjust(10))
    map_s = f"{report.mean_ap:.4f}" if report.mean_ap is not None else "-"
    print("mAP".ljust(16) + map_s.rjust(10 * (len(taus) + 1)))


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.time()
    config = EvalConfig.from_dict(load_json_config(args.config)) if args.config else EvalConfig()
    if args.thresholds:
        taus = tuple(float(t) for t in args.thresholds.split(","))
        config = EvalConfig(
            thresholds=taus,
            classes=config.classes,
            score_floor=config.score_floor,
            densify=config.densify,
        )
    preds = read_scenes(args.pred)
    gts = read_scenes(args.gt)
    report = evaluate(preds, gts, config)
    out_path = Path(args.out)
    _write_json(out_path, report.to_dict())
    if args.render_dir:
        render_dir = Path(args.render_dir)
        render_dir.mkdir(parents=True, exist_ok=True)
        for pred_frame, gt_frame in pair_frames(preds, gts):
            write_frame_svg(
                render_dir / f"{gt_frame.frame_id}.svg",
                [("ground_truth", gt_frame), ("prediction", pred_frame)],
            )
    _write_manifest(
        out_path,
        "eval",
        {
            "thresholds": list(config.thresholds),
            "classes": [c.value for c in config.classes],
            "score_floor": config.score_floor,
            "densify": config.densify,
        },
        [Path(args.pred), Path(args.gt)],
        None,
        started,
    )
    _print_eval_table(report)
    return 0


def _load_version(path: str) -> MapVersion:
    version_id, features, ids = read_map_version(path)
    return MapVersion.build(version_id, features, ids)


def cmd_diff(args: argparse.Namespace) -> int:
    started = time.time()
    old = _load_version(args.old)
    new = _load_version(args.new)
    report = diff_maps(old, new, modify_tol=args.modify_tol, max_match_dist=args.max_match_dist)
    report = replace(report, regions=change_regions(report, buffer=args.buffer))
    out_path = Path(args.out)
    _write_json(out_path, report.to_dict())
    _write_manifest(
        out_path,
        "diff",
        {"modify_tol": args.modify_tol, "buffer": args.buffer,
         "max_match_dist": args.max_match_dist},
        [Path(args.old), Path(args.new)],
        None,
        started,
    )
    print(
        f"diff {old.version_id} -> {new.version_id}: "
        f"{len(report.added)} added, {len(report.removed)} removed, "
        f"{len(report.modified)} modified, {len(report.regions)} region(s)"
    )
    return 0


def cmd_mine(args: argparse.Namespace) -> int:
    started = time.time()
    old = _load_version(args.old)
    new = _load_version(args.new)
    trajectory = read_trajectory(args.trajectory)
    report = diff_maps(old, new, modify_tol=args.modify_tol, max_match_dist=args.max_match_dist)
    regions = change_regions(report, buffer=args.buffer)
    windows = mine_frames(trajectory, regions, fov_side=args.fov, window=args.window)
    priors = []
    gts = []
    window_rows = []
    skipped = 0
    for k, win in enumerate(windows):
        _, pose = trajectory[win.anchor_index]
        # An FOV can touch a change region from just off the map; such
        # anchors have no usable crop, so the window is dropped.
        if not (old.extent.contains_point(pose.x, pose.y)
                and new.extent.contains_point(pose.x, pose.y)):
            skipped += 1
            continue
        pair = build_scene_pair(
            old, new, pose, fov_side=args.fov, n_points=args.n_points,
            frame_id=f"window_{k:04d}",
        )
        priors.append(pair.prior)
        gts.append(pair.ground_truth)
        window_rows.append(
            {
                "frame_id": pair.frame_id,
                "anchor_index": win.anchor_index,
                "t_start": win.t_start,
                "t_end": win.t_end,
                "poses": len(win.pose_indices),
            }
        )
    write_scenes(priors, args.out_prior)
    write_scenes(gts, args.out_gt)
    out_path = Path(args.out_prior)
    if args.report:
        _write_json(Path(args.report), {"windows": window_rows})
    _write_manifest(
        out_path,
        "mine",
        {
            "modify_tol": args.modify_tol,
            "buffer": args.buffer,
            "max_match_dist": args.max_match_dist,
            "fov": args.fov,
            "window": args.window,
            "n_points": args.n_points,
        },
        [Path(args.old), Path(args.new), Path(args.trajectory)],
        None,
        started,
    )
    note = f" ({skipped} off-map window(s) skipped)" if skipped else ""
    print(f"mined {len(priors)} window(s) -> {args.out_prior}, {args.out_gt}{note}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    started = time.time()
    frames = read_scenes(args.scenes)
    overlay = read_scenes(args.overlay) if args.overlay else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if overlay is not None:
        by_id = {f.frame_id: f for f in overlay}
        missing = sorted(f.frame_id for f in frames if f.frame_id not in by_id)
        if missing:
            raise ValueError(f"overlay is missing frame(s): {', '.join(missing)}")
    for frame in frames:
        layers = [("ground_truth", frame)]
        if overlay is not None:
            layers.append(("prediction", by_id[frame.frame_id]))
        write_frame_svg(out_dir / f"{frame.frame_id}.svg", layers)
    _write_manifest(
        out_dir / "render",
        "render",
        {"overlay": bool(args.overlay)},
        [Path(args.scenes)] + ([Path(args.overlay)] if args.overlay else []),
        None,
        started,
    )
    print(f"rendered {len(frames)} frame(s) -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priormap",
        description="Vectorized map prior toolkit: perturb, score, evaluate, diff, mine, render.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="apply a mutation recipe to every frame")
    p.add_argument("--scenes", required=True, help="input scene file")
    p.add_argument("--recipe", required=True, help="mutation recipe JSON")
    p.add_argument("--out", required=True, help="output scene file")
    p.add_argument("--seed", type=int, default=None, help="override the recipe master seed")
    p.add_argument("--jobs", type=int, default=1, help="worker threads over frames")
    _dims_args(p)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("loss", help="set-matching loss of predictions against labels")
    p.add_argument("--pred", required=True, help="prediction scene file")
    p.add_argument("--labels", required=True, help="label scene file")
    p.add_argument("--weights", default=None, help="loss weights JSON")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--jobs", type=int, default=1)
    _dims_args(p)
    p.set_defaults(fn=cmd_loss)

    p = sub.add_parser("eval", help="Chamfer-distance mAP of predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction scene file")
    p.add_argument("--gt", required=True, help="ground truth scene file")
    p.add_argument("--config", default=None, help="eval config JSON")
    p.add_argument("--thresholds", default=None,
                   help="comma-separated Chamfer thresholds in meters")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--render-dir", default=None, help="emit per-frame SVG overlays here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diff", help="diff two map versions into a change report")
    p.add_argument("--old", required=True, help="old map version file")
    p.add_argument("--new", required=True, help="new map version file")
    p.add_argument("--modify-tol", type=float, default=0.25,
                   help="Chamfer tolerance below which a matched pair is unchanged")
    p.add_argument("--max-match-dist", type=float, default=10.0,
                   help="Chamfer gate above which features are add/remove, not modified")
    p.add_argument("--buffer", type=float, default=20.0, help="region buffer in meters")
    p.add_argument("--out", required=True, help="output change report JSON")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("mine", help="mine change-intersecting windows into scene pairs")
    p.add_argument("--old", required=True)
    p.add_argument("--new", required=True)
    p.add_argument("--trajectory", required=True, help="timestamped pose file")
    p.add_argument("--modify-tol", type=float, default=0.25)
    p.add_argument("--max-match-dist", type=float, default=10.0)
    p.add_argument("--buffer", type=float, default=20.0)
    p.add_argument("--fov", type=float, default=90.0, help="field-of-view side in meters")
    p.add_argument("--window", type=float, default=30.0, help="window duration in seconds")
    p.add_argument("--n-points", type=int, default=DEFAULT_DIMS.n_points)
    p.add_argument("--out-prior", required=True, help="output prior scene file")
    p.add_argument("--out-gt", required=True, help="output ground-truth scene file")
    p.add_argument("--report", default=None, help="optional windows report JSON")
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("render", help="render scenes (optionally overlaid) to SVG")
    p.add_argument("--scenes", required=True)
    p.add_argument("--overlay", default=None, help="second scene file drawn dashed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SceneFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
