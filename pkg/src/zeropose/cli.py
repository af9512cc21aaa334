"""Command-line interface.

Subcommands:
    pose      batch 6DoF estimation over a detection list -> results CSV
    eval      score a results CSV against ground truth -> report + figures
    render    rasterize depth/NOCS/mask maps for a pose list
    selftest  synthetic end-to-end check (no external data needed)
    match     template matching only, reports Acc15 against ground truth

The data root for relative paths can be set via ZEROPOSE_DATA_ROOT.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bop
from .config import PipelineConfig, load_config
from .errors import ZeroposeError
from .geometry import CameraIntrinsics, Pose
from .mesh import parse_ply
from .metrics import (
    VSD_TAU_FRACTIONS,
    ErrorRecord,
    acc15,
    ar_score,
    e_mspd,
    e_mssd,
    load_models_info,
    miss_record,
    rotation_error,
    subsample_vertices,
    vsd_errors,
)
from .pose_solver import estimate_pose
from .raster import depth_to_distance, rasterize
from .template_match import match_template
from .tensorio import read_depth, write_depth, write_mask, write_nocs

logger = logging.getLogger("zeropose")


def _data_root() -> Path:
    return Path(os.environ.get("ZEROPOSE_DATA_ROOT", "."))


def _resolve(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _data_root() / p


def _load_pipeline_config(args) -> PipelineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(_resolve(args.config), overrides)
    return PipelineConfig(**overrides)


def _scene_paths(scenes_dir: Path):
    for scene_dir in sorted(Path(scenes_dir).iterdir()):
        if scene_dir.is_dir() and (scene_dir / "scene_camera.json").exists():
            yield int(scene_dir.name), scene_dir


def _load_mesh_for(models_dir: Path, obj_id: int):
    return parse_ply(Path(models_dir) / f"obj_{obj_id:06d}.ply")


# ---------------------------------------------------------------------------
# pose
# ---------------------------------------------------------------------------


def cmd_pose(args) -> int:
    config = _load_pipeline_config(args)
    detections = bop.read_detections(_resolve(args.detections))
    scenes_dir = _resolve(args.scenes)
    cameras = {}
    for scene_id, scene_dir in _scene_paths(scenes_dir):
        cameras[scene_id] = bop.read_scene_camera(scene_dir / "scene_camera.json")
    templates_cache = {}
    mesh_cache = {}

    def templates_for(obj_id: int):
        if obj_id not in templates_cache:
            templates_cache[obj_id] = bop.load_templates(
                _resolve(args.templates), obj_id, config.layers
            )
            n = len(templates_cache[obj_id])
            if n != config.n_templates:
                logger.warning(
                    "object %d has %d templates, config expects %d", obj_id, n, config.n_templates
                )
        return templates_cache[obj_id]

    def mesh_for(obj_id: int):
        if obj_id not in mesh_cache:
            mesh_cache[obj_id] = _load_mesh_for(_resolve(args.models), obj_id)
        return mesh_cache[obj_id]

    def process(det):
        try:
            camera = cameras[det.scene_id][det.image_id]
            query = bop.load_query_crop(det, _resolve(args.features), camera, config)
            est = estimate_pose(query, templates_for(det.object_id), mesh_for(det.object_id), config)
            return bop.ResultRow(
                scene_id=det.scene_id,
                image_id=det.image_id,
                object_id=det.object_id,
                score=det.score,
                pose=est.pose,
                time=est.elapsed if config.record_time else -1.0,
            )
        except (ZeroposeError, KeyError, FileNotFoundError) as exc:
            logger.error(
                "detection %s skipped: %s: %s", det.crop_id, type(exc).__name__, exc
            )
            return None

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(process, detections))
    else:
        results = [process(d) for d in detections]
    rows = [r for r in results if r is not None]
    out_csv = _resolve(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    bop.write_results_csv(rows, out_csv)
    logger.info("wrote %d/%d results to %s", len(rows), len(detections), out_csv)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _scene_distance_map(scene_dir: Path, image_id: int, depth_scale: float, k, mesh, gt_pose):
    depth_path = scene_dir / "depth" / f"{image_id:06d}.png"
    if depth_path.exists():
        return depth_to_distance(read_depth(depth_path, depth_scale), k)
    # no captured depth: treat the ground-truth render as the scene surface
    return rasterize(mesh, gt_pose, k).distance


def cmd_eval(args) -> int:
    from . import report as rpt

    rows = bop.read_results_csv(_resolve(args.results))
    predictions = {(r.scene_id, r.image_id, r.object_id): r for r in rows}
    models = load_models_info(_resolve(args.models) / "models_info.json")
    meshes = {obj: _load_mesh_for(_resolve(args.models), obj) for obj in models}
    vertices = {
        obj: subsample_vertices(mesh.vertices, args.vertex_cap) for obj, mesh in meshes.items()
    }

    records = []
    matched = []
    rotation_pairs = []
    image_width = None
    seen = set()
    for scene_id, scene_dir in _scene_paths(_resolve(args.scenes)):
        cameras = bop.read_scene_camera(scene_dir / "scene_camera.json")
        gt = bop.read_scene_gt(scene_dir / "scene_gt.json")
        for image_id, annotations in gt.items():
            camera = cameras[image_id]
            k = camera.intrinsics
            image_width = k.width if image_width is None else image_width
            for obj_id, gt_pose in annotations:
                key = (scene_id, image_id, obj_id)
                seen.add(key)
                pred = predictions.get(key)
                if pred is None:
                    records.append(miss_record(scene_id, image_id, obj_id))
                    continue
                info = models[obj_id]
                taus = [f * info.diameter for f in VSD_TAU_FRACTIONS]
                scene_distance = _scene_distance_map(
                    scene_dir, image_id, camera.depth_scale, k, meshes[obj_id], gt_pose
                )
                vsd, _ = vsd_errors(
                    pred.pose, gt_pose, meshes[obj_id], k, scene_distance, taus
                )
                records.append(
                    ErrorRecord(
                        scene_id=scene_id,
                        image_id=image_id,
                        object_id=obj_id,
                        e_vsd=tuple(vsd),
                        e_mssd=e_mssd(pred.pose, gt_pose, vertices[obj_id], info.symmetries),
                        e_mspd=e_mspd(
                            pred.pose, gt_pose, vertices[obj_id], info.symmetries, k
                        ),
                    )
                )
                matched.append(pred)
                rotation_pairs.append((gt_pose.rotation, pred.pose.rotation))

    unmatched = [key for key in predictions if key not in seen]
    for key in unmatched:
        logger.warning("prediction without ground truth: scene %s im %s obj %s", *key)
    if not records:
        logger.error("no ground-truth targets found")
        return 1

    diameters = {obj: info.diameter for obj, info in models.items()}
    recall = ar_score(records, diameters, image_width=image_width)
    acc = acc15(rotation_pairs) if rotation_pairs else 0.0
    mean_rot = (
        float(np.mean([rotation_error(a, b) for a, b in rotation_pairs]))
        if rotation_pairs
        else float("inf")
    )

    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        "pose evaluation report",
        f"targets: {len(records)}",
        f"predictions_matched: {len(matched)}",
        f"predictions_unmatched: {len(unmatched)}",
        rpt.format_recall_block(recall, acc15_value=acc, mean_rot_err=mean_rot),
        "",
        "per-object AR:",
    ]
    for obj, ar in sorted(recall.per_object.items()):
        lines.append(f"  obj {obj}: {ar:.6f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    rpt.write_ar_curve_csv(recall, out / "ar_curve.csv")
    rpt.write_per_object_csv(recall, out / "per_object_ar.csv")
    rpt.figure_ar_curve(recall, out / "fig_ar_vs_threshold.png")
    rpt.figure_per_object_ar(recall, out / "fig_per_object_ar.png")
    print(rpt.format_recall_block(recall, acc15_value=acc, mean_rot_err=mean_rot))
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def cmd_render(args) -> int:
    mesh = parse_ply(_resolve(args.mesh))
    with open(_resolve(args.poses)) as f:
        pose_list = json.load(f)
    with open(_resolve(args.intrinsics)) as f:
        intr = json.load(f)
    k = CameraIntrinsics(
        fx=float(intr["fx"]),
        fy=float(intr["fy"]),
        cx=float(intr["cx"]),
        cy=float(intr["cy"]),
        width=int(intr["width"]),
        height=int(intr["height"]),
    )
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"depth_scale": args.depth_scale, "templates": []}
    try:
        for i, entry in enumerate(pose_list):
            tid = int(entry.get("template_id", i))
            pose = Pose.from_rt(entry["cam_R_m2c"], entry["cam_t_m2c"])
            render = rasterize(mesh, pose, k)
            stem = out / f"{tid:06d}"
            write_depth(render.depth, f"{stem}_depth.png", args.depth_scale)
            write_nocs(render.nocs, f"{stem}_nocs.png")
            write_mask(render.mask, f"{stem}_mask.png")
            meta["templates"].append(
                {
                    "template_id": tid,
                    "cam_R_m2c": pose.rotation.reshape(-1).tolist(),
                    "cam_t_m2c": pose.translation.tolist(),
                    "cam_K": [k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0],
                    "width": k.width,
                    "height": k.height,
                }
            )
    except ZeroposeError as exc:
        logger.error("render failed: %s: %s", type(exc).__name__, exc)
        return 1
    (out / "poses.json").write_text(json.dumps(meta, indent=1))
    logger.info("rendered %d poses into %s", len(meta["templates"]), out)
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    report = run_selftest(
        seed=args.seed if args.seed is not None else 0,
        out_dir=_resolve(args.out) if args.out else None,
        corrupt_template_poses=args.corrupt_template_poses,
        n_templates=args.templates,
        n_queries=args.queries,
    )
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"CHECK {check.name}: {status} ({check.detail})")
    print(
        f"success {report.success_count}/{len(report.outcomes)}, "
        f"AR {report.recall.ar:.4f}, elapsed {report.elapsed:.1f} s"
    )
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# match
# ---------------------------------------------------------------------------


def cmd_match(args) -> int:
    config = _load_pipeline_config(args)
    detections = bop.read_detections(_resolve(args.detections))
    scenes_dir = _resolve(args.scenes)
    cameras = {}
    gt = {}
    for scene_id, scene_dir in _scene_paths(scenes_dir):
        cameras[scene_id] = bop.read_scene_camera(scene_dir / "scene_camera.json")
        gt[scene_id] = bop.read_scene_gt(scene_dir / "scene_gt.json")
    templates_cache = {}
    lines = ["scene_id,im_id,obj_id,template_id,score,rotation_error_deg"]
    pairs = []
    for det in detections:
        try:
            if det.object_id not in templates_cache:
                templates_cache[det.object_id] = bop.load_templates(
                    _resolve(args.templates), det.object_id, [config.match_layer]
                )
            camera = cameras[det.scene_id][det.image_id]
            query = bop.load_query_crop(det, _resolve(args.features), camera, config)
            result = match_template(
                query, templates_cache[det.object_id], match_layer=config.match_layer
            )
            gt_pose = next(
                p for obj, p in gt[det.scene_id][det.image_id] if obj == det.object_id
            )
            matched = next(
                t for t in templates_cache[det.object_id] if t.template_id == result.template_id
            )
            err = rotation_error(gt_pose.rotation, matched.pose.rotation)
            pairs.append((gt_pose.rotation, matched.pose.rotation))
            lines.append(
                f"{det.scene_id},{det.image_id},{det.object_id},"
                f"{result.template_id},{result.score:.6f},{err:.4f}"
            )
        except (ZeroposeError, KeyError, StopIteration, FileNotFoundError) as exc:
            logger.error("detection %s skipped: %s: %s", det.crop_id, type(exc).__name__, exc)
    if args.out:
        out = _resolve(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")
    if pairs:
        score = acc15(pairs)
        mean_err = float(np.mean([rotation_error(a, b) for a, b in pairs]))
        print(f"acc15: {score:.6f}")
        print(f"mean_rotation_error_deg: {mean_err:.6f}")
        return 0
    logger.error("no detections matched")
    return 1


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="pipeline config file (key = value lines)")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--jobs", type=int, default=1, help="worker threads for batch commands")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeropose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pose", help="estimate poses for a detection list")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True, help="output results CSV")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("eval", help="evaluate a results CSV against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--vertex-cap", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="rasterize depth/NOCS/mask maps for a pose list")
    p.add_argument("--mesh", required=True, help="PLY mesh")
    p.add_argument("--poses", required=True, help="JSON pose list")
    p.add_argument("--intrinsics", required=True, help="JSON with fx fy cx cy width height")
    p.add_argument("--out", required=True)
    p.add_argument("--depth-scale", type=float, default=0.1)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("selftest", help="synthetic end-to-end verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for CSV, report, figures")
    p.add_argument("--templates", type=int, default=60)
    p.add_argument("--queries", type=int, default=20)
    p.add_argument(
        "--corrupt-template-poses",
        action="store_true",
        help="negative control: run with deliberately wrong template poses",
    )
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("match", help="template matching only, Acc15 against ground truth")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--out", help="output CSV of matches")
    p.set_defaults(func=cmd_match)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ZeroposeError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
