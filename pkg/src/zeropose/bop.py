"""Dataset-side I/O: detections, scene metadata, ground truth, templates,
and the results CSV.

File layout expected under a data root (one directory per scene, ids
zero-padded in file names where noted):

    detections.json                  list of detection records
    scenes/<scene_id>/scene_camera.json   {im_id: {cam_K, depth_scale, ...}}
    scenes/<scene_id>/scene_gt.json       {im_id: [{obj_id, cam_R_m2c, cam_t_m2c}]}
    scenes/<scene_id>/depth/<im_id:06d>.png    optional, for VSD
    models/models_info.json, models/obj_<id:06d>.ply
    features/<crop_id>_L<layer>.dfm
    templates/obj_<id:06d>/poses.json + per-template maps and features

The results CSV is one row per detection:
``scene_id,im_id,obj_id,score,R,t,time`` with R as 9 space-separated
row-major values and t in millimeters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyMask
from .geometry import CameraIntrinsics, CropTransform, Pose
from .template_match import QueryCrop, TemplateRecord
from .tensorio import (
    feature_map_path,
    manifest_path,
    read_depth,
    read_feature_map,
    read_mask,
    read_nocs,
    validate_manifest,
)

RESULTS_HEADER = "scene_id,im_id,obj_id,score,R,t,time"


@dataclass(frozen=True)
class DetectionRecord:
    scene_id: int
    image_id: int
    object_id: int
    mask_path: str
    bbox: tuple  # (x, y, w, h) in source-image pixels
    score: float

    @property
    def crop_id(self) -> str:
        return f"{self.scene_id:06d}_{self.image_id:06d}_{self.object_id:06d}"


def read_detections(path) -> list:
    with open(path) as f:
        raw = json.load(f)
    out = []
    for entry in raw:
        bbox = tuple(float(v) for v in entry["bbox"])
        if len(bbox) != 4 or bbox[2] <= 0 or bbox[3] <= 0:
            raise ConfigError(f"bad bbox {bbox} in {path}")
        out.append(
            DetectionRecord(
                scene_id=int(entry["scene_id"]),
                image_id=int(entry["im_id"]),
                object_id=int(entry["obj_id"]),
                mask_path=str(entry["mask"]),
                bbox=bbox,
                score=float(entry.get("score", 1.0)),
            )
        )
    return out


@dataclass(frozen=True)
class SceneCamera:
    intrinsics: CameraIntrinsics
    depth_scale: float


def read_scene_camera(path, default_size=None) -> dict:
    """Read per-image camera records: im_id -> SceneCamera.

    Image width/height may be stored alongside cam_K; otherwise
    ``default_size`` (w, h) applies.
    """
    with open(path) as f:
        raw = json.load(f)
    out = {}
    for key, entry in raw.items():
        k = np.asarray(entry["cam_K"], dtype=np.float64).reshape(3, 3)
        if "width" in entry:
            size = (int(entry["width"]), int(entry["height"]))
        elif default_size is not None:
            size = default_size
        else:
            raise ConfigError(f"{path}: image size unknown for im_id {key}")
        out[int(key)] = SceneCamera(
            intrinsics=CameraIntrinsics.from_matrix(k, width=size[0], height=size[1]),
            depth_scale=float(entry.get("depth_scale", 1.0)),
        )
    return out


def read_scene_gt(path) -> dict:
    """Read ground-truth annotations: im_id -> [(obj_id, Pose), ...]."""
    with open(path) as f:
        raw = json.load(f)
    out = {}
    for key, entries in raw.items():
        rows = []
        for entry in entries:
            pose = Pose.from_rt(entry["cam_R_m2c"], entry["cam_t_m2c"])
            rows.append((int(entry["obj_id"]), pose))
        out[int(key)] = rows
    return out


# ---------------------------------------------------------------------------
# Crop extraction
# ---------------------------------------------------------------------------


def square_crop_transform(
    bbox, crop_size: int, margin: float, image_wh: tuple
) -> CropTransform:
    """Pad a detection box to a square with a relative margin and map it to
    a crop_size x crop_size grid."""
    x, y, w, h = bbox
    side = max(w, h) * (1.0 + margin)
    cx = x + w / 2.0
    cy = y + h / 2.0
    scale = crop_size / side
    return CropTransform(scale=scale, offset_x=cx - side / 2.0, offset_y=cy - side / 2.0)


def crop_mask(mask: np.ndarray, transform: CropTransform, crop_size: int) -> np.ndarray:
    """Nearest-neighbor resample of a full-image mask into the crop frame."""
    grid = np.arange(crop_size, dtype=np.float64)
    xs = np.round(grid / transform.scale + transform.offset_x).astype(int)
    ys = np.round(grid / transform.scale + transform.offset_y).astype(int)
    valid_x = (xs >= 0) & (xs < mask.shape[1])
    valid_y = (ys >= 0) & (ys < mask.shape[0])
    out = np.zeros((crop_size, crop_size), dtype=bool)
    yy = ys[valid_y]
    xx = xs[valid_x]
    out[np.ix_(valid_y, valid_x)] = mask[np.ix_(yy, xx)]
    return out


def load_query_crop(det: DetectionRecord, feature_dir, camera: SceneCamera, config) -> QueryCrop:
    mask_full = read_mask(det.mask_path)
    transform = square_crop_transform(
        det.bbox,
        config.crop_size,
        config.crop_margin,
        (camera.intrinsics.width, camera.intrinsics.height),
    )
    mask = crop_mask(mask_full, transform, config.crop_size)
    if not mask.any():
        raise EmptyMask(f"detection {det.crop_id}: empty mask after cropping")
    manifest = None
    manifest_file = manifest_path(feature_dir, det.crop_id)
    if manifest_file.exists():
        with open(manifest_file) as f:
            manifest = json.load(f)
    features = {}
    for layer in config.layers:
        features[layer] = read_feature_map(feature_map_path(feature_dir, det.crop_id, layer))
        if manifest is not None:
            validate_manifest(features[layer], manifest, layer)
    return QueryCrop(
        crop_id=det.crop_id,
        features=features,
        mask=mask,
        crop_transform=transform,
        scene_intrinsics=camera.intrinsics,
    )


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def load_templates(template_dir, object_id: int, layers) -> list:
    """Load every template of one object from ``templates/obj_<id:06d>/``."""
    obj_dir = Path(template_dir) / f"obj_{object_id:06d}"
    with open(obj_dir / "poses.json") as f:
        meta = json.load(f)
    depth_scale = float(meta.get("depth_scale", 1.0))
    records = []
    for entry in meta["templates"]:
        tid = int(entry["template_id"])
        pose = Pose.from_rt(entry["cam_R_m2c"], entry["cam_t_m2c"])
        size = (int(entry["width"]), int(entry["height"]))
        intr = CameraIntrinsics.from_matrix(
            np.asarray(entry["cam_K"], dtype=np.float64).reshape(3, 3),
            width=size[0],
            height=size[1],
        )
        stem = obj_dir / f"{tid:06d}"
        depth_path = Path(f"{stem}_depth.png")
        nocs_path = Path(f"{stem}_nocs.png")
        features = {
            layer: read_feature_map(feature_map_path(obj_dir, f"{tid:06d}", layer))
            for layer in layers
        }
        records.append(
            TemplateRecord(
                template_id=tid,
                features=features,
                pose=pose,
                intrinsics=intr,
                mask=read_mask(f"{stem}_mask.png"),
                depth=read_depth(depth_path, depth_scale) if depth_path.exists() else None,
                nocs=read_nocs(nocs_path) if nocs_path.exists() else None,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Results CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    scene_id: int
    image_id: int
    object_id: int
    score: float
    pose: Pose
    time: float  # seconds; -1 when not recorded


def format_result_row(row: ResultRow) -> str:
    r = " ".join(f"{v:.9f}" for v in row.pose.rotation.reshape(-1))
    t = " ".join(f"{v:.6f}" for v in row.pose.translation)
    return (
        f"{row.scene_id},{row.image_id},{row.object_id},"
        f"{row.score:.6f},{r},{t},{row.time:.6f}"
    )


def write_results_csv(rows, path) -> None:
    lines = [RESULTS_HEADER]
    ordered = sorted(rows, key=lambda r: (r.scene_id, r.image_id, r.object_id))
    lines.extend(format_result_row(r) for r in ordered)
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def read_results_csv(path) -> list:
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or lines[0] != RESULTS_HEADER:
        raise ConfigError(f"{path}: missing results header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 7:
            raise ConfigError(f"{path}: bad row {line!r}")
        r = np.array([float(v) for v in parts[4].split()], dtype=np.float64).reshape(3, 3)
        t = np.array([float(v) for v in parts[5].split()], dtype=np.float64)
        rows.append(
            ResultRow(
                scene_id=int(parts[0]),
                image_id=int(parts[1]),
                object_id=int(parts[2]),
                score=float(parts[3]),
                pose=Pose.from_rt(r, t),
                time=float(parts[6]),
            )
        )
    return rows
