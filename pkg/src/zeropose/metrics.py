"""Pose-error metrics and recall aggregation.

Implements the visible surface discrepancy (VSD), maximum symmetry-aware
surface distance (MSSD), maximum symmetry-aware projection distance (MSPD),
their average-recall aggregation with the standard threshold sweeps, and the
Acc15 template-rotation statistic.

Conventions:
- VSD compares rendered distance maps against the scene distance map;
  visibility tolerance delta defaults to 15 mm.
- MSSD/MSPD minimize over the model's symmetry transforms and maximize over
  (optionally subsampled) mesh vertices.
- Recall sweeps: VSD tau in 5%..50% of the diameter and threshold theta in
  0.05..0.5; MSSD theta in 5%..50% of the diameter; MSPD theta in 5r..50r
  with r = image_width / 640.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRecords
from .geometry import CameraIntrinsics, Pose, SymmetrySet, axis_angle_rotation, compose
from .mesh import TriangleMesh
from .raster import rasterize

VSD_DELTA_MM = 15.0
VSD_TAU_FRACTIONS = tuple(np.arange(1, 11) * 0.05)  # of object diameter
RECALL_THRESHOLDS = tuple(np.arange(1, 11) * 0.05)
CONTINUOUS_SYM_STEPS = 64
DEFAULT_VERTEX_CAP = 1000


# ---------------------------------------------------------------------------
# Per-pose errors
# ---------------------------------------------------------------------------


def _visible(rendered_dist: np.ndarray, scene_dist: np.ndarray, delta: float) -> np.ndarray:
    covered = rendered_dist > 0
    no_scene = scene_dist <= 0
    return covered & (no_scene | (rendered_dist <= scene_dist + delta))


def vsd_errors(
    est: Pose,
    gt: Pose,
    mesh: TriangleMesh,
    k: CameraIntrinsics,
    scene_distance: np.ndarray,
    taus,
    delta: float = VSD_DELTA_MM,
):
    """VSD for several misalignment tolerances at once.

    Returns (errors array aligned with taus, empty_union flag); an empty
    visibility union yields all-ones errors with the flag set.
    """
    d_est = rasterize(mesh, est, k).distance
    d_gt = rasterize(mesh, gt, k).distance
    vis_est = _visible(d_est, scene_distance, delta)
    vis_gt = _visible(d_gt, scene_distance, delta)
    union = vis_est | vis_gt
    union_count = int(union.sum())
    taus = np.asarray(list(taus), dtype=np.float64)
    if union_count == 0:
        return np.ones(len(taus)), True
    inter = vis_est & vis_gt
    diff = np.abs(d_est[inter] - d_gt[inter])
    errors = np.empty(len(taus))
    for i, tau in enumerate(taus):
        ok = int((diff < tau).sum())
        errors[i] = 1.0 - ok / union_count
    return errors, False


def e_vsd(
    est: Pose,
    gt: Pose,
    mesh: TriangleMesh,
    k: CameraIntrinsics,
    scene_distance: np.ndarray,
    tau: float,
    delta: float = VSD_DELTA_MM,
) -> float:
    errors, _ = vsd_errors(est, gt, mesh, k, scene_distance, [tau], delta)
    return float(errors[0])


def _symmetry_poses(gt: Pose, sym: SymmetrySet):
    return [compose(gt, s) for s in sym]


def e_mssd(est: Pose, gt: Pose, vertices: np.ndarray, sym: SymmetrySet) -> float:
    """Max vertex displacement in mm, minimized over symmetry transforms."""
    verts = np.asarray(vertices, dtype=np.float64)
    if len(verts) == 0:
        raise ValueError("vertex set must be non-empty")
    pts_est = est.transform(verts)
    best = np.inf
    for pose in _symmetry_poses(gt, sym):
        d = np.linalg.norm(pts_est - pose.transform(verts), axis=1).max()
        best = min(best, float(d))
    return best


def _project_unchecked(points: np.ndarray, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    # e_mspd must not crash on degenerate estimates; clamping z keeps the
    # error finite and enormous instead
    cam = pose.transform(points)
    z = np.maximum(cam[:, 2], 1e-9)
    return np.stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy], axis=1)


def e_mspd(
    est: Pose, gt: Pose, vertices: np.ndarray, sym: SymmetrySet, k: CameraIntrinsics
) -> float:
    """Max projected vertex displacement in px, minimized over symmetries."""
    verts = np.asarray(vertices, dtype=np.float64)
    if len(verts) == 0:
        raise ValueError("vertex set must be non-empty")
    proj_est = _project_unchecked(verts, est, k)
    best = np.inf
    for pose in _symmetry_poses(gt, sym):
        d = np.linalg.norm(proj_est - _project_unchecked(verts, pose, k), axis=1).max()
        best = min(best, float(d))
    return best


def rotation_error(r_q: np.ndarray, r_m: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    r_q = np.asarray(r_q, dtype=np.float64)
    r_m = np.asarray(r_m, dtype=np.float64)
    cos = (np.trace(r_q.T @ r_m) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def acc15(rotation_pairs) -> float:
    """Fraction of (R_query, R_matched) pairs within 15 degrees."""
    pairs = list(rotation_pairs)
    if not pairs:
        raise EmptyRecords("no rotation pairs")
    hits = sum(1 for r_q, r_m in pairs if rotation_error(r_q, r_m) < 15.0)
    return hits / len(pairs)


# ---------------------------------------------------------------------------
# Recall aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorRecord:
    scene_id: int
    image_id: int
    object_id: int
    e_vsd: tuple  # one value per VSD_TAU_FRACTIONS entry, in [0, 1]
    e_mssd: float  # mm
    e_mspd: float  # px
    visibility_fraction: float = 1.0

    def __post_init__(self):
        if len(self.e_vsd) != len(VSD_TAU_FRACTIONS):
            raise ValueError(
                f"e_vsd must hold {len(VSD_TAU_FRACTIONS)} entries, got {len(self.e_vsd)}"
            )


@dataclass
class RecallReport:
    ar_vsd: float
    ar_mssd: float
    ar_mspd: float
    ar: float
    theta_levels: np.ndarray  # (10,) normalized threshold levels
    vsd_recall: np.ndarray  # recall per theta level (averaged over taus)
    mssd_recall: np.ndarray
    mspd_recall: np.ndarray
    ar_curve: np.ndarray  # AR when thresholds are capped at each level
    per_object: dict = field(default_factory=dict)  # object_id -> AR


def miss_record(scene_id: int, image_id: int, object_id: int) -> ErrorRecord:
    """Record for a ground-truth target with no prediction: fails every threshold."""
    return ErrorRecord(
        scene_id=scene_id,
        image_id=image_id,
        object_id=object_id,
        e_vsd=tuple([1.0] * len(VSD_TAU_FRACTIONS)),
        e_mssd=np.inf,
        e_mspd=np.inf,
    )


def _recall_curves(records, diameters, image_width):
    n = len(records)
    thetas = np.asarray(RECALL_THRESHOLDS)
    vsd = np.zeros(len(thetas))
    mssd = np.zeros(len(thetas))
    mspd = np.zeros(len(thetas))
    r = image_width / 640.0
    for rec in records:
        diameter = diameters[rec.object_id]
        e = np.asarray(rec.e_vsd)
        # VSD: correct at (tau, theta) when the error at tau is below theta
        vsd += (e[None, :] < thetas[:, None]).mean(axis=1)
        mssd += rec.e_mssd < thetas * diameter  # 5%..50% of the diameter
        mspd += rec.e_mspd < thetas * 100.0 * r  # 5r..50r, r = width/640
    return vsd / n, mssd / n, mspd / n


def ar_score(records, diameters, image_width: int) -> RecallReport:
    """Average recall over the standard VSD/MSSD/MSPD threshold sweeps.

    ``diameters`` maps object_id to the model diameter in mm. Also emits the
    AR-versus-threshold-upper-bound curve (non-decreasing by construction).
    """
    records = list(records)
    if not records:
        raise EmptyRecords("no error records")
    missing = {r.object_id for r in records} - set(diameters)
    if missing:
        raise KeyError(f"diameters missing for objects {sorted(missing)}")
    vsd_rec, mssd_rec, mspd_rec = _recall_curves(records, diameters, image_width)
    ar_vsd = float(vsd_rec.mean())
    ar_mssd = float(mssd_rec.mean())
    ar_mspd = float(mspd_rec.mean())
    steps = np.arange(1, len(RECALL_THRESHOLDS) + 1)
    curve = (
        np.cumsum(vsd_rec) / steps + np.cumsum(mssd_rec) / steps + np.cumsum(mspd_rec) / steps
    ) / 3.0

    per_object = {}
    for obj in sorted({r.object_id for r in records}):
        subset = [r for r in records if r.object_id == obj]
        v, s, p = _recall_curves(subset, diameters, image_width)
        per_object[obj] = float((v.mean() + s.mean() + p.mean()) / 3.0)

    return RecallReport(
        ar_vsd=ar_vsd,
        ar_mssd=ar_mssd,
        ar_mspd=ar_mspd,
        ar=(ar_vsd + ar_mssd + ar_mspd) / 3.0,
        theta_levels=np.asarray(RECALL_THRESHOLDS),
        vsd_recall=vsd_rec,
        mssd_recall=mssd_rec,
        mspd_recall=mspd_rec,
        ar_curve=curve,
        per_object=per_object,
    )


# ---------------------------------------------------------------------------
# Model metadata ingestion (diameters, symmetries, vertex subsampling)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectInfo:
    object_id: int
    diameter: float
    symmetries: SymmetrySet


def _continuous_steps(axis, offset, steps: int):
    poses = []
    offset = np.asarray(offset, dtype=np.float64)
    for i in range(1, steps):
        angle = 2.0 * np.pi * i / steps
        r = axis_angle_rotation(axis, angle)
        poses.append(Pose(r, offset - r @ offset))
    return poses


def symmetry_set_from_info(info: dict, steps: int = CONTINUOUS_SYM_STEPS) -> SymmetrySet:
    """Build the symmetry set from a models_info entry.

    Discrete symmetries are 4x4 row-major matrices; continuous ones are
    discretized to ``steps`` rotations about the given axis and combined
    with the discrete set.
    """
    discrete = [Pose.identity()]
    for flat in info.get("symmetries_discrete", []):
        m = np.asarray(flat, dtype=np.float64).reshape(4, 4)
        discrete.append(Pose.from_rt(m[:3, :3], m[:3, 3]))
    continuous = [Pose.identity()]
    for entry in info.get("symmetries_continuous", []):
        continuous.extend(
            _continuous_steps(entry["axis"], entry.get("offset", (0, 0, 0)), steps)
        )
    transforms = []
    for c in continuous:
        for d in discrete:
            transforms.append(compose(c, d))
    # keep the identity (c=d=identity) first
    return SymmetrySet(tuple(transforms))


def load_models_info(path, steps: int = CONTINUOUS_SYM_STEPS) -> dict:
    """Read a models_info JSON file: object_id -> ObjectInfo."""
    with open(path) as f:
        raw = json.load(f)
    out = {}
    for key, info in raw.items():
        obj = int(key)
        out[obj] = ObjectInfo(
            object_id=obj,
            diameter=float(info["diameter"]),
            symmetries=symmetry_set_from_info(info, steps),
        )
    return out


def subsample_vertices(vertices: np.ndarray, cap: int = DEFAULT_VERTEX_CAP) -> np.ndarray:
    """Deterministic farthest-point subsample for large meshes."""
    verts = np.asarray(vertices, dtype=np.float64)
    if len(verts) <= cap:
        return verts
    centroid = verts.mean(axis=0)
    start = int(np.argmax(np.linalg.norm(verts - centroid, axis=1)))
    chosen = [start]
    dists = np.linalg.norm(verts - verts[start], axis=1)
    for _ in range(cap - 1):
        nxt = int(np.argmax(dists))
        chosen.append(nxt)
        dists = np.minimum(dists, np.linalg.norm(verts - verts[nxt], axis=1))
    return verts[chosen]
