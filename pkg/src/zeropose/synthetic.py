"""Self-contained synthetic scene: a distorted tetrahedron rendered from a
viewing sphere, with NOCS maps standing in for learned feature maps.

Because the NOCS value of a surface point is viewpoint-invariant, rendered
NOCS maps behave like ideal dense features: the whole pipeline can run and
be checked against rasterizer ground truth without any network.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import PipelineConfig
from .geometry import CameraIntrinsics, CropTransform, Pose
from .mesh import TriangleMesh
from .raster import RenderOutput, rasterize
from .template_match import QueryCrop, TemplateRecord
from .tensorio import FeatureMap

FIXTURE_IMAGE_SIZE = 160
FIXTURE_FOCAL = 260.0
FIXTURE_DISTANCE_MM = 320.0


def make_tetrahedron(scale: float = 1.0) -> TriangleMesh:
    """Distorted (symmetry-free) tetrahedron, roughly centered, ~120 mm across.

    Built by unevenly stretching a regular tetrahedron: every edge length
    differs (no symmetry), but all dihedral folds stay strong, so the visible
    surface from any viewpoint is far from planar. A flat fixture would make
    the pose problem itself ambiguous (planar PnP flip).
    """
    base = np.array(
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    )
    stretch = np.array(
        [
            [1.10, 0.95, 1.00],
            [0.90, 1.12, 1.05],
            [1.04, 0.88, 1.15],
            [0.97, 1.06, 0.92],
        ]
    )
    verts = scale * 45.0 * base * stretch
    verts = verts - verts.mean(axis=0)
    tris = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(vertices=verts, triangles=tris)


def make_box(size=(60.0, 80.0, 100.0)) -> TriangleMesh:
    """Axis-aligned box centered at the origin (test geometry helper)."""
    sx, sy, sz = (s / 2.0 for s in size)
    verts = np.array(
        [
            [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
            [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],
        ]
    )
    tris = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z-
            [4, 5, 6], [4, 6, 7],  # z+
            [0, 1, 5], [0, 5, 4],  # y-
            [2, 3, 7], [2, 7, 6],  # y+
            [1, 2, 6], [1, 6, 5],  # x+
            [0, 4, 7], [0, 7, 3],  # x-
        ]
    )
    return TriangleMesh(vertices=verts, triangles=tris)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly equidistant unit directions."""
    i = np.arange(n, dtype=np.float64)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def look_at_pose(direction, distance: float, roll: float = 0.0) -> Pose:
    """Model-to-camera pose of a camera on the view sphere looking at the origin.

    ``direction`` is the unit vector from the origin toward the camera; the
    object ends up on the optical axis at ``distance`` mm.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    forward = -d  # camera z axis points at the object
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward], axis=0)
    if roll != 0.0:
        c, s = np.cos(roll), np.sin(roll)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ r
    return Pose(r, np.array([0.0, 0.0, distance]))


def fixture_intrinsics(size: int = FIXTURE_IMAGE_SIZE) -> CameraIntrinsics:
    c = (size - 1) / 2.0
    return CameraIntrinsics(
        fx=FIXTURE_FOCAL, fy=FIXTURE_FOCAL, cx=c, cy=c, width=size, height=size
    )


def nocs_feature_map(render: RenderOutput, layer_id: int) -> FeatureMap:
    """The render's NOCS map reinterpreted as a 3-channel feature map."""
    data = np.transpose(render.nocs, (2, 0, 1)).astype(np.float32)
    return FeatureMap(layer_id=layer_id, data=data)


def _layer_features(render: RenderOutput, layers) -> dict:
    fm = {layer: nocs_feature_map(render, layer) for layer in layers}
    return fm


def template_from_render(
    template_id: int,
    render: RenderOutput,
    pose: Pose,
    k: CameraIntrinsics,
    layers,
) -> TemplateRecord:
    features = _layer_features(render, layers)
    return TemplateRecord(
        template_id=template_id,
        features=features,
        pose=pose,
        intrinsics=k,
        mask=render.mask,
        depth=render.depth,
        nocs=render.nocs,
    )


def query_from_render(
    crop_id: str, render: RenderOutput, k: CameraIntrinsics, layers
) -> QueryCrop:
    features = _layer_features(render, layers)
    return QueryCrop(
        crop_id=crop_id,
        features=features,
        mask=render.mask,
        crop_transform=CropTransform(scale=1.0, offset_x=0.0, offset_y=0.0),
        scene_intrinsics=k,
    )


def fixture_config(seed: int = 0) -> PipelineConfig:
    """Defaults adapted to 3-channel NOCS features and a desk-scale run."""
    return PipelineConfig(
        layers=(2, 5, 8, 11),
        match_layer=2,
        pca_dim=3,
        clusters=256,
        top_k=10,
        kernel=3,
        crop_size=FIXTURE_IMAGE_SIZE,
        n_templates=60,
        ransac_px=2.0,
        pnp_iters=1000,
        cluster_sim_floor=0.5,
        sampson_thresh=2.5,
        seed=seed,
        crop_margin=0.0,  # fixture detections cover the full frame exactly
    )


@dataclass
class SyntheticFixture:
    mesh: TriangleMesh
    intrinsics: CameraIntrinsics
    templates: list  # TemplateRecord
    queries: list  # (QueryCrop, gt Pose)
    query_renders: list  # RenderOutput per query (scene depth/distance source)
    config: PipelineConfig


def export_fixture(fixture: SyntheticFixture, root) -> dict:
    """Write the fixture as an on-disk dataset (scenes, models, features,
    templates, detections, config), so the file-level commands can run on it.

    Returns the path map used by the CLI.
    """
    import json
    from dataclasses import asdict
    from pathlib import Path

    from .mesh import TriangleMesh
    from .tensorio import write_depth, write_feature_map, write_mask, write_nocs

    root = Path(root)
    scene_dir = root / "scenes" / "000000"
    mask_dir = scene_dir / "mask"
    depth_dir = scene_dir / "depth"
    feature_dir = root / "features"
    model_dir = root / "models"
    template_dir = root / "templates" / f"obj_{1:06d}"
    for d in (mask_dir, depth_dir, feature_dir, model_dir, template_dir):
        d.mkdir(parents=True, exist_ok=True)

    k = fixture.intrinsics
    cam_k = [k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0]
    depth_scale = 0.1

    scene_camera = {}
    scene_gt = {}
    detections = []
    for qid, ((query, gt), render) in enumerate(zip(fixture.queries, fixture.query_renders)):
        scene_camera[str(qid)] = {
            "cam_K": cam_k,
            "depth_scale": depth_scale,
            "width": k.width,
            "height": k.height,
        }
        scene_gt[str(qid)] = [
            {
                "obj_id": 1,
                "cam_R_m2c": gt.rotation.reshape(-1).tolist(),
                "cam_t_m2c": gt.translation.tolist(),
            }
        ]
        mask_path = mask_dir / f"{qid:06d}_{1:06d}.png"
        write_mask(render.mask, mask_path)
        write_depth(render.depth, depth_dir / f"{qid:06d}.png", depth_scale)
        detections.append(
            {
                "scene_id": 0,
                "im_id": qid,
                "obj_id": 1,
                "mask": str(mask_path),
                "bbox": [0, 0, k.width, k.height],
                "score": 1.0,
            }
        )
        crop_id = f"{0:06d}_{qid:06d}_{1:06d}"
        for layer, fm in query.features.items():
            write_feature_map(fm, feature_dir / f"{crop_id}_L{layer}.dfm")

    (scene_dir / "scene_camera.json").write_text(json.dumps(scene_camera, indent=1))
    (scene_dir / "scene_gt.json").write_text(json.dumps(scene_gt, indent=1))
    (root / "detections.json").write_text(json.dumps(detections, indent=1))

    _write_ply(fixture.mesh, model_dir / f"obj_{1:06d}.ply")
    (model_dir / "models_info.json").write_text(
        json.dumps({"1": {"diameter": fixture.mesh.diameter}}, indent=1)
    )

    template_meta = {"depth_scale": depth_scale, "templates": []}
    for t in fixture.templates:
        stem = template_dir / f"{t.template_id:06d}"
        write_mask(t.mask, f"{stem}_mask.png")
        write_depth(t.depth, f"{stem}_depth.png", depth_scale)
        write_nocs(t.nocs, f"{stem}_nocs.png")
        for layer, fm in t.features.items():
            write_feature_map(fm, template_dir / f"{t.template_id:06d}_L{layer}.dfm")
        template_meta["templates"].append(
            {
                "template_id": t.template_id,
                "cam_R_m2c": t.pose.rotation.reshape(-1).tolist(),
                "cam_t_m2c": t.pose.translation.tolist(),
                "cam_K": cam_k,
                "width": k.width,
                "height": k.height,
            }
        )
    (template_dir / "poses.json").write_text(json.dumps(template_meta, indent=1))

    config_lines = [
        f"layers = {','.join(str(l) for l in fixture.config.layers)}",
        f"match_layer = {fixture.config.match_layer}",
        f"pca_dim = {fixture.config.pca_dim}",
        f"clusters = {fixture.config.clusters}",
        f"top_k = {fixture.config.top_k}",
        f"kernel = {fixture.config.kernel}",
        f"crop_size = {fixture.config.crop_size}",
        f"n_templates = {fixture.config.n_templates}",
        f"ransac_px = {fixture.config.ransac_px}",
        f"pnp_iters = {fixture.config.pnp_iters}",
        f"cluster_sim_floor = {fixture.config.cluster_sim_floor}",
        f"sampson_thresh = {fixture.config.sampson_thresh}",
        f"seed = {fixture.config.seed}",
        f"crop_margin = {fixture.config.crop_margin}",
    ]
    (root / "zeropose.cfg").write_text("\n".join(config_lines) + "\n")

    return {
        "detections": root / "detections.json",
        "scenes": root / "scenes",
        "features": feature_dir,
        "models": model_dir,
        "templates": root / "templates",
        "config": root / "zeropose.cfg",
    }


def _write_ply(mesh, path) -> None:
    """Binary little-endian PLY writer (fixture export only)."""
    import struct

    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode("ascii")
    body = b""
    for v in mesh.vertices:
        body += struct.pack("<fff", *v)
    for t in mesh.triangles:
        body += struct.pack("<Biii", 3, *(int(i) for i in t))
    with open(path, "wb") as f:
        f.write(header + body)


def build_fixture(
    seed: int = 0,
    n_templates: int = 60,
    n_queries: int = 20,
) -> SyntheticFixture:
    """Render the template set and held-out query views."""
    mesh = make_tetrahedron()
    k = fixture_intrinsics()
    config = replace(fixture_config(seed), n_templates=n_templates)
    layers = config.layers

    templates = []
    for tid, direction in enumerate(fibonacci_sphere(n_templates)):
        pose = look_at_pose(direction, FIXTURE_DISTANCE_MM)
        render = rasterize(mesh, pose, k)
        templates.append(template_from_render(tid, render, pose, k, layers))

    rng = np.random.default_rng(seed + 1)
    queries = []
    renders = []
    for qid in range(n_queries):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        distance = FIXTURE_DISTANCE_MM * rng.uniform(0.9, 1.1)
        roll = rng.uniform(-0.15, 0.15)
        pose = look_at_pose(direction, distance, roll=roll)
        render = rasterize(mesh, pose, k)
        queries.append((query_from_render(f"query_{qid:04d}", render, k, layers), pose))
        renders.append(render)
    return SyntheticFixture(
        mesh=mesh,
        intrinsics=k,
        templates=templates,
        queries=queries,
        query_renders=renders,
        config=config,
    )
