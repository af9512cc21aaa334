"""Pinhole z-buffer rasterizer producing depth, distance, NOCS, and mask maps.

Deliberately plain: top-left fill rule for deterministic coverage,
perspective-correct interpolation, no anti-aliasing, no back-face culling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera
from .geometry import MIN_DEPTH_MM, CameraIntrinsics, Pose
from .mesh import TriangleMesh


@dataclass(frozen=True)
class RenderOutput:
    """Per-pixel render products; zero depth marks uncovered pixels."""

    depth: np.ndarray  # (H, W) mm
    distance: np.ndarray  # (H, W) mm, norm of the camera-frame point
    nocs: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool


def depth_to_distance(depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Convert a depth map (z, mm) to a distance map (ray length, mm)."""
    d = np.asarray(depth, dtype=np.float64)
    h, w = d.shape
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    x = (u - k.cx) / k.fx
    y = (v - k.cy) / k.fy
    norm = np.sqrt(x[None, :] ** 2 + y[:, None] ** 2 + 1.0)
    return d * norm


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by) -> bool:
    # For a positively oriented triangle: "top" edges run leftward on a
    # horizontal line, "left" edges run upward (screen y grows downward).
    dy = by - ay
    dx = bx - ax
    return (dy == 0 and dx < 0) or dy < 0


def rasterize(mesh: TriangleMesh, pose: Pose, k: CameraIntrinsics) -> RenderOutput:
    """Render the mesh under a model-to-camera pose.

    Depth holds the nearest surface z per pixel, NOCS the interpolated
    normalized model coordinate, distance the camera-frame point norm.
    Raises BehindCamera when every vertex sits at z <= 0.
    """
    cam = pose.transform(mesh.vertices)
    z = cam[:, 2]
    if np.all(z <= MIN_DEPTH_MM):
        raise BehindCamera("mesh lies entirely behind the camera")

    h, w = k.height, k.width
    depth = np.full((h, w), np.inf)
    nocs = np.zeros((h, w, 3))

    valid = z > MIN_DEPTH_MM
    u = np.where(valid, k.fx * cam[:, 0] / np.where(valid, z, 1.0) + k.cx, 0.0)
    v = np.where(valid, k.fy * cam[:, 1] / np.where(valid, z, 1.0) + k.cy, 0.0)
    vert_nocs = mesh.nocs_of_points(mesh.vertices)

    for tri in mesh.triangles:
        if not (valid[tri[0]] and valid[tri[1]] and valid[tri[2]]):
            continue  # no near-plane clipping: partially behind -> skipped
        i0, i1, i2 = int(tri[0]), int(tri[1]), int(tri[2])
        area = _edge(u[i0], v[i0], u[i1], v[i1], u[i2], v[i2])
        if area < 0:
            i1, i2 = i2, i1
            area = -area
        if area < 1e-12:
            continue

        xs = (u[i0], u[i1], u[i2])
        ys = (v[i0], v[i1], v[i2])
        x_min = max(int(np.ceil(min(xs))), 0)
        x_max = min(int(np.floor(max(xs))), w - 1)
        y_min = max(int(np.ceil(min(ys))), 0)
        y_max = min(int(np.floor(max(ys))), h - 1)
        if x_min > x_max or y_min > y_max:
            continue

        px, py = np.meshgrid(
            np.arange(x_min, x_max + 1, dtype=np.float64),
            np.arange(y_min, y_max + 1, dtype=np.float64),
        )
        w0 = _edge(xs[1], ys[1], xs[2], ys[2], px, py)
        w1 = _edge(xs[2], ys[2], xs[0], ys[0], px, py)
        w2 = _edge(xs[0], ys[0], xs[1], ys[1], px, py)
        covered = (
            ((w0 > 0) | ((w0 == 0) & _top_left(xs[1], ys[1], xs[2], ys[2])))
            & ((w1 > 0) | ((w1 == 0) & _top_left(xs[2], ys[2], xs[0], ys[0])))
            & ((w2 > 0) | ((w2 == 0) & _top_left(xs[0], ys[0], xs[1], ys[1])))
        )
        if not covered.any():
            continue

        l0 = w0 / area
        l1 = w1 / area
        l2 = w2 / area
        inv_z = l0 / z[i0] + l1 / z[i1] + l2 / z[i2]
        with np.errstate(divide="ignore", invalid="ignore"):
            zi = np.where(inv_z > 0, 1.0 / inv_z, np.inf)

        sub = depth[y_min : y_max + 1, x_min : x_max + 1]
        upd = covered & (zi < sub)
        if not upd.any():
            continue
        sub[upd] = zi[upd]
        attr = (
            l0[..., None] * vert_nocs[i0] / z[i0]
            + l1[..., None] * vert_nocs[i1] / z[i1]
            + l2[..., None] * vert_nocs[i2] / z[i2]
        ) * zi[..., None]
        nocs_sub = nocs[y_min : y_max + 1, x_min : x_max + 1]
        nocs_sub[upd] = attr[upd]

    covered = np.isfinite(depth)
    depth[~covered] = 0.0
    nocs = np.clip(nocs, 0.0, 1.0)
    nocs[~covered] = 0.0
    distance = depth_to_distance(depth, k)
    return RenderOutput(depth=depth, distance=distance, nocs=nocs, mask=covered)
