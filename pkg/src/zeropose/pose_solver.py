"""Geometric correspondence lifting and RANSAC-EPnP pose retrieval."""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import correspondence as corr
from . import hyperfeatures as hf
from .errors import (
    DegenerateConfiguration,
    NoConsensus,
    NoValidCorrespondences,
    TooFewPoints,
)
from .geometry import CameraIntrinsics, Pose, backproject, invert, project
from .mesh import TriangleMesh
from .template_match import QueryCrop, TemplateRecord, match_template

MIN_PNP_POINTS = 6
_PLANAR_RATIO = 1e-7


@dataclass(frozen=True)
class GeometricCorrespondence:
    image_point: np.ndarray  # (2,) px in the source image
    model_point: np.ndarray  # (3,) mm in the model frame
    weight: float


@dataclass
class PoseEstimate:
    pose: Pose
    inliers: int
    reprojection_rmse: float
    template_id: int
    elapsed: float


def grid_to_pixels(coords: np.ndarray, grid_hw: tuple, image_hw: tuple) -> np.ndarray:
    """Map (n, 2) (y, x) grid coordinates to image pixel coordinates.

    Uses the same half-pixel-center convention as the bilinear upsampling, so
    grid positions and pixels stay aligned across resolutions.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    stride_y = image_hw[0] / grid_hw[0]
    stride_x = image_hw[1] / grid_hw[1]
    out = np.empty_like(coords)
    out[:, 0] = (coords[:, 0] + 0.5) * stride_y - 0.5
    out[:, 1] = (coords[:, 1] + 0.5) * stride_x - 0.5
    return out


def lift(
    cs: corr.CorrespondenceSet,
    template: TemplateRecord,
    mesh: TriangleMesh,
    query: QueryCrop,
    grid_hw: tuple,
) -> list:
    """Turn 2D-2D matches into 2D-3D correspondences.

    The template end is looked up in the template NOCS map (nearest pixel)
    and decoded through the mesh extents; templates shipping only depth are
    back-projected and moved to the model frame instead. The query end is
    mapped grid -> crop -> source image; the sub-cell offset introduced by
    rounding the template lookup is carried over to the query pixel, so both
    ends stay consistently quantized (otherwise every correspondence picks
    up a correlated half-pixel bias). Matches landing on template background
    are dropped.
    """
    if not cs.matches:
        raise NoValidCorrespondences("no correspondences to lift")
    use_nocs = template.nocs is not None
    if not use_nocs and template.depth is None:
        raise NoValidCorrespondences("template carries neither NOCS nor depth")
    t_map_hw = template.nocs.shape[:2] if use_nocs else template.depth.shape
    t_to_cam = invert(template.pose)
    span = mesh.extents_max - mesh.extents_min
    lo = mesh.extents_min - 0.01 * span
    hi = mesh.extents_max + 0.01 * span

    out = []
    q_hw = query.mask.shape
    ratio_y = (q_hw[0] / grid_hw[0]) / (t_map_hw[0] / grid_hw[0])
    ratio_x = (q_hw[1] / grid_hw[1]) / (t_map_hw[1] / grid_hw[1])
    for m in cs.matches:
        t_px = grid_to_pixels(np.array([m.t_refined]), grid_hw, t_map_hw)[0]
        ty = int(round(t_px[0]))
        tx = int(round(t_px[1]))
        if not (0 <= ty < t_map_hw[0] and 0 <= tx < t_map_hw[1]):
            continue
        if not template.mask[ty, tx]:
            continue
        if use_nocs:
            model_point = mesh.points_of_nocs(template.nocs[ty, tx])
        else:
            d = template.depth[ty, tx]
            if d <= 0:
                continue
            cam_point = backproject(
                np.array([[tx, ty]], dtype=np.float64), np.array([d]), template.intrinsics
            )[0]
            model_point = t_to_cam.transform(cam_point)[0]
        if np.any(model_point < lo) or np.any(model_point > hi):
            continue
        q_px = grid_to_pixels(np.array([m.q_refined]), grid_hw, q_hw)[0]
        q_px[0] += (ty - t_px[0]) * ratio_y
        q_px[1] += (tx - t_px[1]) * ratio_x
        source_xy = query.crop_transform.crop_to_source(np.array([[q_px[1], q_px[0]]]))[0]
        out.append(
            GeometricCorrespondence(
                image_point=source_xy,
                model_point=np.asarray(model_point, dtype=np.float64),
                weight=max(float(m.similarity), 1e-6),
            )
        )
    if not out:
        raise NoValidCorrespondences("all matches landed on template background")
    return out


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------


def _control_points(points: np.ndarray):
    """Centroid plus principal directions; 3 control points for planar sets."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 0 or eigvals[1] / eigvals[0] < 1e-12:
        raise DegenerateConfiguration("points are (nearly) collinear")
    planar = eigvals[2] / eigvals[0] < _PLANAR_RATIO
    axes = 2 if planar else 3
    ctrl = [centroid]
    for i in range(axes):
        ctrl.append(centroid + np.sqrt(eigvals[i]) * eigvecs[:, i])
    return np.asarray(ctrl), planar


def _barycentric(points: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    m = len(ctrl)
    if m == 4:
        a = np.vstack([ctrl.T, np.ones(4)])
        b = np.vstack([points.T, np.ones(len(points))])
        return np.linalg.solve(a, b).T
    # planar: express points in the 2D basis spanned by the control triangle
    basis = (ctrl[1:] - ctrl[0]).T  # (3, 2)
    coeff, *_ = np.linalg.lstsq(basis, (points - ctrl[0]).T, rcond=None)
    alphas = np.empty((len(points), 3))
    alphas[:, 1:] = coeff.T
    alphas[:, 0] = 1.0 - coeff.sum(axis=0)
    return alphas


def _kernel_vectors(alphas, image_points, k: CameraIntrinsics, m: int) -> np.ndarray:
    n = len(image_points)
    mat = np.zeros((2 * n, 3 * m))
    u = image_points[:, 0]
    v = image_points[:, 1]
    for j in range(m):
        a = alphas[:, j]
        mat[0::2, 3 * j] = a * k.fx
        mat[0::2, 3 * j + 2] = a * (k.cx - u)
        mat[1::2, 3 * j + 1] = a * k.fy
        mat[1::2, 3 * j + 2] = a * (k.cy - v)
    _, _, vt = np.linalg.svd(mat)
    count = 4 if m == 4 else 2
    return vt[-count:][::-1].reshape(count, m, 3)  # [0] pairs with the smallest value


def _pairwise(ctrl: np.ndarray) -> list:
    return list(combinations(range(len(ctrl)), 2))


def _betas_for_case(kernel: np.ndarray, dist_w: np.ndarray, pairs, case: int) -> np.ndarray:
    """Solve the linearized distance constraints for a given kernel size."""
    deltas = np.array([[kv[i] - kv[j] for (i, j) in pairs] for kv in kernel])
    if case == 1:
        v = deltas[0]
        num = (np.linalg.norm(v, axis=1) * dist_w).sum()
        den = (v**2).sum()
        beta = num / max(den, 1e-300)
        out = np.zeros(len(kernel))
        out[0] = beta
        return out
    if case == 2:
        rows = []
        for p in range(len(pairs)):
            d1 = deltas[0][p]
            d2 = deltas[1][p]
            rows.append([d1 @ d1, 2 * d1 @ d2, d2 @ d2])
        sol, *_ = np.linalg.lstsq(np.asarray(rows), dist_w**2, rcond=None)
        b11, b12, b22 = sol
        beta1 = np.sqrt(abs(b11))
        beta2 = np.sqrt(abs(b22)) * (1.0 if b12 >= 0 else -1.0)
        out = np.zeros(len(kernel))
        out[0] = beta1
        out[1] = beta2
        return out
    # case 3 (4 control points only): 6 unknowns, 6 constraints
    rows = []
    for p in range(len(pairs)):
        d1, d2, d3 = deltas[0][p], deltas[1][p], deltas[2][p]
        rows.append(
            [d1 @ d1, 2 * d1 @ d2, d2 @ d2, 2 * d1 @ d3, 2 * d2 @ d3, d3 @ d3]
        )
    sol, *_ = np.linalg.lstsq(np.asarray(rows), dist_w**2, rcond=None)
    b11, b12, b22, b13, b23, b33 = sol
    beta1 = np.sqrt(abs(b11))
    beta2 = np.sqrt(abs(b22)) * (1.0 if b12 >= 0 else -1.0)
    beta3 = np.sqrt(abs(b33)) * (1.0 if b13 >= 0 else -1.0)
    out = np.zeros(len(kernel))
    out[:3] = (beta1, beta2, beta3)
    return out


def _procrustes(world: np.ndarray, cam: np.ndarray):
    """Rigid transform R, t with cam ~= R @ world + t."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    h = (world - mw).T @ (cam - mc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, mc - r @ mw


def _refine_pose(
    world: np.ndarray, image: np.ndarray, k: CameraIntrinsics, pose: Pose, iters: int = 10
) -> Pose:
    """Gauss-Newton minimization of reprojection error from a good initial pose.

    The closed-form EPnP estimate is algebraic: with correlated pixel noise it
    lands anywhere inside the noise basin. A few damped-free GN steps move it
    to the least-squares optimum, which is what the consensus actually supports.
    """
    from .geometry import axis_angle_rotation, nearest_rotation

    r = pose.rotation.copy()
    t = pose.translation.copy()
    n = len(world)
    for _ in range(iters):
        cam = world @ r.T + t
        z = np.maximum(cam[:, 2], 1e-9)
        res = np.concatenate(
            [
                k.fx * cam[:, 0] / z + k.cx - image[:, 0],
                k.fy * cam[:, 1] / z + k.cy - image[:, 1],
            ]
        )
        rx = world @ r.T
        skew = np.zeros((n, 3, 3))
        skew[:, 0, 1] = -rx[:, 2]
        skew[:, 0, 2] = rx[:, 1]
        skew[:, 1, 0] = rx[:, 2]
        skew[:, 1, 2] = -rx[:, 0]
        skew[:, 2, 0] = -rx[:, 1]
        skew[:, 2, 1] = rx[:, 0]
        du = np.zeros((n, 2, 3))
        du[:, 0, 0] = k.fx / z
        du[:, 0, 2] = -k.fx * cam[:, 0] / z**2
        du[:, 1, 1] = k.fy / z
        du[:, 1, 2] = -k.fy * cam[:, 1] / z**2
        jac = np.concatenate([np.einsum("nij,njk->nik", du, -skew), du], axis=2)
        jac = jac.transpose(1, 0, 2).reshape(2 * n, 6)
        try:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        angle = np.linalg.norm(step[:3])
        if angle > 1e-12:
            r = nearest_rotation(axis_angle_rotation(step[:3], angle) @ r)
        t = t + step[3:]
        if angle < 1e-12 and np.linalg.norm(step[3:]) < 1e-9:
            break
    return Pose(r, t)


def _reprojection_errors(points, image_points, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    cam = pose.transform(points)
    z = cam[:, 2]
    errors = np.full(len(points), np.inf)
    front = z > 1e-9
    if front.any():
        u = k.fx * cam[front, 0] / z[front] + k.cx
        v = k.fy * cam[front, 1] / z[front] + k.cy
        diff = np.stack([u, v], axis=1) - image_points[front]
        errors[front] = np.sqrt((diff**2).sum(axis=1))
    return errors


def epnp(gc: list, k: CameraIntrinsics) -> Pose:
    """Closed-form EPnP; the beta case with minimal reprojection error wins.

    Planar point sets fall back to the 3-control-point variant. Requires at
    least 6 correspondences.
    """
    if len(gc) < MIN_PNP_POINTS:
        raise TooFewPoints(f"EPnP needs >= {MIN_PNP_POINTS} points, got {len(gc)}")
    world = np.asarray([c.model_point for c in gc], dtype=np.float64)
    image = np.asarray([c.image_point for c in gc], dtype=np.float64)
    ctrl, planar = _control_points(world)
    m = len(ctrl)
    alphas = _barycentric(world, ctrl)
    kernel = _kernel_vectors(alphas, image, k, m)
    pairs = _pairwise(ctrl)
    dist_w = np.array([np.linalg.norm(ctrl[i] - ctrl[j]) for i, j in pairs])

    best = None
    cases = (1, 2) if planar else (1, 2, 3)
    for case in cases:
        try:
            betas = _betas_for_case(kernel, dist_w, pairs, case)
        except np.linalg.LinAlgError:
            continue
        ctrl_cam = np.tensordot(betas, kernel, axes=1)
        cam_pts = alphas @ ctrl_cam
        if cam_pts[:, 2].mean() < 0:
            ctrl_cam = -ctrl_cam
            cam_pts = -cam_pts
        # rescale so camera-frame control distances match the world distances
        dist_c = np.array([np.linalg.norm(ctrl_cam[i] - ctrl_cam[j]) for i, j in pairs])
        denom = (dist_c**2).sum()
        if denom <= 1e-300:
            continue
        scale = (dist_c * dist_w).sum() / denom
        cam_pts = cam_pts * scale
        r, t = _procrustes(world, cam_pts)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            continue
        pose = Pose(r, t)
        err = _reprojection_errors(world, image, pose, k).mean()
        if best is None or err < best[0]:
            best = (err, pose)
    if best is None or not np.isfinite(best[0]):
        raise DegenerateConfiguration("EPnP produced no finite solution")
    return best[1]


def ransac_pnp(
    gc: list,
    k: CameraIntrinsics,
    threshold_px: float = 3.0,
    max_iters: int = 1000,
    seed: int = 0,
) -> PoseEstimate:
    """Seeded RANSAC over 6-point EPnP samples with a final consensus refit.

    Adaptive early exit at 99.9% confidence; raises NoConsensus when no pose
    explains at least 6 points.
    """
    n = len(gc)
    if n < MIN_PNP_POINTS:
        raise TooFewPoints(f"RANSAC-PnP needs >= {MIN_PNP_POINTS} points, got {n}")
    world = np.asarray([c.model_point for c in gc], dtype=np.float64)
    image = np.asarray([c.image_point for c in gc], dtype=np.float64)
    rng = np.random.default_rng(seed)

    best_inliers = None
    best_count = 0
    best_err = np.inf
    iters_needed = max_iters if n > MIN_PNP_POINTS else 1
    i = 0
    while i < min(max_iters, iters_needed):
        i += 1
        sample = (
            np.arange(n)
            if n == MIN_PNP_POINTS
            else rng.choice(n, size=MIN_PNP_POINTS, replace=False)
        )
        try:
            pose = epnp([gc[j] for j in sample], k)
        except (DegenerateConfiguration, TooFewPoints):
            continue
        errors = _reprojection_errors(world, image, pose, k)
        inliers = errors < threshold_px
        count = int(inliers.sum())
        mean_err = errors[inliers].mean() if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count = count
            best_inliers = inliers
            best_err = mean_err
            ratio = count / n
            if 0 < ratio < 1:
                denom = np.log1p(-min(ratio**MIN_PNP_POINTS, 1 - 1e-12))
                iters_needed = min(max_iters, int(np.ceil(np.log(1e-3) / denom)))
            elif ratio >= 1:
                iters_needed = i  # perfect consensus: stop

    if best_inliers is None or best_count < MIN_PNP_POINTS:
        raise NoConsensus(f"best consensus has {best_count} < {MIN_PNP_POINTS} inliers")

    pose = epnp([gc[j] for j in np.nonzero(best_inliers)[0]], k)
    inliers = _reprojection_errors(world, image, pose, k) < threshold_px
    if inliers.sum() < MIN_PNP_POINTS:
        inliers = best_inliers  # refit drifted; keep the sampling consensus
    # consensus polish: GN to the least-squares pose, re-selecting inliers
    for _ in range(3):
        pose = _refine_pose(world[inliers], image[inliers], k, pose)
        refined = _reprojection_errors(world, image, pose, k) < threshold_px
        if refined.sum() < MIN_PNP_POINTS or np.array_equal(refined, inliers):
            break
        inliers = refined
    errors = _reprojection_errors(world, image, pose, k)
    rmse = float(np.sqrt((errors[inliers] ** 2).mean()))
    return PoseEstimate(
        pose=pose,
        inliers=int(inliers.sum()),
        reprojection_rmse=rmse,
        template_id=-1,
        elapsed=0.0,
    )


# ---------------------------------------------------------------------------
# Full per-query pipeline
# ---------------------------------------------------------------------------


def _stage_seeds(seed: int, crop_id: str) -> list:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(crop_id.encode("utf-8"))])
    return [int(s) for s in ss.generate_state(4)]


def estimate_pose(
    q: QueryCrop, templates: list, mesh: TriangleMesh, config
) -> PoseEstimate:
    """Run the whole chain for one query crop.

    match_template -> hyperfeature assembly -> clustering and cluster-wise
    matching -> sub-pixel refinement -> lifting -> RANSAC-EPnP. All stage
    randomness derives from config.seed and the crop id.
    """
    start = time.perf_counter()
    seeds = _stage_seeds(config.seed, q.crop_id)

    result = match_template(q, templates, match_layer=config.match_layer)
    template = next(t for t in templates if t.template_id == result.template_id)

    qh, th = assemble_for_config(q, template, config)
    q_cl, t_cl = corr.cluster_jointly(
        qh, q.mask, th, template.mask, config.clusters, seeds[0]
    )
    cm = corr.match_clusters(
        q_cl.clusters, t_cl.clusters, min_similarity=config.cluster_sim_floor
    )
    cm = corr.ransac_filter(
        cm,
        q_cl.centroid_positions(),
        t_cl.centroid_positions(),
        seed=seeds[2],
        threshold=config.sampson_thresh,
    )
    cs = corr.match_within_clusters(q_cl, t_cl, cm, top_k=config.top_k)
    cs = corr.subpixel_refine(cs, qh, th, kernel=config.kernel)

    gc = lift(cs, template, mesh, q, (qh.height, qh.width))
    estimate = ransac_pnp(
        gc,
        q.scene_intrinsics,
        threshold_px=config.ransac_px,
        max_iters=config.pnp_iters,
        seed=seeds[3],
    )
    estimate.template_id = result.template_id
    estimate.elapsed = time.perf_counter() - start
    return estimate


def assemble_for_config(q: QueryCrop, template: TemplateRecord, config):
    mode = getattr(config, "coprojection", "joint")
    return hf.assemble(
        q, template, layers=config.layers, pca_dim=config.pca_dim, mode=mode
    )
