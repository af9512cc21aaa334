"""Rigid-body poses, pinhole cameras, and crop-coordinate bookkeeping.

Conventions used throughout the package:

- Poses are model-to-camera transforms: ``x_cam = R @ x_model + t``.
- Translations and 3D points are in millimeters.
- Image coordinates put pixel centers at integer positions, origin at the
  top-left corner, u rightward, v downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth

_ORTHO_TOL = 1e-9
MIN_DEPTH_MM = 1e-9


def _as_array(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Pose:
    """Rigid model-to-camera transform: 3x3 rotation plus translation in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3), "rotation")
        t = _as_array(self.translation, (3,), "translation")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation determinant is {det}, expected +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, rotation, translation) -> "Pose":
        """Build a pose from possibly rounded values (e.g. dataset files).

        Entries may deviate from a proper rotation by up to 1e-6 (rounding in
        serialized files); the matrix is snapped to the nearest rotation.
        """
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        snapped = nearest_rotation(r)
        err = np.abs(r - snapped).max()
        if err > 1e-6:
            raise ValueError(f"rotation too far from orthonormal to repair ({err:.3e})")
        return cls(snapped, np.asarray(translation, dtype=np.float64).reshape(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the pose to an (N, 3) array of model-frame points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto the closest proper rotation (Frobenius sense)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def compose(a: Pose, b: Pose) -> Pose:
    """Pose that applies ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    ax = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(ax)
    if norm < 1e-12:
        raise ValueError("rotation axis must be non-zero")
    x, y, z = ax / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, k, width: int, height: int) -> "CameraIntrinsics":
        k = np.asarray(k, dtype=np.float64).reshape(3, 3)
        return cls(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], width=width, height=height)


def project(points: np.ndarray, pose: Pose, k: CameraIntrinsics) -> np.ndarray:
    """Project (N, 3) model-frame points to (N, 2) pixel coordinates.

    Raises NonPositiveDepth if any transformed point ends up at or behind
    the camera plane (z <= 1e-9 mm).
    """
    cam = pose.transform(points)
    z = cam[:, 2]
    if np.any(z <= MIN_DEPTH_MM):
        raise NonPositiveDepth(f"{int(np.sum(z <= MIN_DEPTH_MM))} point(s) at z <= 0")
    u = k.fx * cam[:, 0] / z + k.cx
    v = k.fy * cam[:, 1] / z + k.cy
    return np.stack([u, v], axis=1)


def backproject(pixels: np.ndarray, depths: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Lift (N, 2) pixel coordinates with per-pixel depth (mm) to camera-frame points."""
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    x = (px[:, 0] - k.cx) / k.fx
    y = (px[:, 1] - k.cy) / k.fy
    return np.stack([x * d, y * d, d], axis=1)


@dataclass(frozen=True)
class CropTransform:
    """Affine map between a resampled square crop and the source image.

    ``scale`` is crop pixels per source pixel; ``offset_x``/``offset_y`` are
    the source coordinates of the crop origin.
    """

    scale: float
    offset_x: float
    offset_y: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def source_to_crop(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        offset = np.array([self.offset_x, self.offset_y])
        return (pts - offset) * self.scale

    def crop_to_source(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        offset = np.array([self.offset_x, self.offset_y])
        return pts / self.scale + offset


@dataclass(frozen=True)
class SymmetrySet:
    """Model-frame symmetry transforms; the first entry is always identity."""

    transforms: tuple

    def __post_init__(self):
        if len(self.transforms) == 0:
            raise ValueError("symmetry set must be non-empty")
        first = self.transforms[0]
        if (
            np.abs(first.rotation - np.eye(3)).max() > 1e-9
            or np.abs(first.translation).max() > 1e-9
        ):
            raise ValueError("first symmetry transform must be identity")
        object.__setattr__(self, "transforms", tuple(self.transforms))

    def __len__(self) -> int:
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    @classmethod
    def identity_only(cls) -> "SymmetrySet":
        return cls((Pose.identity(),))
