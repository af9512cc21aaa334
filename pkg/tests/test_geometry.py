import numpy as np
import pytest

from zeropose import geometry as g
from zeropose.errors import NonPositiveDepth


def random_pose(rng):
    axis = rng.normal(size=3)
    angle = rng.uniform(-np.pi, np.pi)
    r = g.axis_angle_rotation(axis, angle)
    t = rng.uniform(-500, 500, size=3)
    return g.Pose(r, t)


def test_compose_identity():
    ident = g.Pose.identity()
    out = g.compose(ident, ident)
    assert np.allclose(out.rotation, np.eye(3))
    assert np.allclose(out.translation, 0.0)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(7)
    p = random_pose(rng)
    out = g.compose(p, g.invert(p))
    assert np.abs(out.rotation - np.eye(3)).max() < 1e-9
    assert np.abs(out.translation).max() < 1e-9


def test_compose_hand_example():
    # Rz(90) + t=(1,0,0) after Rz(90) + t=0: rotation Rz(180), translation (1,0,0)
    rz90 = g.axis_angle_rotation([0, 0, 1], np.pi / 2)
    a = g.Pose(rz90, np.array([1.0, 0.0, 0.0]))
    b = g.Pose(rz90, np.zeros(3))
    out = g.compose(a, b)
    expected_r = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(out.rotation, expected_r, atol=1e-12)
    assert np.allclose(out.translation, [1.0, 0.0, 0.0], atol=1e-12)


def test_invert_pure_translation():
    p = g.Pose(np.eye(3), np.array([1.0, 2.0, 3.0]))
    inv = g.invert(p)
    assert np.allclose(inv.rotation, np.eye(3))
    assert np.allclose(inv.translation, [-1.0, -2.0, -3.0])


def test_invert_compose_property_many_seeds():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        p = random_pose(rng)
        out = g.compose(g.invert(p), p)
        assert np.abs(out.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(out.translation).max() < 1e-9


def test_pose_rejects_non_orthonormal():
    bad = np.eye(3)
    bad[0, 1] = 1e-6
    with pytest.raises(ValueError):
        g.Pose(bad, np.zeros(3))


def test_pose_rejects_reflection():
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        g.Pose(refl, np.zeros(3))


def test_from_rt_repairs_rounded_rotation():
    rng = np.random.default_rng(5)
    p = random_pose(rng)
    rounded = np.round(p.rotation, 7)  # ~1e-7 off orthonormal
    repaired = g.Pose.from_rt(rounded, p.translation)
    assert np.abs(repaired.rotation - p.rotation).max() < 1e-6


def intrinsics_500():
    return g.CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640, height=480)


def test_project_optical_axis():
    k = intrinsics_500()
    uv = g.project(np.array([[0.0, 0.0, 100.0]]), g.Pose.identity(), k)
    assert np.allclose(uv, [[320.0, 240.0]])


def test_project_hand_value():
    k = intrinsics_500()
    uv = g.project(np.array([[10.0, 0.0, 100.0]]), g.Pose.identity(), k)
    assert np.allclose(uv, [[370.0, 240.0]])  # 500*10/100 + 320


def test_project_zero_depth_raises():
    k = intrinsics_500()
    with pytest.raises(NonPositiveDepth):
        g.project(np.array([[0.0, 0.0, 0.0]]), g.Pose.identity(), k)


def test_project_backproject_roundtrip():
    k = intrinsics_500()
    rng = np.random.default_rng(11)
    pixels = rng.uniform([0, 0], [639, 479], size=(200, 2))
    depths = rng.uniform(10, 5000, size=200)
    points = g.backproject(pixels, depths, k)
    uv = g.project(points, g.Pose.identity(), k)
    assert np.abs(uv - pixels).max() < 1e-6


def test_crop_transform_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(100):
        ct = g.CropTransform(
            scale=rng.uniform(0.1, 10.0),
            offset_x=rng.uniform(-100, 100),
            offset_y=rng.uniform(-100, 100),
        )
        pts = rng.uniform(-50, 200, size=(20, 2))
        again = ct.source_to_crop(ct.crop_to_source(pts))
        assert np.abs(again - pts).max() < 1e-9


def test_crop_transform_rejects_bad_scale():
    with pytest.raises(ValueError):
        g.CropTransform(scale=0.0, offset_x=0.0, offset_y=0.0)


def test_symmetry_set_requires_identity_head():
    rz = g.Pose(g.axis_angle_rotation([0, 0, 1], np.pi), np.zeros(3))
    with pytest.raises(ValueError):
        g.SymmetrySet((rz,))
    ok = g.SymmetrySet((g.Pose.identity(), rz))
    assert len(ok) == 2


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        g.CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        g.CameraIntrinsics(fx=1, fy=1, cx=10, cy=0, width=10, height=10)
