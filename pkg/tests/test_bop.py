import json

import numpy as np
import pytest

from zeropose import bop
from zeropose.errors import ConfigError
from zeropose.geometry import CropTransform, Pose, axis_angle_rotation


def test_read_detections(tmp_path):
    path = tmp_path / "det.json"
    path.write_text(
        json.dumps(
            [
                {
                    "scene_id": 2,
                    "im_id": 7,
                    "obj_id": 5,
                    "mask": "m.png",
                    "bbox": [10, 20, 30, 40],
                    "score": 0.75,
                }
            ]
        )
    )
    dets = bop.read_detections(path)
    assert len(dets) == 1
    d = dets[0]
    assert (d.scene_id, d.image_id, d.object_id) == (2, 7, 5)
    assert d.crop_id == "000002_000007_000005"
    assert d.score == 0.75


def test_read_detections_rejects_bad_bbox(tmp_path):
    path = tmp_path / "det.json"
    path.write_text(
        json.dumps(
            [{"scene_id": 0, "im_id": 0, "obj_id": 1, "mask": "m", "bbox": [0, 0, 0, 5]}]
        )
    )
    with pytest.raises(ConfigError):
        bop.read_detections(path)


def test_scene_camera_and_gt(tmp_path):
    cam = {"3": {"cam_K": [100, 0, 32, 0, 100, 32, 0, 0, 1], "depth_scale": 0.1,
                 "width": 64, "height": 64}}
    (tmp_path / "scene_camera.json").write_text(json.dumps(cam))
    cameras = bop.read_scene_camera(tmp_path / "scene_camera.json")
    assert cameras[3].intrinsics.fx == 100
    assert cameras[3].depth_scale == 0.1

    r = axis_angle_rotation([0, 0, 1], 0.3)
    gt = {"3": [{"obj_id": 5, "cam_R_m2c": np.round(r, 6).reshape(-1).tolist(),
                 "cam_t_m2c": [1.0, 2.0, 500.0]}]}
    (tmp_path / "scene_gt.json").write_text(json.dumps(gt))
    parsed = bop.read_scene_gt(tmp_path / "scene_gt.json")
    obj, pose = parsed[3][0]
    assert obj == 5
    # rounded rotations re-orthonormalized on load
    assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-12
    assert np.abs(pose.rotation - r).max() < 1e-5


def test_square_crop_transform_geometry():
    ct = bop.square_crop_transform((10, 20, 40, 20), crop_size=128, margin=0.1, image_wh=(640, 480))
    side = 40 * 1.1
    assert ct.scale == pytest.approx(128 / side)
    # box center maps to the crop center
    center = ct.source_to_crop(np.array([[30.0, 30.0]]))[0]
    assert center == pytest.approx((64.0, 64.0))


def test_crop_mask_full_image_identity():
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:9, 3:12] = True
    ct = CropTransform(scale=1.0, offset_x=0.0, offset_y=0.0)
    out = bop.crop_mask(mask, ct, 16)
    assert np.array_equal(out, mask)


def test_results_csv_roundtrip_pose_to_1e6(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(10):
        r = axis_angle_rotation(rng.normal(size=3), rng.uniform(0, np.pi))
        t = rng.uniform(-500, 2000, size=3)
        rows.append(
            bop.ResultRow(
                scene_id=1, image_id=i, object_id=3, score=0.5, pose=Pose(r, t), time=-1.0
            )
        )
    path = tmp_path / "results.csv"
    bop.write_results_csv(rows, path)
    back = bop.read_results_csv(path)
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert np.abs(a.pose.rotation - b.pose.rotation).max() < 1e-6
        assert np.abs(a.pose.translation - b.pose.translation).max() < 1e-6


def test_results_csv_deterministic_and_sorted(tmp_path):
    pose = Pose(np.eye(3), np.array([0.0, 0.0, 100.0]))
    rows = [
        bop.ResultRow(2, 0, 1, 1.0, pose, -1.0),
        bop.ResultRow(1, 5, 2, 1.0, pose, -1.0),
        bop.ResultRow(1, 5, 1, 1.0, pose, -1.0),
    ]
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    bop.write_results_csv(rows, p1)
    bop.write_results_csv(list(reversed(rows)), p2)
    assert p1.read_bytes() == p2.read_bytes()
    parsed = bop.read_results_csv(p1)
    keys = [(r.scene_id, r.image_id, r.object_id) for r in parsed]
    assert keys == sorted(keys)


def test_results_csv_rejects_missing_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("not,a,results,file\n")
    with pytest.raises(ConfigError):
        bop.read_results_csv(path)
