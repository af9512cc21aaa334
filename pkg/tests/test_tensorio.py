import struct

import numpy as np
import pytest
from PIL import Image

from zeropose import tensorio as tio
from zeropose.errors import (
    BadMagic,
    NonFiniteValue,
    TruncatedFile,
    UnsupportedBitDepth,
    VersionMismatch,
)


def test_feature_map_roundtrip_bit_exact(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    fm = tio.FeatureMap(layer_id=5, data=data)
    path = tmp_path / "fm.dfm"
    tio.write_feature_map(fm, path)
    back = tio.read_feature_map(path)
    assert back.layer_id == 5
    assert back.data.shape == (2, 2, 2)
    assert back.data.tobytes() == fm.data.tobytes()


def test_writes_are_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    fm = tio.FeatureMap(layer_id=2, data=rng.normal(size=(3, 4, 5)).astype(np.float32))
    p1 = tmp_path / "a.dfm"
    p2 = tmp_path / "b.dfm"
    tio.write_feature_map(fm, p1)
    tio.write_feature_map(fm, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    fm = tio.FeatureMap(layer_id=11, data=np.zeros((1, 2, 3), dtype=np.float32))
    path = tmp_path / "h.dfm"
    tio.write_feature_map(fm, path)
    raw = path.read_bytes()
    assert raw[:4] == b"DFM1"
    assert raw[4] == 1  # version
    assert raw[5] == 0  # dtype f32
    assert raw[6:8] == b"\x00\x00"
    layer, c, h, w = struct.unpack_from("<IIII", raw, 8)
    assert (layer, c, h, w) == (11, 1, 2, 3)
    assert len(raw) == 24 + 4 * 6


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dfm"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(BadMagic):
        tio.read_feature_map(path)


def test_version_mismatch(tmp_path):
    fm = tio.FeatureMap(layer_id=1, data=np.zeros((1, 1, 1), dtype=np.float32))
    path = tmp_path / "v.dfm"
    tio.write_feature_map(fm, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        tio.read_feature_map(path)


def test_truncated_payload(tmp_path):
    # header declares 8 floats, file holds 7
    fm = tio.FeatureMap(layer_id=1, data=np.zeros((2, 2, 2), dtype=np.float32))
    path = tmp_path / "t.dfm"
    tio.write_feature_map(fm, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(TruncatedFile):
        tio.read_feature_map(path)


def test_reader_rejects_nan(tmp_path):
    fm = tio.FeatureMap(layer_id=1, data=np.ones((1, 1, 2), dtype=np.float32))
    path = tmp_path / "n.dfm"
    tio.write_feature_map(fm, path)
    raw = bytearray(path.read_bytes())
    raw[24:28] = struct.pack("<f", np.nan)
    path.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteValue):
        tio.read_feature_map(path)


def test_feature_map_constructor_rejects_inf():
    with pytest.raises(NonFiniteValue):
        tio.FeatureMap(layer_id=0, data=np.array([[[np.inf]]], dtype=np.float32))


def test_mask_roundtrip_and_empty(tmp_path):
    path = tmp_path / "mask.png"
    tio.write_mask(np.zeros((4, 4), dtype=bool), path)
    back = tio.read_mask(path)
    assert back.dtype == bool and back.sum() == 0

    mask = np.zeros((6, 7), dtype=bool)
    mask[2:4, 1:5] = True
    tio.write_mask(mask, path)
    assert np.array_equal(tio.read_mask(path), mask)


def test_mask_rejects_16bit(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(path)
    with pytest.raises(UnsupportedBitDepth):
        tio.read_mask(path)


def test_depth_scale_arithmetic(tmp_path):
    path = tmp_path / "depth.png"
    Image.fromarray(np.full((2, 2), 1500, dtype=np.uint16)).save(path)
    depth = tio.read_depth(path, depth_scale=0.1)
    assert np.allclose(depth, 150.0)


def test_depth_roundtrip(tmp_path):
    path = tmp_path / "d.png"
    depth = np.array([[0.0, 12.3], [4000.0, 655.35]])
    tio.write_depth(depth, path, depth_scale=0.1)
    back = tio.read_depth(path, depth_scale=0.1)
    assert np.abs(back - depth).max() <= 0.05 + 1e-9  # half a quantization step


def test_depth_rejects_8bit(tmp_path):
    path = tmp_path / "d8.png"
    Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(path)
    with pytest.raises(UnsupportedBitDepth):
        tio.read_depth(path)


def test_nocs_byte_normalization(tmp_path):
    path = tmp_path / "n.png"
    arr = np.zeros((1, 1, 3), dtype=np.uint8)
    arr[0, 0] = (255, 0, 128)
    Image.fromarray(arr, mode="RGB").save(path)
    nocs = tio.read_nocs(path)
    assert np.allclose(nocs[0, 0], [1.0, 0.0, 128 / 255])


def test_nocs_roundtrip_quantization(tmp_path):
    rng = np.random.default_rng(1)
    nocs = rng.uniform(size=(8, 8, 3))
    path = tmp_path / "r.png"
    tio.write_nocs(nocs, path)
    back = tio.read_nocs(path)
    assert np.abs(back - nocs).max() <= 0.5 / 255 + 1e-12


def test_resample_mask_any_pool_keeps_thin_objects():
    mask = np.zeros((8, 8), dtype=bool)
    mask[3, :] = True  # one-pixel line
    small = tio.resample_mask(mask, 4, 4)
    assert small[1].all()  # row 3 maps into cell row 1
    assert small.sum() == 4


def test_resample_mask_identity_and_upsample():
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    assert tio.resample_mask(mask, 2, 2) is mask or np.array_equal(
        tio.resample_mask(mask, 2, 2), mask
    )
    up = tio.resample_mask(mask, 4, 4)
    assert up.shape == (4, 4)
    assert up[0, 0] and up[3, 3] and not up[0, 3]


def test_manifest_validation():
    from zeropose.errors import VersionMismatch

    fm = tio.FeatureMap(layer_id=11, data=np.zeros((64, 32, 32), dtype=np.float32))
    manifest = {"layers": {"11": [64, 32, 32]}}
    tio.validate_manifest(fm, manifest, 11)  # matching shapes pass
    with pytest.raises(VersionMismatch):
        tio.validate_manifest(fm, {"layers": {"11": [64, 16, 16]}}, 11)
    with pytest.raises(VersionMismatch):
        tio.validate_manifest(fm, {"layers": {}}, 11)
