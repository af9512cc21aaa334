"""Binary feature-map interchange and image asset I/O.

Feature tensor file layout (little-endian throughout):

    bytes 0-3   magic "DFM1"
    byte  4     version (1)
    byte  5     dtype (0 = float32)
    bytes 6-7   reserved, zero
    4 x uint32  layer_id, channels, height, width
    payload     channels*height*width float32 values, C-order
                (channel-major, then row, then column)

One file per layer per crop, named ``<crop_id>_L<layer>.dfm``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadMagic,
    DecodeError,
    NonFiniteValue,
    TruncatedFile,
    UnsupportedBitDepth,
    VersionMismatch,
)

MAGIC = b"DFM1"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBHIIII")


@dataclass(frozen=True)
class FeatureMap:
    """Dense activation grid for one backbone layer: float32, shape (C, H, W)."""

    layer_id: int
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be 3-D (C, H, W), got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("feature map contains NaN or infinity")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "layer_id", int(self.layer_id))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def feature_map_path(directory, crop_id: str, layer: int) -> Path:
    return Path(directory) / f"{crop_id}_L{layer}.dfm"


def manifest_path(directory, crop_id: str) -> Path:
    return Path(directory) / f"{crop_id}_manifest.json"


def validate_manifest(fm: FeatureMap, manifest: dict, layer: int) -> None:
    """Check a loaded map against the extractor's declared shapes.

    The manifest's ``layers`` entry maps layer index to (channels, height,
    width); a mismatch means the extractor and pipeline disagree about the
    tensor layout and the run must not continue.
    """
    declared = manifest.get("layers", {}).get(str(layer))
    if declared is None:
        raise VersionMismatch(f"manifest lacks layer {layer}")
    actual = [fm.channels, fm.height, fm.width]
    if list(declared) != actual:
        raise VersionMismatch(
            f"layer {layer}: manifest declares {list(declared)}, file holds {actual}"
        )


def write_feature_map(fm: FeatureMap, path) -> None:
    c, h, w = fm.data.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, fm.layer_id, c, h, w)
    payload = fm.data.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        if raw[:4] != MAGIC:
            raise BadMagic(f"{path}: not a feature tensor file")
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, dtype, reserved, layer_id, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    if dtype != DTYPE_F32:
        raise VersionMismatch(f"{path}: unsupported dtype code {dtype}")
    expected = _HEADER.size + 4 * c * h * w
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header declares {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: payload contains NaN or infinity")
    return FeatureMap(layer_id=layer_id, data=data.astype(np.float32))


# ---------------------------------------------------------------------------
# Image assets: 8-bit masks, 16-bit depth (BOP depth_scale), 8-bit RGB NOCS.
# ---------------------------------------------------------------------------


def _open_image(path) -> Image.Image:
    try:
        return Image.open(path)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def read_mask(path) -> np.ndarray:
    """Read an 8-bit single-channel mask; returns a bool (H, W) array."""
    img = _open_image(path)
    if img.mode in ("I", "I;16", "I;16B", "RGB", "RGBA"):
        raise UnsupportedBitDepth(f"{path}: mask must be 8-bit single-channel, got {img.mode}")
    if img.mode not in ("L", "1", "P"):
        raise UnsupportedBitDepth(f"{path}: unsupported mask mode {img.mode}")
    return np.asarray(img.convert("L")) > 0


def write_mask(mask: np.ndarray, path) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def read_depth(path, depth_scale: float = 1.0) -> np.ndarray:
    """Read a 16-bit depth image; returns (H, W) float64 millimeters.

    Stored values are multiplied by ``depth_scale`` (BOP convention); 0 means
    no surface.
    """
    img = _open_image(path)
    if img.mode in ("L", "P", "1", "RGB", "RGBA"):
        raise UnsupportedBitDepth(f"{path}: depth must be 16-bit single-channel, got {img.mode}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise UnsupportedBitDepth(f"{path}: depth must be single-channel")
    if np.any(arr < 0):
        raise DecodeError(f"{path}: negative depth values")
    return arr * float(depth_scale)


def write_depth(depth_mm: np.ndarray, path, depth_scale: float = 1.0) -> None:
    values = np.asarray(depth_mm, dtype=np.float64) / float(depth_scale)
    rounded = np.round(values)
    if rounded.min() < 0 or rounded.max() > 65535:
        raise ValueError("depth out of range for 16-bit storage at this depth_scale")
    img = Image.fromarray(rounded.astype(np.uint16))
    img.save(path)


def read_nocs(path) -> np.ndarray:
    """Read an 8-bit RGB NOCS image; returns (H, W, 3) float64 in [0, 1]."""
    img = _open_image(path)
    if img.mode != "RGB":
        raise UnsupportedBitDepth(f"{path}: NOCS must be 8-bit 3-channel, got {img.mode}")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_nocs(nocs: np.ndarray, path) -> None:
    arr = np.asarray(nocs, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("NOCS image must have shape (H, W, 3)")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("NOCS values must lie in [0, 1]")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def resample_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample a binary mask to a new grid.

    Downsampling keeps a cell foreground if any covered source pixel is
    foreground, so thin structures survive at coarse feature resolutions;
    upsampling is nearest-neighbor.
    """
    m = np.asarray(mask) > 0
    if m.shape == (height, width):
        return m

    def _axis_map(src: int, dst: int) -> np.ndarray:
        # index of the destination bin for each source index (dst <= src)
        return (np.arange(src) * dst) // src

    out = m
    src_h = out.shape[0]
    if height <= src_h:
        bins = _axis_map(src_h, height)
        acc = np.zeros((height, out.shape[1]), dtype=bool)
        np.logical_or.at(acc, bins, out)
        out = acc
    else:
        idx = np.minimum((np.arange(height) * src_h) // height, src_h - 1)
        out = out[idx, :]
    src_w = out.shape[1]
    if width <= src_w:
        bins = _axis_map(src_w, width)
        acc = np.zeros((out.shape[0], width), dtype=bool)
        np.logical_or.at(acc.T, bins, out.T)
        out = acc
    else:
        idx = np.minimum((np.arange(width) * src_w) // width, src_w - 1)
        out = out[:, idx]
    return out
