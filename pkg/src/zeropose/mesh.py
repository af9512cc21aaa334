"""Triangle meshes and PLY ingestion (ascii and binary little-endian)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import IndexOutOfRange, MalformedHeader, UnsupportedElement

_PLY_SCALAR = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices in mm, triangle vertex indices, cached extents and diameter."""

    vertices: np.ndarray
    triangles: np.ndarray
    extents_min: np.ndarray = field(init=False)
    extents_max: np.ndarray = field(init=False)
    diameter: float = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError("vertices must have shape (N, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("triangles must have shape (M, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise IndexOutOfRange(
                f"face references vertex {tris.max()} of {len(verts)}"
            )
        diameter = _point_set_diameter(verts)
        if diameter <= 0:
            raise ValueError("mesh diameter must be positive")
        verts.flags.writeable = False
        tris.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        ext_min = verts.min(axis=0)
        ext_max = verts.max(axis=0)
        ext_min.flags.writeable = False
        ext_max.flags.writeable = False
        object.__setattr__(self, "extents_min", ext_min)
        object.__setattr__(self, "extents_max", ext_max)
        object.__setattr__(self, "diameter", float(diameter))

    def nocs_of_points(self, points: np.ndarray) -> np.ndarray:
        """Map model-frame points to normalized [0,1]^3 coordinates."""
        span = np.maximum(self.extents_max - self.extents_min, 1e-12)
        return (np.asarray(points, dtype=np.float64) - self.extents_min) / span

    def points_of_nocs(self, nocs: np.ndarray) -> np.ndarray:
        span = self.extents_max - self.extents_min
        return self.extents_min + np.asarray(nocs, dtype=np.float64) * span


def _point_set_diameter(verts: np.ndarray) -> float:
    """Max pairwise vertex distance; goes through the convex hull when large."""
    pts = verts
    if len(pts) > 400:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # degenerate (flat) clouds: fall through to brute force
    if len(pts) > 3000:
        pts = pts[:: len(pts) // 3000 + 1]
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).max()) if len(pts) else 0.0


def _parse_header(f):
    """Read the PLY header; returns (format, [(elem_name, count, properties)])."""
    magic = f.readline().strip()
    if magic != b"ply":
        raise MalformedHeader("missing 'ply' magic line")
    fmt = None
    elements = []
    while True:
        line = f.readline()
        if not line:
            raise MalformedHeader("header ended before end_header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedElement(f"unsupported PLY format: {' '.join(tokens[1:])}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise MalformedHeader(f"bad list property: {line!r}")
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                if len(tokens) != 3:
                    raise MalformedHeader(f"bad property line: {line!r}")
                elements[-1][2].append(("scalar", tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            break
        else:
            raise MalformedHeader(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise MalformedHeader("header has no format line")
    return fmt, elements


def _scalar_dtype(name: str) -> np.dtype:
    if name not in _PLY_SCALAR:
        raise UnsupportedElement(f"unsupported property type {name}")
    return np.dtype("<" + _PLY_SCALAR[name])


def parse_ply(path) -> TriangleMesh:
    """Parse an ascii or binary little-endian PLY into a TriangleMesh.

    Vertex x/y/z and triangular faces are read; extra scalar properties are
    skipped. Faces with more than three indices are fan-triangulated.
    """
    with open(path, "rb") as f:
        fmt, elements = _parse_header(f)
        names = [e[0] for e in elements]
        if "vertex" not in names or "face" not in names:
            raise MalformedHeader("PLY must declare vertex and face elements")
        vertices = None
        faces = []
        for name, count, props in elements:
            if name == "vertex":
                vertices = _read_vertices(f, fmt, count, props)
            elif name == "face":
                faces = _read_faces(f, fmt, count, props)
                break  # trailing elements are not needed
            else:
                # unknown element before the data we need: cannot safely skip
                raise UnsupportedElement(f"unsupported element '{name}' precedes vertex/face")
    if vertices is None:
        raise MalformedHeader("vertex element missing")
    triangles = []
    for face in faces:
        if len(face) < 3:
            raise MalformedHeader(f"face with {len(face)} indices")
        for i in range(1, len(face) - 1):
            triangles.append((face[0], face[i], face[i + 1]))
    return TriangleMesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        triangles=np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
    )


def _read_vertices(f, fmt, count, props):
    fields = []
    for p in props:
        if p[0] == "list":
            raise UnsupportedElement("list property on vertex element")
        fields.append((p[2], _scalar_dtype(p[1])))
    for needed in ("x", "y", "z"):
        if needed not in [name for name, _ in fields]:
            raise MalformedHeader(f"vertex element missing property {needed}")
    if fmt == "ascii":
        rows = []
        idx = {name: i for i, (name, _) in enumerate(fields)}
        for _ in range(count):
            tokens = _next_ascii_row(f, len(fields))
            rows.append([float(tokens[idx["x"]]), float(tokens[idx["y"]]), float(tokens[idx["z"]])])
        return np.asarray(rows, dtype=np.float64)
    dtype = np.dtype([(name, dt) for name, dt in fields])
    raw = f.read(dtype.itemsize * count)
    if len(raw) < dtype.itemsize * count:
        raise MalformedHeader("vertex data truncated")
    rec = np.frombuffer(raw, dtype=dtype, count=count)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)


def _read_faces(f, fmt, count, props):
    if not props or props[0][0] != "list":
        raise MalformedHeader("face element must start with a list property")
    _, count_type, index_type, list_name = props[0]
    if list_name not in ("vertex_indices", "vertex_index"):
        raise UnsupportedElement(f"unsupported face list '{list_name}'")
    extra = props[1:]
    for p in extra:
        if p[0] == "list":
            raise UnsupportedElement("multiple list properties on face element")
    count_dt = _scalar_dtype(count_type)
    index_dt = _scalar_dtype(index_type)
    faces = []
    if fmt == "ascii":
        for _ in range(count):
            tokens = _next_ascii_row(f, 1)
            n = int(tokens[0])
            if len(tokens) < 1 + n:
                raise MalformedHeader("face row shorter than its declared length")
            faces.append([int(t) for t in tokens[1 : 1 + n]])
        return faces
    extra_size = sum(_scalar_dtype(p[1]).itemsize for p in extra)
    for _ in range(count):
        raw = f.read(count_dt.itemsize)
        if len(raw) < count_dt.itemsize:
            raise MalformedHeader("face data truncated")
        n = int(np.frombuffer(raw, dtype=count_dt)[0])
        raw = f.read(index_dt.itemsize * n)
        if len(raw) < index_dt.itemsize * n:
            raise MalformedHeader("face data truncated")
        faces.append(np.frombuffer(raw, dtype=index_dt).astype(np.int64).tolist())
        if extra_size:
            f.read(extra_size)
    return faces


def _next_ascii_row(f, min_tokens):
    while True:
        line = f.readline()
        if not line:
            raise MalformedHeader("ascii body truncated")
        tokens = line.decode("ascii", errors="replace").split()
        if tokens:
            if len(tokens) < min_tokens:
                raise MalformedHeader(f"short ascii row: {line!r}")
            return tokens
