"""Point-cloud and mesh file handling plus normalization bookkeeping.

Supported inputs: `.xyz`/`.txt` (whitespace-separated `x y z` or
`x y z nx ny nz` per line, `#` comments allowed) and ASCII PLY with
x/y/z (and optional nx/ny/nz) vertex properties. Meshes load from
ASCII OBJ (v/f) or ASCII PLY. Floats are written with 9 significant
digits.

Normalization centers the bounding box and scales the largest extent
to 1, so every cloud lands in [-0.5, 0.5]^d; the transform is kept so
outputs can be mapped back to the original frame.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CloudFormatError, ConfigurationError, MeshFormatError
from .spatial import PointCloud


def _fmt(x):
    return f"{x:.9g}"


@dataclass(frozen=True)
class NormalizationTransform:
    """normalized = (x - translation) * scale."""

    translation: tuple
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) * self.scale

    def inverse(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.translation)

    def to_dict(self):
        return {"translation": list(self.translation), "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["translation"]), float(d["scale"]))


def normalize(cloud):
    """Center the bounding box and scale the max extent to 1.

    Returns (normalized cloud, transform). Normals are directions and
    pass through unchanged (translation and uniform scaling do not
    rotate them).
    """
    if cloud.size == 0:
        raise ConfigurationError("cannot normalize an empty cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise ConfigurationError("cloud has zero extent (all points identical)")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(tuple(center.tolist()), 1.0 / extent)
    return PointCloud(transform.apply(cloud.points), normals=cloud.normals), transform


# ---------------------------------------------------------------------------
# point clouds


def _parse_cloud_lines(lines, origin="<input>"):
    points, normals = [], []
    ncols = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 6):
            raise CloudFormatError(
                f"{origin}: line {lineno}: expected 3 or 6 columns, got {len(parts)}",
                line=lineno,
            )
        if ncols is None:
            ncols = len(parts)
        elif len(parts) != ncols:
            raise CloudFormatError(
                f"{origin}: line {lineno}: mixed column counts ({len(parts)} after {ncols})",
                line=lineno,
            )
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise CloudFormatError(
                f"{origin}: line {lineno}: non-numeric token in {line!r}", line=lineno
            ) from None
        points.append(values[:3])
        if ncols == 6:
            normals.append(values[3:])
    if not points:
        raise CloudFormatError(f"{origin}: no points found", line=None)
    points = np.asarray(points)
    if normals:
        normals = np.asarray(normals)
        lengths = np.linalg.norm(normals, axis=1)
        bad = np.nonzero(lengths == 0)[0]
        if bad.size:
            raise CloudFormatError(
                f"{origin}: zero-length normal on point {bad[0] + 1}", line=None
            )
        normals = normals / lengths[:, None]
        return PointCloud(points, normals=normals)
    return PointCloud(points)


def _parse_ply_header(lines, origin):
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{origin}: not a PLY file (missing 'ply' magic)", line=1)
    elements = []  # (name, count, [property names])
    fmt = None
    i = 1
    while i < len(lines):
        parts = lines[i].strip().split()
        i += 1
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{origin}: property before element", line=i)
            elements[-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            break
    else:
        raise MeshFormatError(f"{origin}: missing end_header", line=i)
    if fmt != "ascii":
        raise MeshFormatError(f"{origin}: only ASCII PLY is supported, got {fmt!r}")
    return elements, i


def _read_ply(text, origin):
    lines = text.splitlines()
    elements, body_start = _parse_ply_header(lines, origin)
    cursor = body_start
    data = {}
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            if cursor >= len(lines):
                raise MeshFormatError(f"{origin}: truncated {name} data", line=cursor + 1)
            rows.append(lines[cursor].split())
            cursor += 1
        data[name] = (props, rows)
    return data


def _ply_vertices(data, origin):
    if "vertex" not in data:
        raise MeshFormatError(f"{origin}: no vertex element")
    props, rows = data["vertex"]
    try:
        cols = {p: [float(r[i]) for r in rows] for i, p in enumerate(props)}
    except (ValueError, IndexError):
        raise MeshFormatError(f"{origin}: malformed vertex row") from None
    for axis in "xyz":
        if axis not in cols:
            raise MeshFormatError(f"{origin}: vertex element lacks property {axis!r}")
    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    normals = None
    if all(f"n{a}" in cols for a in "xyz"):
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
    return points, normals


def read_cloud(path):
    """Load a point cloud from .xyz/.txt or ASCII PLY."""
    path = str(path)
    ext = path.rsplit(".", 1)[-1].lower()
    with open(path, "r") as fh:
        text = fh.read()
    if ext in ("xyz", "txt"):
        return _parse_cloud_lines(text.splitlines(), origin=path)
    if ext == "ply":
        points, normals = _ply_vertices(_read_ply(text, path), path)
        if normals is not None:
            lengths = np.linalg.norm(normals, axis=1)
            if np.any(lengths == 0):
                raise CloudFormatError(f"{path}: zero-length normal")
            normals = normals / lengths[:, None]
        return PointCloud(points, normals=normals)
    raise CloudFormatError(f"{path}: unsupported extension {ext!r} (use .xyz, .txt or .ply)")


def write_cloud(cloud, path):
    """Write a cloud as .xyz (3 or 6 columns) or ASCII PLY."""
    path = str(path)
    ext = path.rsplit(".", 1)[-1].lower()
    if ext in ("xyz", "txt"):
        rows = []
        for i in range(cloud.size):
            row = " ".join(_fmt(v) for v in cloud.points[i])
            if cloud.normals is not None:
                row += " " + " ".join(_fmt(v) for v in cloud.normals[i])
            rows.append(row)
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")
        return
    if ext == "ply":
        has_n = cloud.normals is not None
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {cloud.size}",
            "property double x",
            "property double y",
            "property double z",
        ]
        if has_n:
            header += ["property double nx", "property double ny", "property double nz"]
        header += ["element face 0", "property list uchar int vertex_indices", "end_header"]
        rows = header
        for i in range(cloud.size):
            row = " ".join(_fmt(v) for v in cloud.points[i])
            if has_n:
                row += " " + " ".join(_fmt(v) for v in cloud.normals[i])
            rows.append(row)
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")
        return
    raise CloudFormatError(f"{path}: unsupported extension {ext!r}")


# ---------------------------------------------------------------------------
# meshes


def read_mesh_bytes(data, fmt, origin="<bytes>"):
    """Parse mesh bytes; returns (vertices, triangles)."""
    text = data.decode() if isinstance(data, (bytes, bytearray)) else data
    if fmt == "obj":
        verts, faces = [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                try:
                    verts.append([float(v) for v in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(f"{origin}: line {lineno}: bad vertex", line=lineno) from None
            elif parts[0] == "f":
                ids = [int(p.split("/")[0]) for p in parts[1:]]
                if len(ids) != 3:
                    raise MeshFormatError(
                        f"{origin}: line {lineno}: only triangle faces are supported",
                        line=lineno,
                    )
                faces.append([i - 1 for i in ids])
        return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(
            faces, dtype=np.int64
        ).reshape(-1, 3)
    if fmt == "ply":
        data = _read_ply(text, origin)
        points, _ = _ply_vertices(data, origin)
        faces = []
        if "face" in data:
            _, rows = data["face"]
            for row in rows:
                n = int(row[0])
                if n != 3:
                    raise MeshFormatError(f"{origin}: only triangle faces are supported")
                faces.append([int(v) for v in row[1:4]])
        return points, np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    raise MeshFormatError(f"{origin}: unsupported mesh format {fmt!r}")


def read_mesh(path):
    path = str(path)
    ext = path.rsplit(".", 1)[-1].lower()
    with open(path, "rb") as fh:
        return read_mesh_bytes(fh.read(), ext, origin=path)
