"""Zero level set extraction: dense grid evaluation plus marching cubes.

Vertices are created on grid edges at linearly interpolated zero
crossings and deduplicated by a global (lattice point, axis) edge key,
so closed surfaces come out watertight. Cells are processed in flat
index order, which fixes the vertex numbering. Triangles are oriented
with their normals pointing toward positive field values (outward for
a signed distance field).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_ENDS, EDGE_TABLE, TRI_TABLE
from .errors import ConfigurationError, EmptyMeshWarning

_DEGENERATE_AREA = 1e-12


@dataclass
class ScalarGrid:
    """Sampled scalar field; values flat in x-fastest order."""

    resolution: tuple
    bounds: tuple  # (min corner, max corner)
    values: np.ndarray

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        lo, hi = self.bounds
        self.bounds = (np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if any(r < 2 for r in self.resolution):
            raise ConfigurationError(f"resolution must be >= 2 per axis, got {self.resolution}")
        if self.values.size != int(np.prod(self.resolution)):
            raise ConfigurationError(
                f"value count {self.values.size} != resolution product {np.prod(self.resolution)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid values must be finite")

    def axes(self):
        lo, hi = self.bounds
        return [np.linspace(lo[a], hi[a], self.resolution[a]) for a in range(3)]

    def as_array(self):
        """Values as an (nx, ny, nz) array."""
        nx, ny, nz = self.resolution
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)

    def value_at(self, i, j, k):
        nx, ny, _ = self.resolution
        return self.values[i + nx * (j + ny * k)]


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ConfigurationError("triangle indices out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise ConfigurationError("per-vertex normals must match vertex count")

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def triangle_areas(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self):
        return float(np.sum(self.triangle_areas())) if len(self.triangles) else 0.0

    def face_normals(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(lengths > 0, lengths, 1.0)

    def edge_counts(self):
        """Map undirected edge -> number of incident triangles."""
        counts = {}
        for tri in self.triangles:
            for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(u, v), max(u, v))
                counts[key] = counts.get(key, 0) + 1
        return counts


def eval_grid(net, bounds, resolution, chunk=32768):
    """Evaluate the network on a regular lattice including both corners."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution, resolution)
    if any(r < 2 for r in resolution):
        raise ConfigurationError(f"resolution must be >= 2 per axis, got {resolution}")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    xs, ys, zs = (np.linspace(lo[a], hi[a], resolution[a]) for a in range(3))
    nx, ny, nz = resolution
    # x varies fastest in the flat layout
    pts = np.empty((nz, ny, nx, 3))
    pts[..., 0] = xs[None, None, :]
    pts[..., 1] = ys[None, :, None]
    pts[..., 2] = zs[:, None, None]
    flat = pts.reshape(-1, 3)
    values = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        values[start : start + chunk] = net.eval_batch(flat[start : start + chunk])
    return ScalarGrid(resolution, (lo, hi), values)


def marching_cubes(grid, iso=0.0):
    """Extract the iso-surface as a watertight triangle mesh."""
    V = grid.as_array()
    nx, ny, nz = grid.resolution
    xs, ys, zs = grid.axes()

    inside = V < iso
    # cube case index per cell from the eight corner inside-bits
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        case |= (
            inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.uint16)
            << bit
        )
    edge_lookup = np.asarray(EDGE_TABLE, dtype=np.uint16)
    active = np.nonzero(edge_lookup[case] != 0)
    if active[0].size == 0:
        warnings.warn("no zero crossing in grid; returning an empty mesh", EmptyMeshWarning)
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))

    # process cells in flat order so vertex ids are deterministic
    order = np.lexsort((active[0], active[1], active[2]))
    cells = np.stack([axis[order] for axis in active], axis=1)

    vertex_ids = {}  # (lattice flat id, axis) -> vertex index
    vertices = []
    triangles = []

    def corner_value(i, j, k):
        return V[i, j, k]

    def edge_vertex(ci, cj, ck, edge):
        a, b = EDGE_ENDS[edge]
        ax, ay, az = CORNER_OFFSETS[a]
        bx, by, bz = CORNER_OFFSETS[b]
        pa = (ci + ax, cj + ay, ck + az)
        pb = (ci + bx, cj + by, ck + bz)
        # canonical orientation: lower lattice id first
        ida = pa[0] + nx * (pa[1] + ny * pa[2])
        idb = pb[0] + nx * (pb[1] + ny * pb[2])
        if ida > idb:
            pa, pb = pb, pa
            ida, idb = idb, ida
        axis = 0 if idb - ida == 1 else (1 if idb - ida == nx else 2)
        key = (ida, axis)
        vid = vertex_ids.get(key)
        if vid is None:
            va = corner_value(*pa)
            vb = corner_value(*pb)
            t = (iso - va) / (vb - va)
            pos = np.array(
                [
                    xs[pa[0]] + t * (xs[pb[0]] - xs[pa[0]]),
                    ys[pa[1]] + t * (ys[pb[1]] - ys[pa[1]]),
                    zs[pa[2]] + t * (zs[pb[2]] - zs[pa[2]]),
                ]
            )
            vid = len(vertices)
            vertices.append(pos)
            vertex_ids[key] = vid
        return vid

    for ci, cj, ck in cells:
        c = int(case[ci, cj, ck])
        tri_edges = TRI_TABLE[c]
        for e0, e1, e2 in zip(tri_edges[0::3], tri_edges[1::3], tri_edges[2::3]):
            v0 = edge_vertex(ci, cj, ck, e0)
            v1 = edge_vertex(ci, cj, ck, e1)
            v2 = edge_vertex(ci, cj, ck, e2)
            if v0 == v1 or v1 == v2 or v0 == v2:
                continue
            # table order winds clockwise seen from outside; swap for
            # normals that point toward positive field values
            triangles.append((v0, v2, v1))

    verts = np.array(vertices)
    tris = np.array(triangles, dtype=np.int64)
    mesh = TriangleMesh(verts, tris)
    areas = mesh.triangle_areas()
    keep = areas > _DEGENERATE_AREA
    if not np.all(keep):
        mesh = TriangleMesh(verts, tris[keep])
    return mesh


# ---------------------------------------------------------------------------
# export


def _fmt(x):
    return f"{x:.9g}"


def export_mesh(mesh, fmt="obj"):
    """Serialize to ASCII OBJ (v/f, 1-based) or ASCII PLY bytes."""
    if fmt == "obj":
        lines = []
        for v in mesh.vertices:
            lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
        for t in mesh.triangles:
            lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
        return ("\n".join(lines) + "\n").encode()
    if fmt == "ply":
        has_normals = mesh.normals is not None
        header = [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(mesh.vertices)}",
            "property double x",
            "property double y",
            "property double z",
        ]
        if has_normals:
            header += ["property double nx", "property double ny", "property double nz"]
        header += [
            f"element face {len(mesh.triangles)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        lines = header
        for i, v in enumerate(mesh.vertices):
            row = f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}"
            if has_normals:
                n = mesh.normals[i]
                row += f" {_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}"
            lines.append(row)
        for t in mesh.triangles:
            lines.append(f"3 {t[0]} {t[1]} {t[2]}")
        return ("\n".join(lines) + "\n").encode()
    raise ConfigurationError(f"unknown mesh format {fmt!r} (use 'obj' or 'ply')")


def write_mesh(mesh, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    with open(path, "wb") as fh:
        fh.write(export_mesh(mesh, fmt))
