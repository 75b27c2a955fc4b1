"""Point clouds and the kd-tree that serves nearest-neighbor queries.

The tree is built by median splits on the widest axis and stores leaf
blocks of indices, so queries prune by axis distance and scan leaves
with vectorized arithmetic. Squared distances are always computed as
sum((p - q)**2) over the coordinate axis, the same expression a linear
scan uses, so results agree with brute force bit for bit. Ties go to
the lowest point index.

The index is immutable once built; concurrent queries are safe.
"""

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientPointsError

_LEAF_SIZE = 32


@dataclass
class PointCloud:
    """Surface sample points, optionally with unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise ConfigurationError(
                f"points must be (N, 2) or (N, 3), got {self.points.shape}"
            )
        if not np.all(np.isfinite(self.points)):
            raise ConfigurationError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise ConfigurationError(
                    f"normals shape {self.normals.shape} != points shape {self.points.shape}"
                )
            lengths = np.linalg.norm(self.normals, axis=1)
            if self.size and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ConfigurationError("normals must have unit length (within 1e-6)")

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.size


@dataclass
class _Split:
    axis: int
    value: float
    left: object
    right: object


@dataclass
class _Leaf:
    start: int
    stop: int


class KdIndex:
    """Balanced kd-tree over the indices of a point cloud."""

    def __init__(self, cloud, leaf_size=_LEAF_SIZE):
        if cloud.size == 0:
            raise ConfigurationError("cannot index an empty cloud")
        self.cloud = cloud
        self.points = cloud.points
        self.leaf_size = int(leaf_size)
        order = np.arange(cloud.size)
        self.root = self._build(order, 0, cloud.size)
        self.order = order  # permutation of indices; leaves slice into it

    def _build(self, order, start, stop):
        if stop - start <= self.leaf_size:
            return _Leaf(start, stop)
        pts = self.points[order[start:stop]]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (start + stop) // 2
        part = np.argpartition(pts[:, axis], mid - start)
        order[start:stop] = order[start:stop][part]
        split_value = float(self.points[order[mid], axis])
        return _Split(
            axis,
            split_value,
            self._build(order, start, mid),
            self._build(order, mid, stop),
        )

    # -- queries -------------------------------------------------------------

    def _leaf_sq(self, leaf, q):
        idx = self.order[leaf.start : leaf.stop]
        diff = self.points[idx] - q
        return idx, np.sum(diff * diff, axis=1)

    def nearest(self, q):
        """(point index, distance) of the cloud point closest to q."""
        q = np.asarray(q, dtype=np.float64)
        best_idx = -1
        best_sq = np.inf
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, _Leaf):
                idx, d2 = self._leaf_sq(node, q)
                k = int(np.argmin(d2))
                dmin = d2[k]
                if dmin < best_sq:
                    cand = idx[d2 == dmin]
                    best_sq = dmin
                    best_idx = int(cand.min())
                elif dmin == best_sq and best_idx >= 0:
                    cand = idx[d2 == dmin]
                    best_idx = min(best_idx, int(cand.min()))
                continue
            delta = q[node.axis] - node.value
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            if delta * delta <= best_sq:
                stack.append(far)
            stack.append(near)
        return best_idx, float(np.sqrt(best_sq))

    def nearest_many(self, queries):
        """Vectorized loop over nearest(); returns (indices, distances)."""
        queries = np.asarray(queries, dtype=np.float64)
        n = queries.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        for i in range(n):
            idx[i], dist[i] = self.nearest(queries[i])
        return idx, dist

    def kth_nearest_sq(self, p, k, exclude_index=None):
        """Squared distance from p to its k-th closest distinct point.

        If `exclude_index` is given, that single cloud entry is left out
        of the ranking; otherwise, when p coincides bitwise with a cloud
        point, the lowest-index copy is left out (the point does not
        rank as its own neighbor).
        """
        if k < 1:
            raise ConfigurationError(f"k must be >= 1, got {k}")
        p = np.asarray(p, dtype=np.float64)
        if exclude_index is None:
            matches = np.nonzero(np.all(self.points == p, axis=1))[0]
            exclude_index = int(matches[0]) if matches.size else -1
        excluded = 1 if exclude_index >= 0 else 0
        if self.cloud.size - excluded < k:
            raise InsufficientPointsError(
                f"k={k} neighbors requested but cloud has {self.cloud.size} points; "
                f"at least {k + excluded} are required"
            )
        heap = []  # max-heap of (-d2, index), size <= k
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, _Leaf):
                idx, d2 = self._leaf_sq(node, p)
                for j, d in zip(idx, d2):
                    if j == exclude_index:
                        continue
                    if len(heap) < k:
                        heapq.heappush(heap, (-d, int(j)))
                    elif d < -heap[0][0]:
                        heapq.heapreplace(heap, (-d, int(j)))
                continue
            delta = p[node.axis] - node.value
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            if len(heap) < k or delta * delta <= -heap[0][0]:
                stack.append(far)
            stack.append(near)
        return float(-heap[0][0])
