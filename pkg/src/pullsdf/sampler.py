"""Query-location sampling around the surface and batch assembly.

Each cloud point spawns `queries_per_point` Gaussian draws whose
variance comes from the squared distance to the point's sigma_k-th
nearest neighbor, so the spread adapts to local density. The full query
set is generated once, frozen, and paired with precomputed
nearest-surface targets; batches are then index selections.

Every point draws from its own seeded substream, so the query set is
byte-for-byte reproducible and independent of generation order.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigurationError, InsufficientPointsError

RANDOM = "random"
SURFACE_UNIFORM = "surface_uniform"


@dataclass(frozen=True)
class SamplerConfig:
    queries_per_point: int = 25
    sigma_k: int = 50
    sigma_scale: float = 1.0
    batch_size: int = 5000
    batch_strategy: str = RANDOM
    seed: int = 0

    def __post_init__(self):
        if self.queries_per_point < 1:
            raise ConfigurationError(f"queries_per_point must be >= 1, got {self.queries_per_point}")
        if self.sigma_k < 1:
            raise ConfigurationError(f"sigma_k must be >= 1, got {self.sigma_k}")
        if not self.sigma_scale > 0:
            raise ConfigurationError(f"sigma_scale must be > 0, got {self.sigma_scale}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_strategy not in (RANDOM, SURFACE_UNIFORM):
            raise ConfigurationError(f"unknown batch_strategy {self.batch_strategy!r}")


@dataclass(frozen=True)
class QuerySample:
    """One query location with its nearest surface target."""

    q: np.ndarray
    t: np.ndarray
    source_index: int


class QuerySet:
    """Column-array container of query samples; indexes like a list."""

    def __init__(self, q, t, source_index):
        self.q = np.asarray(q, dtype=np.float64)
        self.t = np.asarray(t, dtype=np.float64)
        self.source_index = np.asarray(source_index, dtype=np.int64)
        if not (len(self.q) == len(self.t) == len(self.source_index)):
            raise ConfigurationError("query columns must have equal length")

    def __len__(self):
        return len(self.q)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return QuerySample(self.q[i], self.t[i], int(self.source_index[i]))
        return QuerySet(self.q[i], self.t[i], self.source_index[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def compute_sigmas(cloud, index, cfg):
    """Per-point sigma^2: sigma_scale times the squared distance to the
    sigma_k-th nearest other point."""
    if cloud.size <= cfg.sigma_k:
        raise InsufficientPointsError(
            f"sigma computation with sigma_k={cfg.sigma_k} needs at least "
            f"{cfg.sigma_k + 1} points, cloud has {cloud.size}"
        )
    sigma_sq = np.empty(cloud.size)
    for j in range(cloud.size):
        sigma_sq[j] = index.kth_nearest_sq(cloud.points[j], cfg.sigma_k, exclude_index=j)
    return cfg.sigma_scale * sigma_sq


def sample_queries(cloud, index, cfg, sigma_sq=None):
    """Draw the frozen query set: queries_per_point Gaussian draws per
    cloud point, targets assigned by nearest neighbor."""
    if sigma_sq is None:
        sigma_sq = compute_sigmas(cloud, index, cfg)
    sigma = np.sqrt(sigma_sq)
    qpp = cfg.queries_per_point
    dim = cloud.dim
    q = np.empty((cloud.size * qpp, dim))
    for j in range(cloud.size):
        gen = rng.stream(cfg.seed, rng.QUERY_OFFSETS, j)
        offsets = rng.normal(gen, (qpp, dim), sigma=sigma[j])
        q[j * qpp : (j + 1) * qpp] = cloud.points[j] + offsets
    source = np.repeat(np.arange(cloud.size, dtype=np.int64), qpp)
    nn_idx, _ = index.nearest_many(q)
    return QuerySet(q, cloud.points[nn_idx], source)


def sample_space_uniform(cloud, index, bounds, n, gen):
    """Uniform queries in an axis-aligned box (the whole-space ablation),
    targets assigned by nearest neighbor."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if lo.shape != (cloud.dim,) or hi.shape != (cloud.dim,) or np.any(hi <= lo):
        raise ConfigurationError(f"invalid bounds {bounds}")
    if n == 0:
        return QuerySet(np.empty((0, cloud.dim)), np.empty((0, cloud.dim)), np.empty(0))
    q = gen.random((n, cloud.dim)) * (hi - lo) + lo
    nn_idx, _ = index.nearest_many(q)
    return QuerySet(q, cloud.points[nn_idx], nn_idx)


def make_batch(queries, cloud, cfg, gen):
    """Select one training batch from the frozen query set.

    random: uniform sample without replacement from the whole set.
    surface_uniform: batch_size cloud points sampled uniformly, then one
    stored query of each sampled point, so every batch covers the shape.
    """
    if len(queries) == 0:
        raise ConfigurationError("cannot build a batch from an empty query set")
    if cfg.batch_strategy == RANDOM:
        if len(queries) < cfg.batch_size:
            raise ConfigurationError(
                f"batch_size {cfg.batch_size} exceeds query set size {len(queries)}"
            )
        pick = gen.choice(len(queries), size=cfg.batch_size, replace=False)
    else:
        replace = cloud.size < cfg.batch_size
        points = gen.choice(cloud.size, size=cfg.batch_size, replace=replace)
        offsets = gen.integers(0, cfg.queries_per_point, size=cfg.batch_size)
        pick = points * cfg.queries_per_point + offsets
    return queries[pick]


def dump_queries(queries, path):
    """CSV dump: qx,qy[,qz],tx,ty[,tz],source_index."""
    dim = queries.q.shape[1] if len(queries) else 3
    axes = "xyz"[:dim]
    header = [f"q{a}" for a in axes] + [f"t{a}" for a in axes] + ["source_index"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(queries)):
            row = [f"{v:.9g}" for v in queries.q[i]] + [f"{v:.9g}" for v in queries.t[i]]
            writer.writerow(row + [int(queries.source_index[i])])
