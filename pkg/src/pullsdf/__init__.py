"""Learn signed distance functions from raw point clouds by pulling
sampled query locations onto the surface, then extract and evaluate
triangle meshes."""

__version__ = "0.1.0"

from .io import NormalizationTransform, normalize, read_cloud, read_mesh, write_cloud
from .mesher import ScalarGrid, TriangleMesh, eval_grid, export_mesh, marching_cubes
from .metrics import MetricsReport, chamfer, evaluate, evaluate_mesh, fscore, normal_consistency, sample_surface
from .network import ArchitectureConfig, SdfNetwork, grad_wrt_input, init_geometric, init_random, load, load_bytes
from .sampler import QuerySample, QuerySet, SamplerConfig, compute_sigmas, make_batch, sample_queries, sample_space_uniform
from .spatial import KdIndex, PointCloud
from .trainer import AdamState, LossCurve, TrainConfig, adam_step, batch_loss, pull, pull_many, train

__all__ = [
    "AdamState",
    "ArchitectureConfig",
    "KdIndex",
    "LossCurve",
    "MetricsReport",
    "NormalizationTransform",
    "PointCloud",
    "QuerySample",
    "QuerySet",
    "SamplerConfig",
    "ScalarGrid",
    "SdfNetwork",
    "TrainConfig",
    "TriangleMesh",
    "adam_step",
    "batch_loss",
    "chamfer",
    "compute_sigmas",
    "eval_grid",
    "evaluate",
    "evaluate_mesh",
    "export_mesh",
    "fscore",
    "grad_wrt_input",
    "init_geometric",
    "init_random",
    "load",
    "load_bytes",
    "make_batch",
    "marching_cubes",
    "normal_consistency",
    "normalize",
    "pull",
    "pull_many",
    "read_cloud",
    "read_mesh",
    "sample_queries",
    "sample_space_uniform",
    "sample_surface",
    "train",
    "write_cloud",
]
