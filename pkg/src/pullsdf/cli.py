"""Command-line pipeline: ingest -> train -> extract -> evaluate.

Subcommands:
  reconstruct  fit the field to a point cloud and extract a mesh
  eval         metrics between a reconstruction and a ground-truth cloud
  ablate       sweep one knob, one pipeline run per value, CSV out
  demo2d       the two-dimensional circle visualization

Configuration comes from a preset (`paper`, `desk`, `smoke`), optionally
overridden by a TOML file and then by command-line flags. Every run
writes a manifest with the canonical config, the seeds and input hash,
so reruns are reproducible bit for bit.
"""

import argparse
import dataclasses
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__, rng
from .demo2d import Demo2dConfig, run_circle_demo
from .errors import (
    CloudFormatError,
    ConfigurationError,
    InsufficientPointsError,
    MeshFormatError,
    TrainingDivergenceError,
)
from .io import normalize, read_cloud, read_mesh
from .mesher import TriangleMesh, eval_grid, marching_cubes, write_mesh
from .metrics import evaluate, sample_surface
from .network import ArchitectureConfig
from .sampler import SamplerConfig, dump_queries, sample_queries, sample_space_uniform
from .spatial import KdIndex, PointCloud
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3

SURFACE = "surface"
SPACE = "space"


@dataclass(frozen=True)
class MeshConfig:
    resolution: int = 128
    padding: float = 0.1

    def __post_init__(self):
        if self.resolution < 2:
            raise ConfigurationError(f"mesh resolution must be >= 2, got {self.resolution}")
        if self.padding < 0:
            raise ConfigurationError(f"mesh padding must be >= 0, got {self.padding}")


@dataclass(frozen=True)
class MetricsConfig:
    n_samples: int = 10_000
    mu: float = 0.002

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be >= 1, got {self.n_samples}")
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be > 0, got {self.mu}")


@dataclass(frozen=True)
class RunConfig:
    preset: str
    seed: int
    max_points: int
    query_source: str
    sampler: SamplerConfig
    train: TrainConfig
    arch: ArchitectureConfig
    mesh: MeshConfig
    metrics: MetricsConfig

    def __post_init__(self):
        if self.query_source not in (SURFACE, SPACE):
            raise ConfigurationError(f"unknown query_source {self.query_source!r}")

    def to_dict(self):
        return {
            "preset": self.preset,
            "seed": self.seed,
            "max_points": self.max_points,
            "query_source": self.query_source,
            "sampler": dataclasses.asdict(self.sampler),
            "train": dataclasses.asdict(self.train),
            "arch": dataclasses.asdict(self.arch),
            "mesh": dataclasses.asdict(self.mesh),
            "metrics": dataclasses.asdict(self.metrics),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            preset=d["preset"],
            seed=int(d["seed"]),
            max_points=int(d["max_points"]),
            query_source=d["query_source"],
            sampler=SamplerConfig(**d["sampler"]),
            train=TrainConfig(**d["train"]),
            arch=ArchitectureConfig(**d["arch"]),
            mesh=MeshConfig(**d["mesh"]),
            metrics=MetricsConfig(**d["metrics"]),
        )

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


PRESETS = {
    # the benchmark-scale settings: 2e4 surface points, 25 queries each,
    # batches of 5000, 2500 epochs
    "paper": dict(
        max_points=20_000,
        sampler=dict(queries_per_point=25, sigma_k=50, batch_size=5000),
        train=dict(learning_rate=1e-4, epochs=2500, batch_size=5000),
        arch=dict(depth=8, hidden_width=512, skip_at=4),
        mesh=dict(resolution=128),
    ),
    # minutes-scale: same recipe shrunk to a desk run
    "desk": dict(
        max_points=2000,
        sampler=dict(queries_per_point=25, sigma_k=50, batch_size=1000),
        train=dict(learning_rate=1e-4, epochs=300, batch_size=1000),
        arch=dict(depth=8, hidden_width=128, skip_at=4),
        mesh=dict(resolution=64),
    ),
    # seconds-scale smoke checks and determinism runs
    "smoke": dict(
        max_points=300,
        sampler=dict(queries_per_point=8, sigma_k=20, batch_size=300),
        train=dict(learning_rate=1e-3, epochs=30, batch_size=300),
        arch=dict(depth=4, hidden_width=32, skip_at=2),
        mesh=dict(resolution=32),
    ),
}


def build_config(preset="desk", file_overrides=None, **flag_overrides):
    """Merge preset -> config file -> flags into a RunConfig."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    layers = [PRESETS[preset]]
    if file_overrides:
        layers.append(file_overrides)
    flat = {
        "seed": 0,
        "max_points": None,
        "query_source": SURFACE,
        "sampler": {},
        "train": {},
        "arch": {},
        "mesh": {},
        "metrics": {},
    }
    for layer in layers:
        for key, value in layer.items():
            if key in ("sampler", "train", "arch", "mesh", "metrics"):
                if not isinstance(value, dict):
                    raise ConfigurationError(f"config section {key!r} must be a table")
                flat[key] = {**flat[key], **value}
            elif key in ("seed", "max_points", "query_source"):
                flat[key] = value
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
    for key, value in flag_overrides.items():
        if value is None:
            continue
        if "." in key:
            section, field = key.split(".", 1)
            flat[section][field] = value
        else:
            flat[key] = value
    seed = int(flat["seed"])
    flat["sampler"].setdefault("seed", seed)
    flat["train"].setdefault("seed", seed)
    return RunConfig(
        preset=preset,
        seed=seed,
        max_points=int(flat["max_points"]),
        query_source=flat["query_source"],
        sampler=SamplerConfig(**flat["sampler"]),
        train=TrainConfig(**flat["train"]),
        arch=ArchitectureConfig(**flat["arch"]),
        mesh=MeshConfig(**flat["mesh"]),
        metrics=MetricsConfig(**flat["metrics"]),
    )


def load_config_file(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# the reconstruction pipeline (shared by reconstruct and ablate)


def run_pipeline(input_path, out_dir, cfg, mesh_format="obj", dump_query_csv=False):
    """Full pipeline; returns a manifest dict (also written to disk)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cloud = read_cloud(input_path)
    points_total = cloud.size
    if cloud.size > cfg.max_points:
        gen = rng.stream(cfg.seed, rng.CLOUD_SUBSAMPLE)
        pick = np.sort(gen.choice(cloud.size, size=cfg.max_points, replace=False))
        cloud = PointCloud(
            cloud.points[pick], normals=None if cloud.normals is None else cloud.normals[pick]
        )
    cloud_n, transform = normalize(cloud)
    index = KdIndex(cloud_n)

    lo = cloud_n.points.min(axis=0)
    hi = cloud_n.points.max(axis=0)
    pad = cfg.mesh.padding * float(np.max(hi - lo))
    bounds = (lo - pad, hi + pad)

    queries = None
    if cfg.query_source == SPACE:
        n_queries = cfg.sampler.queries_per_point * cloud_n.size
        gen = rng.stream(cfg.sampler.seed, rng.SPACE_SAMPLE)
        queries = sample_space_uniform(cloud_n, index, bounds, n_queries, gen)
    else:
        queries = sample_queries(cloud_n, index, cfg.sampler)
    if dump_query_csv:
        dump_queries(queries, out / "queries.csv")

    net, curve = train(
        cloud_n, cfg.sampler, cfg.train, arch=cfg.arch, index=index, queries=queries,
        checkpoint_dir=str(out) if cfg.train.checkpoint_every else None,
    )

    checkpoint_path = out / "model.npul"
    net.save(checkpoint_path)
    loss_path = out / "loss.csv"
    curve.write_csv(loss_path)

    grid = eval_grid(net, bounds, cfg.mesh.resolution)
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        mesh_n = marching_cubes(grid)
    mesh = TriangleMesh(transform.inverse(mesh_n.vertices), mesh_n.triangles)
    mesh_path = out / f"mesh.{mesh_format}"
    write_mesh(mesh, mesh_path)

    manifest = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "input": {
            "path": str(input_path),
            "sha256": _sha256_file(input_path),
            "points_total": points_total,
            "points_used": cloud_n.size,
        },
        "normalization": transform.to_dict(),
        "grid_bounds": [list(bounds[0]), list(bounds[1])],
        "steps": len(curve),
        "final_loss": curve.losses[-1],
        "mesh": {
            "path": mesh_path.name,
            "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles),
            "sha256": _sha256_file(mesh_path),
        },
        "checkpoint": {"path": checkpoint_path.name, "sha256": _sha256_file(checkpoint_path)},
        "loss_curve": {"path": loss_path.name, "sha256": _sha256_file(loss_path)},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_recon_cloud(path, n_samples, seed):
    """Reconstruction input for eval: mesh files are surface-sampled,
    cloud files are taken as-is."""
    ext = str(path).rsplit(".", 1)[-1].lower()
    if ext in ("obj", "ply"):
        verts, tris = read_mesh(path)
        if len(tris):
            mesh = TriangleMesh(verts, tris)
            return sample_surface(mesh, n_samples, rng.stream(seed, rng.SURFACE_SAMPLE))
        if ext == "ply":
            return read_cloud(path)  # vertex-only PLY: treat as a cloud
        raise MeshFormatError(f"{path}: OBJ file has no faces")
    return read_cloud(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_reconstruct(args):
    file_overrides = load_config_file(args.config) if args.config else None
    cfg = build_config(
        preset=args.preset,
        file_overrides=file_overrides,
        seed=args.seed,
        max_points=args.max_points,
        query_source=args.query_source,
        **{
            "sampler.sigma_scale": args.sigma_scale,
            "sampler.queries_per_point": args.queries_per_point,
            "sampler.batch_strategy": args.batch_strategy,
            "sampler.batch_size": args.batch_size,
            "train.epochs": args.epochs,
            "train.learning_rate": args.learning_rate,
            "train.batch_size": args.batch_size,
            "train.init_mode": args.init_mode,
            "train.checkpoint_every": args.checkpoint_every,
            "arch.hidden_width": args.width,
            "mesh.resolution": args.resolution,
        },
    )
    manifest = run_pipeline(
        args.input, args.out_dir, cfg, mesh_format=args.mesh_format,
        dump_query_csv=args.dump_queries,
    )
    if manifest["mesh"]["triangles"] == 0:
        print("warning: extracted mesh is empty (no zero crossing)", file=sys.stderr)
    print(json.dumps({k: manifest[k] for k in ("config_hash", "steps", "final_loss", "mesh")}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    recon = _load_recon_cloud(args.recon, args.n_samples, args.seed)
    gt = read_cloud(args.gt)
    if not args.skip_nc:
        if recon.normals is None:
            raise ConfigurationError(
                f"normal consistency requested but {args.recon} carries no normals; "
                "provide a mesh or 6-column cloud, or pass --skip-nc"
            )
        if gt.normals is None:
            raise ConfigurationError(
                f"normal consistency requested but {args.gt} carries no normals; "
                "provide a 6-column cloud, or pass --skip-nc"
            )
    else:
        recon = PointCloud(recon.points)
        gt = PointCloud(gt.points)
    report = evaluate(recon, gt, mu=args.mu)
    print(report.to_json())
    row = report.to_csv_row()
    if args.csv:
        path = Path(args.csv)
        is_new = not path.exists()
        with open(path, "a") as fh:
            if is_new:
                fh.write(report.csv_header() + "\n")
            fh.write(row + "\n")
    else:
        print(row)
    return EXIT_OK


ABLATE_KNOBS = {
    "init_mode": str,
    "batch_strategy": str,
    "sigma_scale": float,
    "queries_per_point": int,
    "cloud_size": int,
    "query_source": str,
}


def _apply_knob(cfg, knob, value):
    if knob == "init_mode":
        return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, init_mode=value))
    if knob == "batch_strategy":
        return dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, batch_strategy=value))
    if knob == "sigma_scale":
        return dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, sigma_scale=value))
    if knob == "queries_per_point":
        return dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, queries_per_point=value))
    if knob == "cloud_size":
        return dataclasses.replace(cfg, max_points=value)
    if knob == "query_source":
        return dataclasses.replace(cfg, query_source=value)
    raise ConfigurationError(f"unknown knob {knob!r} (valid: {', '.join(sorted(ABLATE_KNOBS))})")


def cmd_ablate(args):
    if args.knob not in ABLATE_KNOBS:
        raise ConfigurationError(
            f"unknown knob {args.knob!r} (valid: {', '.join(sorted(ABLATE_KNOBS))})"
        )
    caster = ABLATE_KNOBS[args.knob]
    raw = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw:
        raise ConfigurationError("no sweep values given")
    values = []
    for v in raw:
        value = caster(v)
        if value in values:
            print(f"warning: duplicate sweep value {v!r} dropped", file=sys.stderr)
            continue
        values.append(value)

    file_overrides = load_config_file(args.config) if args.config else None
    base = build_config(preset=args.preset, file_overrides=file_overrides, seed=args.seed)
    gt = read_cloud(args.input)

    rows = []
    for value in values:
        cfg = _apply_knob(base, args.knob, value)
        run_dir = Path(args.out_dir) / f"{args.knob}_{value}"
        try:
            manifest = run_pipeline(args.input, run_dir, cfg, mesh_format="obj")
            if manifest["mesh"]["triangles"] == 0:
                rows.append((value, float("inf")))
                continue
            verts, tris = read_mesh(run_dir / "mesh.obj")
            mesh = TriangleMesh(verts, tris)
            recon = sample_surface(
                mesh, base.metrics.n_samples, rng.stream(base.seed, rng.SURFACE_SAMPLE)
            )
            report = evaluate(PointCloud(recon.points), PointCloud(gt.points), mu=base.metrics.mu)
            rows.append((value, report.l2_cd_x100))
        except TrainingDivergenceError as err:
            print(f"warning: run {args.knob}={value} diverged: {err}", file=sys.stderr)
            rows.append((value, float("inf")))

    lines = ["value,l2_cd_x100"] + [f"{v},{cd:.9g}" for v, cd in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_demo2d(args):
    cfg = Demo2dConfig(
        radius=args.radius,
        circle_samples=args.circle_samples,
        epochs=args.epochs,
        seed=args.seed,
    )
    result = run_circle_demo(cfg, args.out_dir)
    print(
        json.dumps(
            {
                "fraction_within_0.02": result["fraction_within"],
                "n_queries": result["n_queries"],
                "final_loss": result["final_loss"],
                "center_value": result["center_value"],
                "paths": result["paths"],
            },
            indent=2,
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def make_parser():
    parser = argparse.ArgumentParser(
        prog="pullsdf",
        description="Learn a signed distance field from a point cloud and extract a mesh.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("reconstruct", help="train on a cloud and extract the mesh")
    p.add_argument("input", help="point cloud (.xyz/.txt/.ply)")
    common(p)
    p.add_argument("--max-points", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--width", type=int, default=None, help="hidden width override")
    p.add_argument("--resolution", type=int, default=None, help="marching cubes lattice per axis")
    p.add_argument("--sigma-scale", type=float, default=None)
    p.add_argument("--queries-per-point", type=int, default=None)
    p.add_argument("--init-mode", choices=("geometric", "random"), default=None)
    p.add_argument("--batch-strategy", choices=("random", "surface_uniform"), default=None)
    p.add_argument("--query-source", choices=(SURFACE, SPACE), default=None)
    p.add_argument("--checkpoint-every", type=int, default=None, help="epochs between checkpoints")
    p.add_argument("--mesh-format", choices=("obj", "ply"), default="obj")
    p.add_argument("--dump-queries", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="metrics between reconstruction and ground truth")
    p.add_argument("recon", help="mesh (.obj/.ply) or cloud (.xyz)")
    p.add_argument("gt", help="ground-truth cloud")
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--mu", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-nc", action="store_true", help="skip normal consistency")
    p.add_argument("--csv", help="append the CSV row to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one knob, one run per value")
    p.add_argument("input", help="point cloud")
    common(p)
    p.add_argument("--knob", required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("demo2d", help="circle demo artifacts (CSV + SVG)")
    p.add_argument("--out-dir", default="demo2d_out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--circle-samples", type=int, default=500)
    p.add_argument("--epochs", type=int, default=200)
    p.set_defaults(func=cmd_demo2d)

    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: no such file: {err.filename}", file=sys.stderr)
        return EXIT_INPUT
    except (CloudFormatError, MeshFormatError, ConfigurationError, InsufficientPointsError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
