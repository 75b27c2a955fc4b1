"""Two-dimensional optimization showcase on a circle.

Trains the 2-input network variant on points sampled from a circle,
then emits: the ground-truth samples, the initial query locations, the
same queries after one pull through the trained field (indexed, so the
correspondence is trackable by color), and rasters of |f| and sign(f).
Artifacts are CSV plus plain-vector SVG.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigurationError
from .network import ArchitectureConfig
from .sampler import SamplerConfig, sample_queries
from .spatial import KdIndex, PointCloud
from .trainer import TrainConfig, pull_many, train


@dataclass(frozen=True)
class Demo2dConfig:
    radius: float = 0.5
    circle_samples: int = 500
    queries_per_point: int = 25
    sigma_k: int = 50
    epochs: int = 200
    batch_size: int = 500
    learning_rate: float = 1e-3
    hidden_width: int = 64
    depth: int = 4
    raster_resolution: int = 101
    raster_half_extent: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError(f"radius must be > 0, got {self.radius}")
        if self.circle_samples < self.sigma_k + 1:
            raise ConfigurationError(
                f"{self.circle_samples} circle samples cannot support sigma_k={self.sigma_k}"
            )
        if self.raster_resolution < 2:
            raise ConfigurationError("raster_resolution must be >= 2")


@dataclass
class Field2D:
    """Raster of the learned field: values plus the negative-sign mask."""

    resolution: int
    bounds: tuple
    values: np.ndarray
    sign_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.sign_mask = np.asarray(self.sign_mask, dtype=bool).ravel()
        if self.values.size != self.resolution**2 or self.sign_mask.size != self.values.size:
            raise ConfigurationError("field value count must match resolution^2")

    def grid(self):
        return self.values.reshape(self.resolution, self.resolution)  # [row=y][col=x]


def circle_points(cfg):
    gen = rng.stream(cfg.seed, rng.DEMO_SHAPE)
    theta = gen.random(cfg.circle_samples) * 2.0 * np.pi
    pts = cfg.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return PointCloud(pts)


def run_circle_demo(cfg, out_dir):
    """Train on the circle and write all demo artifacts into out_dir.

    Returns a dict with the artifact paths and summary statistics
    (notably the fraction of pulled queries within 0.02 of the circle).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cloud = circle_points(cfg)
    index = KdIndex(cloud)
    sampler_cfg = SamplerConfig(
        queries_per_point=cfg.queries_per_point,
        sigma_k=cfg.sigma_k,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
    queries = sample_queries(cloud, index, sampler_cfg)
    arch = ArchitectureConfig(
        input_dim=2,
        depth=cfg.depth,
        hidden_width=cfg.hidden_width,
        skip_at=max(2, cfg.depth // 2) if cfg.depth >= 3 else None,
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
    net, curve = train(cloud, sampler_cfg, train_cfg, arch=arch, index=index, queries=queries)

    # pull every query once through the trained field (same operation the
    # trainer optimizes, reused here)
    s, g = net.eval_with_grad(queries.q)
    pulled, valid = pull_many(queries.q, s, g)
    dist_to_circle = np.abs(np.linalg.norm(pulled, axis=1) - cfg.radius)
    within = float(np.mean(valid & (dist_to_circle <= 0.02)))

    half = cfg.raster_half_extent
    axis = np.linspace(-half, half, cfg.raster_resolution)
    gx, gy = np.meshgrid(axis, axis)
    raster_pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    values = net.eval_batch(raster_pts)
    field = Field2D(cfg.raster_resolution, (-half, half), values, values < 0)

    paths = {}
    paths["gt_points"] = _write_points_csv(out / "gt_points.csv", ["x", "y"], cloud.points)
    paths["queries_initial"] = _write_indexed_csv(
        out / "queries_initial.csv", ["index", "qx", "qy"], queries.q
    )
    paths["queries_pulled"] = _write_indexed_csv(
        out / "queries_pulled.csv", ["index", "x", "y"], pulled
    )
    paths["field"] = _write_field_csv(out / "field.csv", field, axis)
    paths["loss"] = str(out / "loss.csv")
    curve.write_csv(paths["loss"])

    colors = [_index_color(i, len(queries)) for i in range(len(queries))]
    paths["svg_gt"] = _svg_scatter(out / "gt_points.svg", cloud.points, half, ["#1f77b4"] * cloud.size, cfg.radius)
    paths["svg_initial"] = _svg_scatter(out / "queries_initial.svg", queries.q, half, colors, cfg.radius)
    paths["svg_pulled"] = _svg_scatter(out / "queries_pulled.svg", pulled, half, colors, cfg.radius)
    paths["svg_abs"] = _svg_raster(out / "field_abs.svg", np.abs(field.grid()), axis, diverging=False)
    paths["svg_sign"] = _svg_raster(out / "field_sign.svg", field.grid(), axis, diverging=True)

    center = net.eval([0.0, 0.0])
    corners = [net.eval([sx * half, sy * half]) for sx in (-1, 1) for sy in (-1, 1)]
    return {
        "paths": paths,
        "fraction_within": within,
        "n_queries": len(queries),
        "degenerate": int(np.sum(~valid)),
        "center_value": center,
        "corner_values": corners,
        "final_loss": curve.losses[-1],
        "field": field,
        "net": net,
    }


# ---------------------------------------------------------------------------
# CSV writers


def _write_points_csv(path, header, points):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for p in points:
            writer.writerow([f"{v:.9g}" for v in p])
    return str(path)


def _write_indexed_csv(path, header, points):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, p in enumerate(points):
            writer.writerow([i] + [f"{v:.9g}" for v in p])
    return str(path)


def _write_field_csv(path, field, axis):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "value", "abs", "sign"])
        grid = field.grid()
        for row, y in enumerate(axis):
            for col, x in enumerate(axis):
                v = grid[row, col]
                writer.writerow(
                    [f"{x:.9g}", f"{y:.9g}", f"{v:.9g}", f"{abs(v):.9g}", -1 if v < 0 else 1]
                )
    return str(path)


# ---------------------------------------------------------------------------
# SVG rendering (plain vector output, no image dependencies)


_SIZE = 560


def _index_color(i, n):
    hue = int(360 * i / max(1, n))
    return f"hsl({hue},80%,45%)"


def _to_px(p, half):
    x = (p[0] + half) / (2 * half) * _SIZE
    y = (half - p[1]) / (2 * half) * _SIZE
    return x, y


def _svg_scatter(path, points, half, colors, radius):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    cx, cy = _to_px((0.0, 0.0), half)
    r_px = radius / (2 * half) * _SIZE
    parts.append(
        f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{r_px:.1f}" fill="none" '
        'stroke="#bbbbbb" stroke-dasharray="4 3"/>'
    )
    for p, color in zip(points, colors):
        x, y = _to_px(p, half)
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2" fill="{color}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
    return str(path)


def _seq_color(t):
    # dark blue -> yellow ramp
    t = float(np.clip(t, 0.0, 1.0))
    r = int(255 * t)
    g = int(40 + 180 * t)
    b = int(90 + 60 * (1 - t))
    return f"#{r:02x}{g:02x}{b:02x}"


def _div_color(t):
    # blue (negative) -> white -> red (positive), t in [-1, 1]
    t = float(np.clip(t, -1.0, 1.0))
    if t < 0:
        k = 1 + t
        return f"#{int(220 * k + 30):02x}{int(220 * k + 30):02x}ff"
    k = 1 - t
    return f"#ff{int(220 * k + 30):02x}{int(220 * k + 30):02x}"


def _svg_raster(path, grid, axis, diverging):
    n = len(axis)
    cell = _SIZE / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">'
    ]
    if diverging:
        scale = max(1e-12, np.max(np.abs(grid)))
    else:
        scale = max(1e-12, np.max(grid))
    for row in range(n):
        for col in range(n):
            v = grid[row, col]
            color = _div_color(v / scale) if diverging else _seq_color(v / scale)
            x = col * cell
            y = (n - 1 - row) * cell  # raster row 0 is the lowest y
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{cell + 0.5:.2f}" '
                f'height="{cell + 0.5:.2f}" fill="{color}"/>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
    return str(path)
