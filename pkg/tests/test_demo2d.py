import numpy as np
import pytest

from pullsdf.demo2d import Demo2dConfig, Field2D, circle_points, run_circle_demo
from pullsdf.errors import ConfigurationError

FAST = Demo2dConfig(
    circle_samples=150,
    queries_per_point=6,
    sigma_k=20,
    epochs=50,
    batch_size=300,
    hidden_width=32,
    depth=4,
    raster_resolution=41,
    seed=3,
)


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo2d")
    return run_circle_demo(FAST, out), out


def test_config_validation():
    with pytest.raises(ConfigurationError):
        Demo2dConfig(radius=0.0)
    with pytest.raises(ConfigurationError):
        Demo2dConfig(circle_samples=10, sigma_k=50)


def test_circle_points_on_circle():
    cloud = circle_points(FAST)
    assert cloud.size == 150
    assert np.allclose(np.linalg.norm(cloud.points, axis=1), FAST.radius)


def test_demo_pulls_queries_to_circle(demo):
    result, _ = demo
    # a fast run still lands the bulk of the queries on the circle
    assert result["fraction_within"] >= 0.9


def test_demo_sign_raster_center_and_corners(demo):
    result, _ = demo
    assert result["center_value"] < 0
    assert all(v > 0 for v in result["corner_values"])
    grid = result["field"].grid()
    n = FAST.raster_resolution
    assert grid[n // 2, n // 2] < 0
    for corner in (grid[0, 0], grid[0, -1], grid[-1, 0], grid[-1, -1]):
        assert corner > 0


def test_demo_csv_row_counts(demo):
    result, out = demo
    n_queries = result["n_queries"]
    pulled = (out / "queries_pulled.csv").read_text().splitlines()
    initial = (out / "queries_initial.csv").read_text().splitlines()
    assert pulled[0] == "index,x,y"
    assert initial[0] == "index,qx,qy"
    assert len(pulled) == 1 + n_queries
    assert len(initial) == 1 + n_queries
    # index column tracks the input ordering
    assert [int(r.split(",")[0]) for r in pulled[1:5]] == [0, 1, 2, 3]
    field = (out / "field.csv").read_text().splitlines()
    assert field[0] == "x,y,value,abs,sign"
    assert len(field) == 1 + FAST.raster_resolution**2


def test_demo_svg_artifacts(demo):
    result, out = demo
    for name in ("gt_points.svg", "queries_initial.svg", "queries_pulled.svg", "field_abs.svg", "field_sign.svg"):
        text = (out / name).read_text()
        assert text.startswith("<svg")
        assert text.rstrip().endswith("</svg>")
    # initial and pulled share per-index colors for correspondence
    first_color = (out / "queries_initial.svg").read_text().split("hsl")[1][:12]
    assert ("hsl" + first_color) in (out / "queries_pulled.svg").read_text()


def test_field2d_validation():
    with pytest.raises(ConfigurationError):
        Field2D(5, (-1, 1), np.zeros(24), np.zeros(24, dtype=bool))
