import numpy as np
import pytest

from pullsdf import rng
from pullsdf.errors import ConfigurationError
from pullsdf.mesher import TriangleMesh
from pullsdf.metrics import (
    L1,
    L2,
    MetricsReport,
    chamfer,
    evaluate,
    fscore,
    normal_consistency,
    sample_surface,
)
from pullsdf.spatial import PointCloud


def brute_chamfer(a, b, norm):
    d2_ab = np.min(np.sum((a.points[:, None, :] - b.points[None, :, :]) ** 2, axis=-1), axis=1)
    d2_ba = np.min(np.sum((b.points[:, None, :] - a.points[None, :, :]) ** 2, axis=-1), axis=1)
    if norm == L2:
        return 0.5 * float(np.mean(np.sqrt(d2_ab) ** 2)) + 0.5 * float(np.mean(np.sqrt(d2_ba) ** 2))
    return 0.5 * float(np.mean(np.sqrt(d2_ab))) + 0.5 * float(np.mean(np.sqrt(d2_ba)))


def brute_nc(a, b):
    d2_ab = np.sum((a.points[:, None, :] - b.points[None, :, :]) ** 2, axis=-1)
    idx_ab = np.argmin(d2_ab, axis=1)
    idx_ba = np.argmin(d2_ab, axis=0)
    cos_ab = np.abs(np.sum(a.normals * b.normals[idx_ab], axis=1))
    cos_ba = np.abs(np.sum(b.normals * a.normals[idx_ba], axis=1))
    return 0.5 * float(np.mean(cos_ab)) + 0.5 * float(np.mean(cos_ba))


def brute_fscore(recon, gt, tau):
    d_rg = np.sqrt(
        np.min(np.sum((recon.points[:, None, :] - gt.points[None, :, :]) ** 2, axis=-1), axis=1)
    )
    d_gr = np.sqrt(
        np.min(np.sum((gt.points[:, None, :] - recon.points[None, :, :]) ** 2, axis=-1), axis=1)
    )
    p = float(np.mean(d_rg <= tau))
    r = float(np.mean(d_gr <= tau))
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def random_cloud(gen, n, with_normals=False):
    pts = gen.uniform(-1, 1, size=(n, 3))
    if not with_normals:
        return PointCloud(pts)
    normals = gen.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals=normals)


# -- surface sampling ---------------------------------------------------------


def unit_square_mesh():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(verts, tris)


def test_sample_surface_binomial_split():
    mesh = unit_square_mesh()
    n = 10_000
    cloud = sample_surface(mesh, n, rng.stream(0, rng.SURFACE_SAMPLE))
    # both triangles have area 1/2: counts should match Binomial(n, 1/2)
    in_first = np.sum(cloud.points[:, 0] >= cloud.points[:, 1])
    sd = np.sqrt(n * 0.25)
    assert abs(in_first - n / 2) < 3 * sd


def test_sample_surface_zero():
    cloud = sample_surface(unit_square_mesh(), 0, rng.stream(0, 1))
    assert cloud.size == 0


def test_sample_surface_points_on_triangles():
    mesh = unit_square_mesh()
    cloud = sample_surface(mesh, 500, rng.stream(1, rng.SURFACE_SAMPLE))
    assert np.all(cloud.points[:, 2] == 0)
    assert np.all(cloud.points[:, :2] >= 0) and np.all(cloud.points[:, :2] <= 1)
    assert np.allclose(np.abs(cloud.normals[:, 2]), 1.0)


def test_sample_surface_empty_mesh_errors():
    empty = TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
    with pytest.raises(ConfigurationError):
        sample_surface(empty, 10, rng.stream(0, 1))


# -- chamfer -------------------------------------------------------------------


def test_chamfer_identity_zero():
    gen = np.random.default_rng(0)
    a = random_cloud(gen, 50)
    assert chamfer(a, a, L2) == 0.0
    assert chamfer(a, a, L1) == 0.0


def test_chamfer_single_point_hand_value():
    a = PointCloud(np.array([[0.0, 0, 0]]))
    b = PointCloud(np.array([[1.0, 0, 0]]))
    assert chamfer(a, b, L2) == 1.0
    assert chamfer(a, b, L1) == 1.0


def test_chamfer_matches_brute_force_exactly():
    gen = np.random.default_rng(5)
    a = random_cloud(gen, 100)
    b = random_cloud(gen, 100)
    assert chamfer(a, b, L2) == brute_chamfer(a, b, L2)
    assert chamfer(a, b, L1) == brute_chamfer(a, b, L1)


def test_chamfer_symmetric():
    gen = np.random.default_rng(7)
    a = random_cloud(gen, 40)
    b = random_cloud(gen, 60)
    assert chamfer(a, b, L2) == chamfer(b, a, L2)


def test_chamfer_empty_errors():
    gen = np.random.default_rng(1)
    a = random_cloud(gen, 5)
    empty = PointCloud(np.empty((0, 3)))
    with pytest.raises(ConfigurationError):
        chamfer(a, empty, L2)


# -- normal consistency --------------------------------------------------------


def test_nc_identical_clouds():
    gen = np.random.default_rng(2)
    a = random_cloud(gen, 30, with_normals=True)
    assert normal_consistency(a, a) == pytest.approx(1.0)


def test_nc_flip_invariant():
    gen = np.random.default_rng(3)
    a = random_cloud(gen, 30, with_normals=True)
    b = random_cloud(gen, 30, with_normals=True)
    flipped = PointCloud(b.points, normals=-b.normals)
    assert normal_consistency(a, b) == normal_consistency(a, flipped)


def test_nc_orthogonal_normals():
    pts = np.random.default_rng(4).uniform(-1, 1, size=(20, 3))
    a = PointCloud(pts, normals=np.tile([1.0, 0, 0], (20, 1)))
    b = PointCloud(pts, normals=np.tile([0.0, 1, 0], (20, 1)))
    assert normal_consistency(a, b) == 0.0


def test_nc_requires_normals():
    gen = np.random.default_rng(5)
    with pytest.raises(ConfigurationError):
        normal_consistency(random_cloud(gen, 5), random_cloud(gen, 5, with_normals=True))


def test_nc_matches_brute_force():
    gen = np.random.default_rng(6)
    a = random_cloud(gen, 50, with_normals=True)
    b = random_cloud(gen, 50, with_normals=True)
    assert normal_consistency(a, b) == brute_nc(a, b)


# -- fscore ---------------------------------------------------------------------


def test_fscore_identical_is_one():
    gen = np.random.default_rng(8)
    a = random_cloud(gen, 40)
    for tau in (1e-6, 0.002, 0.5):
        assert fscore(a, a, tau) == 1.0


def test_fscore_disjoint_is_zero():
    a = PointCloud(np.zeros((5, 3)) + np.arange(5)[:, None] * 1e-4)
    b = PointCloud(a.points + np.array([10.0, 0, 0]) * 0.002 * 10)
    assert fscore(a, b, 0.002) == 0.0


def test_fscore_hand_value_two_thirds():
    # half the recon points near gt, all gt covered -> F = 2/3
    gt = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    recon = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0], [6.0, 0, 0]]))
    assert fscore(recon, gt, 0.1) == pytest.approx(2 / 3)


def test_fscore_monotone_in_threshold():
    gen = np.random.default_rng(9)
    a = random_cloud(gen, 60)
    b = random_cloud(gen, 60)
    taus = [0.01, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0]
    values = [fscore(a, b, t) for t in taus]
    assert all(x <= y for x, y in zip(values, values[1:]))


def test_fscore_matches_brute_force():
    gen = np.random.default_rng(10)
    a = random_cloud(gen, 80)
    b = random_cloud(gen, 70)
    assert fscore(a, b, 0.25) == brute_fscore(a, b, 0.25)


# -- rigid invariance and report -------------------------------------------------


def rotation_matrix(axis, angle):
    axis = np.asarray(axis) / np.linalg.norm(axis)
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def test_metrics_invariant_under_common_rotation():
    gen = np.random.default_rng(11)
    a = random_cloud(gen, 60, with_normals=True)
    b = random_cloud(gen, 60, with_normals=True)
    R = rotation_matrix([1.0, 2.0, 3.0], 0.7)
    ra = PointCloud(a.points @ R.T, normals=a.normals @ R.T)
    rb = PointCloud(b.points @ R.T, normals=b.normals @ R.T)
    assert chamfer(ra, rb, L2) == pytest.approx(chamfer(a, b, L2), abs=1e-9)
    assert chamfer(ra, rb, L1) == pytest.approx(chamfer(a, b, L1), abs=1e-9)
    assert normal_consistency(ra, rb) == pytest.approx(normal_consistency(a, b), abs=1e-9)
    assert fscore(ra, rb, 0.3) == pytest.approx(fscore(a, b, 0.3), abs=1e-9)


def test_report_fields_and_serialization():
    gen = np.random.default_rng(12)
    a = random_cloud(gen, 50, with_normals=True)
    b = random_cloud(gen, 50, with_normals=True)
    report = evaluate(a, b, mu=0.1)
    assert report.l2_cd_x100 >= 0 and report.l1_cd >= 0
    assert -1 <= report.normal_consistency <= 1
    assert 0 <= report.fscore_mu <= 1 and 0 <= report.fscore_2mu <= 1
    assert report.n_recon == 50 and report.n_gt == 50
    d = report.to_dict()
    assert set(MetricsReport.csv_header().split(",")) == set(d.keys())
    row = report.to_csv_row()
    assert len(row.split(",")) == 8
