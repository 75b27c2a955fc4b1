import json

import numpy as np
import pytest

from pullsdf import rng
from pullsdf.cli import (
    EXIT_DIVERGED,
    EXIT_INPUT,
    EXIT_OK,
    PRESETS,
    RunConfig,
    build_config,
    main,
)
from pullsdf.errors import ConfigurationError
from pullsdf.io import read_mesh, write_cloud
from pullsdf.mesher import TriangleMesh
from pullsdf.metrics import sample_surface
from pullsdf.spatial import PointCloud


def sphere_file(tmp_path, n=400, radius=0.4, seed=0, normals=True, name="sphere.xyz"):
    gen = np.random.default_rng(seed)
    u = gen.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    cloud = PointCloud(radius * u, normals=u if normals else None)
    path = tmp_path / name
    write_cloud(cloud, path)
    return path


TINY_FLAGS = [
    "--max-points", "150", "--epochs", "10", "--width", "32",
    "--batch-size", "200", "--queries-per-point", "6", "--resolution", "24",
]


# -- config model ------------------------------------------------------------------


def test_config_round_trips_to_identical_form():
    cfg = build_config(preset="desk", seed=7)
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.canonical_json() == cfg.canonical_json()
    assert again.config_hash() == cfg.config_hash()


def test_presets_exist_and_differ():
    paper = build_config(preset="paper")
    desk = build_config(preset="desk")
    assert paper.train.epochs == 2500
    assert paper.sampler.queries_per_point == 25
    assert paper.train.batch_size == 5000
    assert paper.arch.hidden_width == 512
    assert paper.train.learning_rate == 1e-4
    assert desk.train.epochs == 300
    assert desk.arch.hidden_width == 128
    assert desk.max_points == 2000


def test_unknown_preset_rejected():
    with pytest.raises(ConfigurationError):
        build_config(preset="enormous")


def test_flag_overrides_beat_config_file():
    cfg = build_config(
        preset="smoke",
        file_overrides={"train": {"epochs": 77}, "seed": 5},
        **{"train.epochs": 12},
    )
    assert cfg.train.epochs == 12
    assert cfg.seed == 5
    assert cfg.sampler.seed == 5  # seed propagates into sections


def test_config_file_section_merge():
    cfg = build_config(
        preset="smoke", file_overrides={"sampler": {"sigma_scale": 2.0}, "mesh": {"resolution": 48}}
    )
    assert cfg.sampler.sigma_scale == 2.0
    assert cfg.mesh.resolution == 48
    assert cfg.sampler.queries_per_point == PRESETS["smoke"]["sampler"]["queries_per_point"]


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigurationError):
        build_config(preset="smoke", file_overrides={"trian": {"epochs": 3}})


# -- reconstruct -------------------------------------------------------------------


def test_reconstruct_writes_artifacts(tmp_path, capsys):
    cloud = sphere_file(tmp_path)
    out = tmp_path / "run"
    code = main(["reconstruct", str(cloud), "--preset", "smoke", "--out-dir", str(out),
                 "--seed", "3", *TINY_FLAGS])
    assert code == EXIT_OK
    for name in ("mesh.obj", "model.npul", "loss.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3
    assert manifest["input"]["points_used"] == 150
    assert manifest["mesh"]["triangles"] > 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mesh"]["sha256"] == manifest["mesh"]["sha256"]


def test_reconstruct_missing_file_exit_2(tmp_path, capsys):
    code = main(["reconstruct", str(tmp_path / "nope.xyz"), "--preset", "smoke"])
    assert code == EXIT_INPUT
    assert "nope.xyz" in capsys.readouterr().err


def test_reconstruct_malformed_input_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2 3\n4 five 6\n")
    code = main(["reconstruct", str(bad), "--preset", "smoke"])
    assert code == EXIT_INPUT
    assert "line 2" in capsys.readouterr().err


def test_reconstruct_divergence_exit_3(tmp_path, capsys):
    cloud = sphere_file(tmp_path)
    code = main(["reconstruct", str(cloud), "--preset", "smoke", "--out-dir",
                 str(tmp_path / "div"), "--learning-rate", "1e155", *TINY_FLAGS])
    assert code == EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


def test_reconstruct_rerun_identical_outputs(tmp_path, capsys):
    cloud = sphere_file(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["reconstruct", str(cloud), "--preset", "smoke", "--out-dir", str(out),
                     "--seed", "9", *TINY_FLAGS]) == EXIT_OK
        outs.append(json.loads((out / "manifest.json").read_text()))
    a, b = outs
    assert a["mesh"]["sha256"] == b["mesh"]["sha256"]
    assert a["checkpoint"]["sha256"] == b["checkpoint"]["sha256"]
    assert a["config_hash"] == b["config_hash"]


def test_reconstruct_with_toml_config(tmp_path):
    cloud = sphere_file(tmp_path)
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text(
        "max_points = 120\n[train]\nepochs = 8\nbatch_size = 150\n"
        "[sampler]\nqueries_per_point = 5\nbatch_size = 150\n"
        "[arch]\nhidden_width = 32\ndepth = 4\nskip_at = 2\n[mesh]\nresolution = 20\n"
    )
    out = tmp_path / "cfgrun"
    assert main(["reconstruct", str(cloud), "--preset", "smoke", "--config", str(cfg_file),
                 "--out-dir", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["train"]["epochs"] == 8
    assert manifest["config"]["max_points"] == 120


def test_reconstruct_dump_queries(tmp_path):
    cloud = sphere_file(tmp_path)
    out = tmp_path / "dq"
    assert main(["reconstruct", str(cloud), "--preset", "smoke", "--out-dir", str(out),
                 "--dump-queries", *TINY_FLAGS]) == EXIT_OK
    lines = (out / "queries.csv").read_text().splitlines()
    assert lines[0] == "qx,qy,qz,tx,ty,tz,source_index"
    assert len(lines) == 1 + 150 * 6


# -- eval ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smokerun")
    cloud = sphere_file(tmp)
    out = tmp / "run"
    assert main(["reconstruct", str(cloud), "--preset", "smoke", "--out-dir", str(out),
                 "--seed", "1", *TINY_FLAGS]) == EXIT_OK
    return out / "mesh.obj", cloud, tmp


def test_eval_mesh_against_itself_sampled(tmp_path, smoke_run, capsys):
    mesh_path, _, _ = smoke_run
    verts, tris = read_mesh(mesh_path)
    mesh = TriangleMesh(verts, tris)
    sampled = sample_surface(mesh, 500, rng.stream(4, rng.SURFACE_SAMPLE))
    gt_path = tmp_path / "self.xyz"
    write_cloud(sampled, gt_path)
    code = main(["eval", str(mesh_path), str(gt_path), "--n-samples", "500", "--seed", "4"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out.rsplit("\n", 2)[0])
    # identical sampling seed: the clouds coincide up to printed precision
    assert report["l2_cd_x100"] < 1e-12
    assert report["fscore_mu"] == 1.0


def test_eval_translated_copy_zero_fscore(tmp_path, capsys):
    gen = np.random.default_rng(5)
    pts = gen.uniform(-0.4, 0.4, size=(300, 3))
    a = tmp_path / "a.xyz"
    b = tmp_path / "b.xyz"
    write_cloud(PointCloud(pts), a)
    write_cloud(PointCloud(pts + np.array([0.01, 0.0, 0.0])), b)
    code = main(["eval", str(b), str(a), "--mu", "0.002", "--skip-nc"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out.rsplit("\n", 2)[0])
    assert report["fscore_mu"] == 0.0


def test_eval_requires_normals_for_nc(tmp_path, smoke_run, capsys):
    mesh_path, _, _ = smoke_run
    gt = sphere_file(tmp_path, normals=False, name="plain.xyz")
    code = main(["eval", str(mesh_path), str(gt)])
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "normal consistency" in err and "--skip-nc" in err


def test_eval_csv_row_appended(tmp_path, smoke_run):
    mesh_path, gt_path, _ = smoke_run
    csv_path = tmp_path / "rows.csv"
    for _ in range(2):
        assert main(["eval", str(mesh_path), str(gt_path), "--n-samples", "400",
                     "--csv", str(csv_path)]) == EXIT_OK
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("l2_cd_x100,")
    assert len(lines) == 3
    assert lines[1] == lines[2]  # same seed, same row


# -- ablate -------------------------------------------------------------------------


def test_ablate_single_value_single_row(tmp_path, capsys):
    cloud = sphere_file(tmp_path, n=200)
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(
        "max_points = 100\n[train]\nepochs = 5\nbatch_size = 100\n"
        "[sampler]\nqueries_per_point = 4\nbatch_size = 100\n"
        "[arch]\nhidden_width = 32\ndepth = 4\nskip_at = 2\n[mesh]\nresolution = 16\n"
        "[metrics]\nn_samples = 500\n"
    )
    out_csv = tmp_path / "sweep.csv"
    code = main(["ablate", str(cloud), "--preset", "smoke", "--config", str(cfg),
                 "--knob", "sigma_scale", "--values", "1.0",
                 "--out-dir", str(tmp_path / "sweep"), "--out", str(out_csv)])
    assert code == EXIT_OK
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "value,l2_cd_x100"
    assert len(lines) == 2


def test_ablate_duplicate_values_deduplicated(tmp_path, capsys):
    cloud = sphere_file(tmp_path, n=200)
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(
        "max_points = 100\n[train]\nepochs = 3\nbatch_size = 100\n"
        "[sampler]\nqueries_per_point = 4\nbatch_size = 100\n"
        "[arch]\nhidden_width = 32\ndepth = 4\nskip_at = 2\n[mesh]\nresolution = 16\n"
        "[metrics]\nn_samples = 300\n"
    )
    code = main(["ablate", str(cloud), "--preset", "smoke", "--config", str(cfg),
                 "--knob", "sigma_scale", "--values", "1.0,1.0",
                 "--out-dir", str(tmp_path / "sweep2")])
    assert code == EXIT_OK
    captured = capsys.readouterr()
    assert "duplicate" in captured.err
    assert len(captured.out.strip().splitlines()) == 2


def test_ablate_unknown_knob_lists_valid(tmp_path, capsys):
    cloud = sphere_file(tmp_path, n=120)
    code = main(["ablate", str(cloud), "--knob", "momentum", "--values", "1"])
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "sigma_scale" in err and "init_mode" in err


# -- demo2d --------------------------------------------------------------------------


def test_demo2d_cli_smoke(tmp_path, capsys):
    code = main(["demo2d", "--out-dir", str(tmp_path / "d"), "--circle-samples", "120",
                 "--epochs", "15", "--seed", "2"])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_queries"] == 120 * 25
    assert (tmp_path / "d" / "field_sign.svg").exists()
