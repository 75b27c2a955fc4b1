import numpy as np
import pytest

from pullsdf import autodiff as ad
from pullsdf import network
from pullsdf.autodiff import Tape
from pullsdf.errors import CheckpointError, CheckpointVersionError, ConfigurationError
from pullsdf.network import ArchitectureConfig, SdfNetwork, grad_wrt_input, init_geometric, init_random


def linear_net(axis):
    """Exact f(q) = q[axis] using softplus(x) - softplus(-x) = x."""
    arch = ArchitectureConfig(depth=2, hidden_width=2, skip_at=None)
    W1 = np.zeros((2, 3))
    W1[0, axis] = 1.0
    W1[1, axis] = -1.0
    W2 = np.array([[1.0, -1.0]])
    return SdfNetwork(arch, [W1, W2], [np.zeros(2), np.zeros(1)], None)


def small_random_net(seed=0, input_dim=3):
    arch = ArchitectureConfig(input_dim=input_dim, depth=3, hidden_width=8, skip_at=2, beta=10.0)
    return init_random(arch, seed=seed)


def test_arch_validation():
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(depth=1)
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(hidden_width=0)
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(activation="tanh")
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(beta=0.0)
    with pytest.raises(ConfigurationError):
        ArchitectureConfig(depth=4, skip_at=4)


def test_linear_net_eval():
    net = linear_net(axis=0)
    assert net.eval([2.0, 0.0, 0.0]) == pytest.approx(2.0, abs=1e-15)
    assert net.eval([-1.5, 3.0, 7.0]) == pytest.approx(-1.5, abs=1e-12)


def test_eval_deterministic():
    net = small_random_net(3)
    q = np.array([0.12, -0.5, 0.33])
    assert net.eval(q) == net.eval(q)


def test_grad_of_linear_net_is_axis():
    net = linear_net(axis=2)
    g = grad_wrt_input(net, np.array([0.4, -0.2, 0.7]))
    assert np.allclose(g, [0.0, 0.0, 1.0], atol=1e-12)


def test_grad_matches_finite_differences():
    net = small_random_net(5)
    gen = np.random.default_rng(2)
    for q in gen.uniform(-1, 1, size=(5, 3)):
        g = grad_wrt_input(net, q)
        fd = np.zeros(3)
        h = 1e-5
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (net.eval(q + e) - net.eval(q - e)) / (2 * h)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-4


def test_grad_rejects_nonfinite_query():
    net = small_random_net(1)
    with pytest.raises(ConfigurationError):
        grad_wrt_input(net, np.array([np.nan, 0.0, 0.0]))


def test_eval_with_grad_consistent_with_parts():
    net = small_random_net(9)
    q = np.array([0.3, 0.1, -0.6])
    s, g = net.eval_with_grad(q)
    assert s == net.eval(q)
    assert np.array_equal(g, grad_wrt_input(net, q))
    # batched form agrees row-wise (BLAS may round differently per shape)
    Q = np.array([q, -q, 2 * q])
    sb, gb = net.eval_with_grad(Q)
    assert sb[0] == pytest.approx(s, abs=1e-12)
    assert np.allclose(gb[0], g, atol=1e-12)


def test_grad_chain_expression_matches_backward_route():
    # the unrolled gradient graph and a plain backward pass are two
    # independent routes to grad_q f and must agree to rounding
    net = small_random_net(11)
    gen = np.random.default_rng(4)
    q = gen.uniform(-1, 1, size=(6, 3))
    tape = Tape()
    x = tape.leaf(q)
    _, g_node = net.forward_with_grad_graph(tape, x)
    g_backward = grad_wrt_input(net, q)
    assert np.max(np.abs(g_node.value - g_backward)) < 1e-12


# -- geometric initialization ------------------------------------------------

SPHERE_R = 0.5


@pytest.fixture(scope="module")
def geo_net():
    return init_geometric(ArchitectureConfig(), SPHERE_R, seed=0)


def test_geometric_init_center_inside(geo_net):
    assert geo_net.eval([0.0, 0.0, 0.0]) < 0


def test_geometric_init_corner_outside(geo_net):
    assert geo_net.eval([1.0, 1.0, 1.0]) > 0


def test_geometric_init_tracks_sphere_distance(geo_net):
    gen = np.random.default_rng(42)
    q = gen.uniform(-1, 1, size=(1000, 3))
    f = geo_net.eval_batch(q)
    true = np.linalg.norm(q, axis=1) - SPHERE_R
    assert np.mean(np.abs(f - true)) <= 0.1


def test_geometric_init_sign_margins(geo_net):
    gen = np.random.default_rng(43)
    q = gen.uniform(-1, 1, size=(4000, 3))
    r = np.linalg.norm(q, axis=1)
    f = geo_net.eval_batch(q)
    assert np.all(f[r < 0.5 * SPHERE_R] < 0)
    assert np.all(f[r > 1.5 * SPHERE_R] > 0)


def test_geometric_init_near_surface_value(geo_net):
    assert -0.1 <= geo_net.eval([0.0, 0.0, SPHERE_R]) <= 0.1


def test_geometric_init_gradient_direction(geo_net):
    q = np.array([0.0, 0.0, 0.9])
    g = grad_wrt_input(geo_net, q)
    cos = g @ (q / np.linalg.norm(q)) / np.linalg.norm(g)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))) < 5.0


def test_geometric_init_zero_level_set_on_corner_rays(geo_net):
    # sign change along each ray from the origin to a cube corner
    for corner in np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).T.reshape(-1, 3):
        ts = np.linspace(1e-3, 1.0, 200)[:, None]
        vals = geo_net.eval_batch(ts * corner[None, :].astype(float))
        assert vals[0] < 0 and vals[-1] > 0
        assert np.any(np.diff(np.sign(vals)) != 0)


def test_geometric_init_rejects_bad_radius():
    with pytest.raises(ConfigurationError):
        init_geometric(ArchitectureConfig(), 0.0)


def test_continuity_under_small_perturbation():
    gen = np.random.default_rng(8)
    for seed in range(3):
        net = small_random_net(seed)
        q = gen.uniform(-1, 1, size=(50, 3))
        delta = gen.normal(size=(50, 3))
        delta *= 1e-6 / np.linalg.norm(delta, axis=1, keepdims=True)
        jump = np.abs(net.eval_batch(q + delta) - net.eval_batch(q))
        assert np.all(np.isfinite(jump))
        assert np.max(jump) < 1e-3  # Lipschitz-bounded at this scale


def test_all_parameters_finite_after_init():
    for net in (init_geometric(ArchitectureConfig(), 0.5, 1), init_random(ArchitectureConfig(), 1)):
        for p in net.parameters():
            assert np.all(np.isfinite(p))


# -- checkpoint round trip ----------------------------------------------------


def test_save_load_roundtrip_bit_identical():
    net = small_random_net(7)
    data = net.save_bytes()
    clone = network.load_bytes(data)
    gen = np.random.default_rng(1)
    q = gen.uniform(-1, 1, size=(100, 3))
    assert np.array_equal(net.eval_batch(q), clone.eval_batch(q))
    assert clone.save_bytes() == data


def test_save_load_file_roundtrip(tmp_path):
    net = init_geometric(ArchitectureConfig(depth=4, hidden_width=16, skip_at=2), 0.5, seed=2)
    path = tmp_path / "model.npul"
    net.save(path)
    clone = network.load(path)
    q = np.array([[0.1, 0.2, 0.3]])
    assert np.array_equal(net.eval_batch(q), clone.eval_batch(q))


def test_load_truncated_fails_with_offset():
    net = small_random_net(4)
    data = net.save_bytes()
    with pytest.raises(CheckpointError) as err:
        network.load_bytes(data[: len(data) // 2])
    assert err.value.offset is not None


def test_load_version_mismatch():
    net = small_random_net(4)
    data = bytearray(net.save_bytes())
    data[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(CheckpointVersionError):
        network.load_bytes(bytes(data))


def test_load_bad_magic():
    with pytest.raises(CheckpointError):
        network.load_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")


def test_load_trailing_bytes_rejected():
    net = small_random_net(4)
    with pytest.raises(CheckpointError):
        network.load_bytes(net.save_bytes() + b"\x00" * 8)
