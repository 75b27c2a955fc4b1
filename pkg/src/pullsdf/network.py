"""The signed-distance network f: R^d -> R.

An MLP of `depth` linear layers with an optional mid-network skip
connection that re-injects the raw input. Geometric initialization makes
the untrained network approximate the signed distance of a sphere
(negative inside, positive outside), which anchors the sign convention
before any training happens.

Besides plain evaluation, the module can build the input gradient
grad_q f(q) as a tape expression of its own (`forward_with_grad_graph`).
That keeps the gradient differentiable with respect to the parameters,
which the training loss needs.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .autodiff import Tape, backward
from .errors import CheckpointError, CheckpointVersionError, ConfigurationError

_MAGIC = b"NPUL"
_VERSION = 1
_ACT_CODES = {ad.SOFTPLUS: 0, ad.RELU: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class ArchitectureConfig:
    input_dim: int = 3
    depth: int = 8
    hidden_width: int = 128
    activation: str = ad.SOFTPLUS
    beta: float = 100.0
    skip_at: int | None = 4

    def __post_init__(self):
        if self.input_dim not in (2, 3):
            raise ConfigurationError(f"input_dim must be 2 or 3, got {self.input_dim}")
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if self.hidden_width < 1:
            raise ConfigurationError(f"hidden_width must be >= 1, got {self.hidden_width}")
        if self.activation not in _ACT_CODES:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.activation == ad.SOFTPLUS and not self.beta > 0:
            raise ConfigurationError(f"softplus beta must be > 0, got {self.beta}")
        if self.skip_at is not None and not 2 <= self.skip_at <= self.depth - 1:
            raise ConfigurationError(
                f"skip_at must lie in [2, depth-1], got {self.skip_at} for depth {self.depth}"
            )

    def layer_shapes(self):
        """(out, in) shape of each of the `depth` weight matrices."""
        shapes = []
        for k in range(1, self.depth + 1):
            n_in = self.input_dim if k == 1 else self.hidden_width
            n_out = 1 if k == self.depth else self.hidden_width
            shapes.append((n_out, n_in))
        return shapes


class SdfNetwork:
    """Parameter set plus architecture; evaluation is side-effect free."""

    def __init__(self, arch, weights, biases, skip_weight=None, seed=0):
        self.arch = arch
        self.weights = weights
        self.biases = biases
        self.skip_weight = skip_weight
        self.seed = seed
        if (arch.skip_at is not None) != (skip_weight is not None):
            raise ConfigurationError("skip_weight must be present iff arch.skip_at is set")
        for (W, b), (n_out, n_in) in zip(zip(weights, biases), arch.layer_shapes()):
            if W.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ConfigurationError(
                    f"parameter shapes {W.shape}/{b.shape} do not match arch {(n_out, n_in)}"
                )

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        """Parameter arrays in canonical order: W1, b1, ..., WL, bL [, U]."""
        params = []
        for W, b in zip(self.weights, self.biases):
            params.append(W)
            params.append(b)
        if self.skip_weight is not None:
            params.append(self.skip_weight)
        return params

    def set_parameters(self, arrays):
        n_layers = len(self.weights)
        expected = 2 * n_layers + (1 if self.skip_weight is not None else 0)
        if len(arrays) != expected:
            raise ConfigurationError(f"expected {expected} parameter arrays, got {len(arrays)}")
        for k in range(n_layers):
            self.weights[k] = arrays[2 * k]
            self.biases[k] = arrays[2 * k + 1]
        if self.skip_weight is not None:
            self.skip_weight = arrays[-1]

    def param_leaves(self, tape, requires_grad=True):
        """Record every parameter as a tape leaf, canonical order."""
        return [tape.leaf(p, requires_grad=requires_grad) for p in self.parameters()]

    # -- graph construction -------------------------------------------------

    def _split_leaves(self, leaves):
        n_layers = len(self.weights)
        w_nodes = [leaves[2 * k] for k in range(n_layers)]
        b_nodes = [leaves[2 * k + 1] for k in range(n_layers)]
        u_node = leaves[-1] if self.skip_weight is not None else None
        return w_nodes, b_nodes, u_node

    def forward_graph(self, tape, x, leaves=None):
        """Record the forward pass; returns (f_node, preactivation nodes)."""
        if leaves is None:
            leaves = self.param_leaves(tape, requires_grad=False)
        w_nodes, b_nodes, u_node = self._split_leaves(leaves)
        arch = self.arch
        h = x
        pre = []
        for k in range(arch.depth - 1):
            a = ad.affine(tape, w_nodes[k], b_nodes[k], h)
            if arch.skip_at is not None and k + 1 == arch.skip_at:
                a = ad.add(tape, a, ad.linear(tape, u_node, x))
            pre.append(a)
            h = ad.act(tape, a, arch.activation, arch.beta)
        f = ad.affine(tape, w_nodes[-1], b_nodes[-1], h)
        return f, pre

    def forward_with_grad_graph(self, tape, x, leaves=None):
        """Record the forward pass and the input gradient as one graph.

        The gradient is assembled by unrolling the chain rule layer by
        layer, so it is an ordinary tape expression: backpropagating a
        loss built from it yields exact parameter gradients including
        the second-order terms.
        """
        if leaves is None:
            leaves = self.param_leaves(tape, requires_grad=True)
        w_nodes, b_nodes, u_node = self._split_leaves(leaves)
        arch = self.arch
        h = x
        derivs = []
        for k in range(arch.depth - 1):
            a = ad.affine(tape, w_nodes[k], b_nodes[k], h)
            if arch.skip_at is not None and k + 1 == arch.skip_at:
                a = ad.add(tape, a, ad.linear(tape, u_node, x))
            h, d = ad.act_pair(tape, a, arch.activation, arch.beta)
            derivs.append(d)
        f = ad.affine(tape, w_nodes[-1], b_nodes[-1], h)
        # v = df/dh_k, walked from the output layer back to the input
        v = w_nodes[-1]  # (1, width), broadcasts over the batch
        g_skip = None
        for k in range(arch.depth - 2, -1, -1):
            u = ad.mul(tape, v, derivs[k])  # df/da_k
            if arch.skip_at is not None and k + 1 == arch.skip_at:
                g_skip = ad.matmul(tape, u, u_node)
            v = ad.matmul(tape, u, w_nodes[k])
        g = v if g_skip is None else ad.add(tape, v, g_skip)
        return f, g

    # -- evaluation ---------------------------------------------------------

    def _forward_values(self, q):
        arch = self.arch
        h = q
        for k in range(arch.depth - 1):
            a = h @ self.weights[k].T + self.biases[k]
            if arch.skip_at is not None and k + 1 == arch.skip_at:
                a = a + q @ self.skip_weight.T
            h = ad._act_value(a, arch.activation, arch.beta)
        return h @ self.weights[-1].T + self.biases[-1]

    def eval(self, q):
        """Signed distance at a single point -> float."""
        q = np.asarray(q, dtype=np.float64)
        return float(self._forward_values(q.reshape(1, -1))[0, 0])

    def eval_batch(self, q):
        """Signed distances for (N, d) points -> (N,) array."""
        q = np.asarray(q, dtype=np.float64)
        return self._forward_values(q)[:, 0]

    def eval_with_grad(self, q):
        """Value and input gradient at q.

        Accepts one point (d,) -> (float, (d,)) or a batch (N, d) ->
        ((N,), (N, d)). A vanishing gradient is reported as-is; the
        caller decides whether that is degenerate.
        """
        q = np.asarray(q, dtype=np.float64)
        single = q.ndim == 1
        s, g = _eval_with_grad_batch(self, np.atleast_2d(q))
        if single:
            return float(s[0]), g[0]
        return s, g

    # -- checkpointing ------------------------------------------------------

    def save_bytes(self):
        """Serialize to the NPUL little-endian binary layout."""
        arch = self.arch
        head = struct.pack(
            "<4sIIIIIdiQ",
            _MAGIC,
            _VERSION,
            arch.input_dim,
            arch.depth,
            arch.hidden_width,
            _ACT_CODES[arch.activation],
            arch.beta,
            -1 if arch.skip_at is None else arch.skip_at,
            int(self.seed) & 0xFFFFFFFFFFFFFFFF,
        )
        blobs = [head]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            blobs.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
            if arch.skip_at is not None and k + 1 == arch.skip_at:
                blobs.append(np.ascontiguousarray(self.skip_weight, dtype="<f8").tobytes())
            blobs.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(blobs)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.save_bytes())


_HEAD_FMT = "<4sIIIIIdiQ"
_HEAD_SIZE = struct.calcsize(_HEAD_FMT)


def load_bytes(data):
    """Parse NPUL checkpoint bytes back into an SdfNetwork."""
    if len(data) < _HEAD_SIZE:
        raise CheckpointError(
            f"checkpoint truncated: header needs {_HEAD_SIZE} bytes, got {len(data)}",
            offset=len(data),
        )
    magic, version, input_dim, depth, width, act_code, beta, skip_at, seed = struct.unpack(
        _HEAD_FMT, data[:_HEAD_SIZE]
    )
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0", offset=0)
    if version != _VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} (expected {_VERSION})", offset=4
        )
    if act_code not in _ACT_NAMES:
        raise CheckpointError(f"unknown activation code {act_code}", offset=20)
    arch = ArchitectureConfig(
        input_dim=input_dim,
        depth=depth,
        hidden_width=width,
        activation=_ACT_NAMES[act_code],
        beta=beta,
        skip_at=None if skip_at < 0 else skip_at,
    )
    offset = _HEAD_SIZE

    def take(shape):
        nonlocal offset
        need = int(np.prod(shape)) * 8
        if offset + need > len(data):
            raise CheckpointError(
                f"checkpoint truncated at offset {offset}: need {need} more bytes",
                offset=offset,
            )
        arr = np.frombuffer(data[offset : offset + need], dtype="<f8").reshape(shape)
        offset += need
        return arr.astype(np.float64)

    weights, biases = [], []
    skip_weight = None
    for k, (n_out, n_in) in enumerate(arch.layer_shapes()):
        weights.append(take((n_out, n_in)))
        if arch.skip_at is not None and k + 1 == arch.skip_at:
            skip_weight = take((arch.hidden_width, arch.input_dim))
        biases.append(take((n_out,)))
    if offset != len(data):
        raise CheckpointError(
            f"{len(data) - offset} trailing bytes after parameters", offset=offset
        )
    return SdfNetwork(arch, weights, biases, skip_weight, seed=seed)


def load(path):
    with open(path, "rb") as fh:
        return load_bytes(fh.read())


# ---------------------------------------------------------------------------
# initialization


def _probe_points(dim, n=1024):
    # fixed probe set for init calibration; independent of the user seed
    gen = rng.stream(0x9E0_CAB, rng.NET_INIT, 0xFACADE, dim)
    return gen.uniform(-1.0, 1.0, size=(n, dim))


def _spread_directions(n, dim):
    """n unit vectors spread evenly: golden-spiral points on the sphere
    for dim 3, equally spaced angles for dim 2."""
    i = np.arange(n) + 0.5
    if dim == 2:
        theta = 2.0 * np.pi * i / n
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def init_geometric(arch, radius, seed=0):
    """Initialize so the raw network approximates f(q) = |q| - radius.

    The first layer projects q onto evenly spread unit directions; with
    half of them active, the rectified sum is a quadrature for |q|.
    Hidden layers start near the identity (they pass the nonnegative
    code through), the skip weights start at zero, and the output row
    is constant. A final least-squares fit of gain and offset against a
    fixed probe set absorbs the activation's soft-corner bias, so the
    signed distance of the radius sphere is reproduced closely at any
    width. Per-weight noise keeps seeds distinguishable; everything is
    deterministic in (arch, radius, seed).

    An early variant drew every hidden weight iid zero-mean normal
    (variance 2/width). Its finite-width gain wobble and gradient
    direction noise grow with depth and break the sphere-approximation
    contract at practical widths, which is why the spread/identity
    construction is used instead.
    """
    if not radius > 0:
        raise ConfigurationError(f"radius must be > 0, got {radius}")
    shapes = arch.layer_shapes()
    width = arch.hidden_width
    dim = arch.input_dim
    # scale so that sum of squared rectified projections preserves |q|^2:
    # E[(d.q)^2 | d.q > 0] * n/2 * s^2 = |q|^2 with E[(d.q)^2] = |q|^2/dim
    first_scale = np.sqrt(2.0 * dim / width)
    readout = 1.0 / (width * _mean_rectified_projection(dim))
    weights, biases = [], []
    for k, (n_out, n_in) in enumerate(shapes):
        gen = rng.stream(seed, rng.NET_INIT, k)
        if k == 0:
            W = first_scale * _spread_directions(n_out, dim)
            W += rng.normal(gen, (n_out, n_in), sigma=1e-4 * first_scale)
        elif k == len(shapes) - 1:
            W = np.full((n_out, n_in), readout / first_scale)
            W += rng.normal(gen, (n_out, n_in), sigma=1e-6)
        else:
            W = np.eye(n_out, n_in)
            W += rng.normal(gen, (n_out, n_in), sigma=1e-4)
        weights.append(W)
        biases.append(np.zeros(n_out) if k < len(shapes) - 1 else np.full((n_out,), -float(radius)))
    skip_weight = None
    if arch.skip_at is not None:
        skip_weight = np.zeros((width, dim))
    net = SdfNetwork(arch, weights, biases, skip_weight, seed=seed)

    # fit pre-bias response ~ gain * |q| + offset on the probe set and
    # fold the correction into the output layer
    probe = _probe_points(dim)
    r = np.linalg.norm(probe, axis=1)
    pre = net.eval_batch(probe) + radius
    design = np.stack([r, np.ones_like(r)], axis=1)
    (gain, offset), *_ = np.linalg.lstsq(design, pre, rcond=None)
    if 0.05 < gain < 20.0:
        net.weights[-1] = net.weights[-1] / gain
        net.biases[-1] = np.full((1,), -float(radius) - offset / gain)
    return net


def _mean_rectified_projection(dim):
    # E[max(d.u, 0)] over evenly spread unit d, for fixed unit u
    return 1.0 / np.pi if dim == 2 else 0.25


def init_random(arch, seed=0):
    """Plain He-style initialization (the no-geometric-init ablation)."""
    weights, biases = [], []
    shapes = arch.layer_shapes()
    for k, (n_out, n_in) in enumerate(shapes):
        gen = rng.stream(seed, rng.NET_INIT, k)
        W = rng.normal(gen, (n_out, n_in), sigma=np.sqrt(2.0 / n_in))
        b = np.zeros(n_out)
        weights.append(W)
        biases.append(b)
    skip_weight = None
    if arch.skip_at is not None:
        gen = rng.stream(seed, rng.NET_INIT, len(shapes))
        skip_weight = rng.normal(
            gen, (arch.hidden_width, arch.input_dim), sigma=np.sqrt(1.0 / arch.input_dim)
        )
    return SdfNetwork(arch, weights, biases, skip_weight, seed=seed)


# ---------------------------------------------------------------------------
# gradients with respect to the input


def _eval_with_grad_batch(net, q):
    tape = Tape()
    x = tape.leaf(q, requires_grad=True)
    f, _ = net.forward_graph(tape, x)
    backward(tape, ad.asum(tape, f))
    return f.value[:, 0], x.grad


def grad_wrt_input(net, q):
    """grad_q f(q): the direction of fastest signed-distance increase."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ConfigurationError("query point must be finite")
    single = q.ndim == 1
    _, g = _eval_with_grad_batch(net, np.atleast_2d(q))
    return g[0] if single else g
