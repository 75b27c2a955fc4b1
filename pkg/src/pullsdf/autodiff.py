"""Reverse-mode automatic differentiation over dense arrays.

A Tape records primitive operations in construction order, which is
already a topological order, so the backward sweep is a single reverse
walk. Node values are float64 numpy arrays shaped (batch, dim); scalars
are (1, 1). The engine is just big enough for an MLP: affine maps,
elementwise activations (and their derivatives, recorded as primitives
of their own so gradients can flow through gradient expressions),
broadcasting add/multiply, row norms, dot products and sum reductions.

A tape is single-writer: build, run backward, reset. Several tapes can
run at once over a shared read-only set of parameter arrays.
"""

import numpy as np

from .errors import ConfigurationError

SOFTPLUS = "softplus"
RELU = "relu"


class Node:
    """One recorded value on a tape."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "_forward")

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self._backward = None
        self._forward = None

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=False):
        """Record an input node. A leaf has no parents."""
        node = Node(np.asarray(value, dtype=np.float64), (), requires_grad)
        self.nodes.append(node)
        return node

    def record(self, value, parents, backward, forward):
        node = Node(value, parents, any(p.requires_grad for p in parents))
        node._backward = backward
        node._forward = forward
        self.nodes.append(node)
        return node

    def reset(self):
        """Drop all recorded nodes; the tape can then record afresh."""
        self.nodes.clear()

    def replay(self):
        """Re-execute every recorded op in order, overwriting node values."""
        for node in self.nodes:
            if node._forward is not None:
                node.value = node._forward()


class DualPoint:
    """A query location recorded as a differentiable leaf on a tape."""

    __slots__ = ("value", "node")

    def __init__(self, tape, q):
        self.value = np.asarray(q, dtype=np.float64)
        self.node = tape.leaf(np.atleast_2d(self.value), requires_grad=True)


def _accumulate(parent, contrib):
    # accumulation rebinds, never mutates, so sharing arrays is safe
    if not parent.requires_grad:
        return
    parent.grad = contrib if parent.grad is None else parent.grad + contrib


def _unbroadcast(grad, shape):
    # reduce a broadcasted gradient back to the original operand shape
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape, output):
    """Reverse sweep from a scalar output; fills .grad on every node
    that (transitively) requires gradients."""
    if output.value.size != 1:
        raise ConfigurationError(
            f"backward needs a scalar output node, got shape {output.value.shape}"
        )
    for node in tape.nodes:
        node.grad = None
    output.grad = np.ones_like(output.value)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None or not node.requires_grad:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitives


def affine(tape, W, b, x):
    """x @ W.T + b for x of shape (B, n_in), W (n_out, n_in), b (n_out,)."""
    if W.value.ndim != 2 or x.value.ndim != 2 or W.value.shape[1] != x.value.shape[1]:
        raise ConfigurationError(
            f"affine shape mismatch: W {W.value.shape} vs x {x.value.shape}"
        )
    if b.value.shape != (W.value.shape[0],):
        raise ConfigurationError(
            f"affine bias shape {b.value.shape} incompatible with W {W.value.shape}"
        )

    def fwd():
        return x.value @ W.value.T + b.value

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g @ W.value)
        if W.requires_grad:
            _accumulate(W, g.T @ x.value)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    return tape.record(fwd(), (W, b, x), bwd, fwd)


def linear(tape, W, x):
    """x @ W.T without bias (used for the skip-connection injection)."""
    if W.value.shape[1] != x.value.shape[1]:
        raise ConfigurationError(
            f"linear shape mismatch: W {W.value.shape} vs x {x.value.shape}"
        )

    def fwd():
        return x.value @ W.value.T

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g @ W.value)
        if W.requires_grad:
            _accumulate(W, g.T @ x.value)

    return tape.record(fwd(), (W, x), bwd, fwd)


def matmul(tape, x, M):
    """x @ M for x (B, n), M (n, m)."""
    if x.value.shape[1] != M.value.shape[0]:
        raise ConfigurationError(
            f"matmul shape mismatch: x {x.value.shape} vs M {M.value.shape}"
        )

    def fwd():
        return x.value @ M.value

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g @ M.value.T)
        if M.requires_grad:
            _accumulate(M, x.value.T @ g)

    return tape.record(fwd(), (x, M), bwd, fwd)


def add(tape, a, b):
    def fwd():
        return a.value + b.value

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return tape.record(fwd(), (a, b), bwd, fwd)


def sub(tape, a, b):
    def fwd():
        return a.value - b.value

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))

    return tape.record(fwd(), (a, b), bwd, fwd)


def mul(tape, a, b):
    """Elementwise product with numpy broadcasting."""

    def fwd():
        return a.value * b.value

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return tape.record(fwd(), (a, b), bwd, fwd)


def scale(tape, a, c):
    """Multiply by a python constant."""
    c = float(c)

    def fwd():
        return a.value * c

    def bwd(g):
        _accumulate(a, g * c)

    return tape.record(fwd(), (a,), bwd, fwd)


def divide(tape, a, b):
    """Elementwise a / b with broadcasting (b must be nonzero)."""

    def fwd():
        return a.value / b.value

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return tape.record(fwd(), (a, b), bwd, fwd)


def rownorm(tape, x):
    """Euclidean norm per row: (B, n) -> (B, 1)."""

    def fwd():
        return np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True))

    out = tape.record(fwd(), (x,), None, fwd)

    def bwd(g):
        norm = out.value
        safe = np.where(norm > 0.0, norm, 1.0)
        _accumulate(x, g * (x.value / safe))

    out._backward = bwd
    return out


def dot(tape, a, b):
    """Full contraction sum(a * b) -> (1, 1) scalar node."""

    def fwd():
        return np.sum(a.value * b.value).reshape(1, 1)

    def bwd(g):
        s = g.reshape(())
        _accumulate(a, s * b.value)
        _accumulate(b, s * a.value)

    return tape.record(fwd(), (a, b), bwd, fwd)


def sumsq(tape, x):
    """sum(x**2) -> (1, 1) scalar node."""

    def fwd():
        return np.sum(x.value * x.value).reshape(1, 1)

    def bwd(g):
        _accumulate(x, (2.0 * g.reshape(())) * x.value)

    return tape.record(fwd(), (x,), bwd, fwd)


def asum(tape, x):
    """sum of all entries -> (1, 1) scalar node."""

    def fwd():
        return np.sum(x.value).reshape(1, 1)

    def bwd(g):
        _accumulate(x, np.full_like(x.value, g.reshape(())))

    return tape.record(fwd(), (x,), bwd, fwd)


# ---------------------------------------------------------------------------
# activations (values and derivatives; derivatives are primitives so that
# expressions built from them stay differentiable)


def softplus_value(x, beta):
    # max(x,0) + log1p(exp(-beta*|x|))/beta is overflow-safe on both sides
    return np.maximum(x, 0.0) + np.log1p(np.exp(-beta * np.abs(x))) / beta


def sigmoid_value(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def _act_value(x, kind, beta):
    if kind == SOFTPLUS:
        return softplus_value(x, beta)
    if kind == RELU:
        return np.maximum(x, 0.0)
    raise ConfigurationError(f"unknown activation {kind!r}")


def _act_deriv_value(x, kind, beta):
    if kind == SOFTPLUS:
        return sigmoid_value(beta * x)
    if kind == RELU:
        # subgradient 0 at exactly 0
        return (x > 0.0).astype(np.float64)
    raise ConfigurationError(f"unknown activation {kind!r}")


def _act_second_value(x, kind, beta):
    if kind == SOFTPLUS:
        s = sigmoid_value(beta * x)
        return beta * s * (1.0 - s)
    if kind == RELU:
        return np.zeros_like(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def act(tape, x, kind, beta=100.0):
    """Elementwise activation."""

    def fwd():
        return _act_value(x.value, kind, beta)

    def bwd(g):
        _accumulate(x, g * _act_deriv_value(x.value, kind, beta))

    return tape.record(fwd(), (x,), bwd, fwd)


def act_deriv(tape, x, kind, beta=100.0):
    """Elementwise activation derivative, itself differentiable (via the
    second derivative), which lets gradients flow through input-gradient
    expressions."""

    def fwd():
        return _act_deriv_value(x.value, kind, beta)

    def bwd(g):
        _accumulate(x, g * _act_second_value(x.value, kind, beta))

    return tape.record(fwd(), (x,), bwd, fwd)


def act_pair(tape, x, kind, beta=100.0):
    """Activation value and derivative as two nodes sharing one pass.

    For softplus both reuse a single exp(-beta*|x|); the backward
    closures read the recorded derivative instead of recomputing it
    (second derivative = beta*d*(1-d)), which matters inside the
    per-step training graph.
    """
    if kind == RELU:
        d = act_deriv(tape, x, kind, beta)

        def fwd_h():
            return np.maximum(x.value, 0.0)

        def bwd_h(g):
            _accumulate(x, g * d.value)

        return tape.record(fwd_h(), (x,), bwd_h, fwd_h), d
    if kind != SOFTPLUS:
        raise ConfigurationError(f"unknown activation {kind!r}")

    def values():
        z = np.abs(x.value)
        z *= -beta
        np.exp(z, out=z)
        zp1 = z + 1.0
        h = np.log1p(z)
        h /= beta
        h += np.maximum(x.value, 0.0)
        d = np.where(x.value >= 0.0, 1.0 / zp1, z / zp1)
        return h, d

    h_val, d_val = values()

    d = tape.record(d_val, (x,), None, lambda: values()[1])

    def bwd_d(g):
        dv = d.value
        _accumulate(x, g * (beta * dv * (1.0 - dv)))

    d._backward = bwd_d

    def bwd_h(g):
        _accumulate(x, g * d.value)

    h = tape.record(h_val, (x,), bwd_h, lambda: values()[0])
    return h, d
