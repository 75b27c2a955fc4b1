"""The pull-to-surface training loop.

Each query location q is pulled along (inside) or against (outside) the
network's own gradient with a stride given by the predicted signed
distance, and the squared error between the pulled point and the
nearest surface point is minimized. The normalization of the gradient
sits inside the differentiated graph, so one backward pass yields exact
parameter gradients including the terms that flow through grad_q f.

Adam with bias correction updates the parameters; the loss curve is
recorded per step. Everything is deterministic given the seeds.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import network as net_mod
from . import rng
from .autodiff import Tape, backward
from .errors import ConfigurationError, DegenerateGradientError, TrainingDivergenceError
from .sampler import make_batch, sample_queries

GEOMETRIC = "geometric"
RANDOM_INIT = "random"

INIT_SPHERE_RADIUS = 0.5  # clouds are normalized into [-0.5, 0.5]^d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 2500
    batch_size: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_mode: str = GEOMETRIC
    grad_floor: float = 1e-12
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError(f"adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_mode not in (GEOMETRIC, RANDOM_INIT):
            raise ConfigurationError(f"unknown init_mode {self.init_mode!r}")
        if not self.grad_floor > 0:
            raise ConfigurationError(f"grad_floor must be > 0, got {self.grad_floor}")


@dataclass
class LossCurve:
    """Per-step training records (step, epoch, mean squared pull error)."""

    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def append(self, step, epoch, loss):
        if self.steps and step <= self.steps[-1]:
            raise ConfigurationError("loss-curve steps must be strictly increasing")
        self.steps.append(step)
        self.epochs.append(epoch)
        self.losses.append(loss)

    def __len__(self):
        return len(self.steps)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "epoch", "loss"])
            for s, e, l in zip(self.steps, self.epochs, self.losses):
                writer.writerow([s, e, f"{l:.9g}"])


# ---------------------------------------------------------------------------
# the pull operation


def pull(q, s, g, grad_floor=1e-12):
    """Pull one query location onto the surface: q - s * g/|g|.

    Positive s moves against the gradient (outside points move inward),
    negative s moves along it. Raises when the gradient is too small to
    define a direction.
    """
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= grad_floor:
        raise DegenerateGradientError(
            f"gradient norm {norm:.3e} at or below floor {grad_floor:.3e}"
        )
    return q - s * (g / norm)


def pull_many(q, s, g, grad_floor=1e-12):
    """Vectorized pull for (N, d) rows.

    Returns (pulled, valid) where rows with a degenerate gradient are
    returned unchanged and flagged False.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    valid = norm[:, 0] > grad_floor
    safe = np.where(valid[:, None], norm, 1.0)
    pulled = np.where(valid[:, None], q - s * (g / safe), q)
    return pulled, valid


# ---------------------------------------------------------------------------
# loss and gradients


def batch_loss(net, batch, grad_floor=1e-12):
    """Mean squared distance between pulled queries and their targets.

    Returns (loss, grads, degenerate_count) with grads aligned to
    net.parameters(). Samples whose gradient norm is at or below the
    floor are skipped and counted; if every sample in the batch is
    degenerate the loss is undefined and an error is raised.
    """
    if len(batch) == 0:
        raise ConfigurationError("batch_loss needs a non-empty batch")
    tape = Tape()
    leaves = net.param_leaves(tape, requires_grad=True)
    x = tape.leaf(batch.q)
    f, g = net.forward_with_grad_graph(tape, x, leaves)

    gnorm = ad.rownorm(tape, g)  # (B, 1)
    valid = gnorm.value[:, 0] > grad_floor
    degenerate = int(np.sum(~valid))
    if degenerate == len(batch):
        raise DegenerateGradientError(
            f"all {len(batch)} samples in the batch have degenerate gradients"
        )
    # keep degenerate rows finite inside the graph; their residuals are
    # masked out below so they contribute neither loss nor gradient
    safe_norm = ad.add(tape, gnorm, tape.leaf((~valid)[:, None].astype(np.float64)))
    direction = ad.divide(tape, g, safe_norm)
    pulled = ad.sub(tape, x, ad.mul(tape, f, direction))
    residual = ad.sub(tape, pulled, tape.leaf(batch.t))
    masked = ad.mul(tape, residual, tape.leaf(valid[:, None].astype(np.float64)))
    loss = ad.scale(tape, ad.sumsq(tape, masked), 1.0 / int(np.sum(valid)))

    backward(tape, loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]
    return loss.value.item(), grads, degenerate


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, in place; returns params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params/grads/state lengths disagree")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, grad, m, v in zip(params, grads, state.m, state.v):
        if p.shape != grad.shape:
            raise ConfigurationError(f"gradient shape {grad.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * (grad * grad)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params


# ---------------------------------------------------------------------------
# training loop


def steps_per_epoch(n_queries, batch_size):
    return max(1, math.ceil(n_queries / batch_size))


def train(
    cloud,
    sampler_cfg,
    train_cfg,
    arch=None,
    index=None,
    queries=None,
    lr_schedule=None,
    checkpoint_dir=None,
    log_every=None,
):
    """Fit the signed-distance network to a normalized cloud.

    Returns (net, LossCurve). `queries` may be passed pre-sampled (the
    whole-space ablation does this); otherwise the frozen query set is
    drawn here. `lr_schedule(step) -> multiplier` is an optional hook,
    constant rate by default. Deterministic given the config seeds.
    """
    from .spatial import KdIndex

    if arch is None:
        arch = net_mod.ArchitectureConfig(input_dim=cloud.dim)
    if arch.input_dim != cloud.dim:
        raise ConfigurationError(f"arch input_dim {arch.input_dim} != cloud dim {cloud.dim}")
    if index is None:
        index = KdIndex(cloud)
    if queries is None:
        queries = sample_queries(cloud, index, sampler_cfg)
    # the trainer owns the batch size during training
    batch_cfg = replace(sampler_cfg, batch_size=train_cfg.batch_size)

    if train_cfg.init_mode == GEOMETRIC:
        net = net_mod.init_geometric(arch, INIT_SPHERE_RADIUS, seed=train_cfg.seed)
    else:
        net = net_mod.init_random(arch, seed=train_cfg.seed)

    params = net.parameters()
    state = AdamState.for_params(params)
    curve = LossCurve()
    per_epoch = steps_per_epoch(len(queries), train_cfg.batch_size)
    step = 0
    degenerate_total = 0
    for epoch in range(1, train_cfg.epochs + 1):
        for _ in range(per_epoch):
            step += 1
            gen = rng.stream(train_cfg.seed, rng.BATCH_PICK, step)
            batch = make_batch(queries, cloud, batch_cfg, gen)
            try:
                loss, grads, degenerate = batch_loss(net, batch, train_cfg.grad_floor)
            except DegenerateGradientError as err:
                raise TrainingDivergenceError(
                    f"step {step}: {err}", step=step
                ) from err
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"step {step}: loss became {loss}; aborting", step=step
                )
            degenerate_total += degenerate
            if lr_schedule is not None:
                eff = replace(train_cfg, learning_rate=train_cfg.learning_rate * lr_schedule(step))
            else:
                eff = train_cfg
            adam_step(params, grads, state, eff)
            curve.append(step, epoch, loss)
            if log_every and step % log_every == 0:
                print(f"step {step} epoch {epoch} loss {loss:.3e}")
        if (
            checkpoint_dir is not None
            and train_cfg.checkpoint_every
            and epoch % train_cfg.checkpoint_every == 0
        ):
            net.save(f"{checkpoint_dir}/epoch_{epoch:05d}.npul")
    net.set_parameters(params)
    return net, curve
