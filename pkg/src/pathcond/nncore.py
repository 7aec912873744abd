"""Forward/backward passes, initialization and plain SGD for DAG ReLU nets.

All passes are vectorized per topological level; a batch of inputs is laid
out column-wise, so activations have shape ``(n_neurons, batch)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .netgraph import HIDDEN, NetworkGraph, build_lfcn


@dataclass(frozen=True)
class InitConfig:
    scheme: str = "kaiming_uniform"  # or "gaussian_scaled"
    a: float = 2.0
    seed: int = 0
    random_bias: bool = False  # draw biases with the incoming-weight law instead of zeros

    def __post_init__(self):
        if self.scheme not in ("kaiming_uniform", "gaussian_scaled"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if not self.a > 0:
            raise ValueError("init variance factor a must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 10
    loss: str = "mse"  # or "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.loss not in ("mse", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class Activations:
    pre: np.ndarray
    post: np.ndarray


def check_params(net: NetworkGraph, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.p,):
        raise ValueError(f"expected a parameter vector of length {net.p}, got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector has non-finite entries")
    return theta


def forward(net: NetworkGraph, theta, x):
    """Evaluate the network.

    ``x`` is either one input vector or a ``(batch, n_in)`` array. Returns the
    outputs (same leading shape) and the per-neuron pre/post activations.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != len(net.inputs):
        raise ValueError(f"input has dimension {X.shape[1]}, network expects {len(net.inputs)}")
    V, N = net.n_neurons, X.shape[0]
    pre = np.zeros((V, N))
    post = np.zeros((V, N))
    pre[net.inputs] = X.T
    post[net.inputs] = X.T
    is_hidden = net.roles == HIDDEN
    bias = np.where(net.bias_param >= 0, theta[np.maximum(net.bias_param, 0)], 0.0)
    for plan in net.plans:
        contrib = theta[plan.params][:, None] * post[plan.src]
        z = plan.to_dst @ contrib + bias[plan.neurons][:, None]
        pre[plan.neurons] = z
        post[plan.neurons] = np.where(is_hidden[plan.neurons][:, None], np.maximum(z, 0.0), z)
    out = post[net.outputs].T
    return (out[0] if single else out), Activations(pre, post)


def _loss_head(out, Y, kind):
    """Mean loss over the batch and its gradient w.r.t. the outputs."""
    N = out.shape[0]
    if kind == "mse":
        r = out - Y
        return 0.5 * np.sum(r * r) / N, r / N
    if out.shape[1] < 2:
        raise ValueError("cross_entropy needs at least 2 outputs")
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -np.sum(Y * logp) / N, (np.exp(logp) * Y.sum(axis=1, keepdims=True) - Y) / N


def loss_and_grad(net: NetworkGraph, theta, X, Y, loss: str = "mse"):
    """Mean loss over a batch and its exact gradient (ReLU'(0) = 0).

    The squared loss is ``0.5 * ||f(x) - y||^2`` per sample; cross-entropy
    takes ``Y`` as one-hot (or probability) rows.
    """
    theta = np.asarray(theta, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if Y.shape[1] != len(net.outputs):
        raise ValueError(f"targets have dimension {Y.shape[1]}, network has {len(net.outputs)} outputs")
    out, act = forward(net, theta, X)
    L, d_out = _loss_head(out, Y, loss)
    grad = np.zeros(net.p)
    d_post = np.zeros_like(act.post)
    d_post[net.outputs] = d_out.T
    is_hidden = net.roles == HIDDEN
    for plan in reversed(net.plans):
        nz = plan.neurons
        d_pre = d_post[nz] * np.where(is_hidden[nz][:, None], act.pre[nz] > 0, 1.0)
        b = net.bias_param[nz]
        grad[b[b >= 0]] = d_pre[b >= 0].sum(axis=1)
        d_edge = plan.to_dst.T @ d_pre  # (edges, N): upstream gradient at each edge
        grad[plan.params] = np.einsum("en,en->e", d_edge, act.post[plan.src])
        d_post += plan.to_src @ (theta[plan.params][:, None] * d_edge)
    return float(L), grad


def accuracy(out, Y) -> float:
    if out.shape[1] < 2:
        return float("nan")
    return float(np.mean(out.argmax(axis=1) == np.asarray(Y).argmax(axis=1)))


def init(net: NetworkGraph, cfg: InitConfig) -> np.ndarray:
    """Random parameters; deterministic in ``cfg.seed``.

    ``kaiming_uniform`` draws U(-b, b) with ``b = sqrt(6 / fan_in)``;
    ``gaussian_scaled`` draws N(0, a / fan_in). Biases are zero unless
    ``cfg.random_bias``, in which case they follow the law of the neuron's
    incoming weights.
    """
    rng = np.random.default_rng(cfg.seed)
    fan_in = net.fan_in().astype(float)
    theta = np.zeros(net.p)
    f_edge = fan_in[net.dst]
    if cfg.scheme == "kaiming_uniform":
        bound = np.sqrt(6.0 / f_edge)
        theta[net.edge_param] = rng.uniform(-1.0, 1.0, size=len(f_edge)) * bound
    else:
        theta[net.edge_param] = rng.standard_normal(len(f_edge)) * np.sqrt(cfg.a / f_edge)
    if cfg.random_bias:
        biased = np.flatnonzero(net.bias_param >= 0)
        f_b = fan_in[biased]
        if cfg.scheme == "kaiming_uniform":
            vals = rng.uniform(-1.0, 1.0, size=len(biased)) * np.sqrt(6.0 / f_b)
        else:
            vals = rng.standard_normal(len(biased)) * np.sqrt(cfg.a / f_b)
        theta[net.bias_param[biased]] = vals
    return theta


@dataclass
class Hooks:
    """Teleportation callbacks; each receives (counter, theta) and returns theta."""

    on_step: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    on_epoch: Optional[Callable[[int, np.ndarray], np.ndarray]] = None


@dataclass
class Trajectory:
    records: list = field(default_factory=list)  # (epoch, step, train_loss, train_acc)
    snapshots: dict = field(default_factory=dict)  # epoch -> theta
    theta: np.ndarray | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "train_loss", "train_acc"])
            for ep, st, lo, ac in self.records:
                w.writerow([ep, st, f"{lo:.17g}", f"{ac:.17g}"])


def evaluate(net, theta, X, Y, loss):
    out, _ = forward(net, theta, X)
    L, _ = _loss_head(out, np.asarray(Y, dtype=float).reshape(out.shape), loss)
    return float(L), accuracy(out, Y)


def sgd_run(net: NetworkGraph, theta0, X, Y, cfg: TrainConfig, hooks: Hooks | None = None,
            snapshots: str = "none") -> Trajectory:
    """Minibatch SGD; the shuffle order depends only on ``cfg.seed``.

    ``snapshots`` is "none", "final" or "epoch". Full-dataset loss and
    accuracy are logged at epoch 0 (before training) and after each epoch.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    hooks = hooks or Hooks()
    rng = np.random.default_rng(cfg.seed)
    theta = check_params(net, theta0).copy()
    traj = Trajectory()
    step = 0
    traj.records.append((0, 0, *evaluate(net, theta, X, Y, cfg.loss)))
    if snapshots == "epoch":
        traj.snapshots[0] = theta.copy()
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grad = loss_and_grad(net, theta, X[idx], Y[idx], cfg.loss)
            theta = theta - cfg.learning_rate * grad
            step += 1
            if hooks.on_step is not None:
                theta = hooks.on_step(step, theta)
        if hooks.on_epoch is not None:
            theta = hooks.on_epoch(epoch, theta)
        traj.records.append((epoch, step, *evaluate(net, theta, X, Y, cfg.loss)))
        if snapshots == "epoch":
            traj.snapshots[epoch] = theta.copy()
    if snapshots == "final":
        traj.snapshots[cfg.epochs] = theta.copy()
    traj.theta = theta
    return traj


# -- synthetic datasets ------------------------------------------------------

def teacher_student(widths, n: int, seed: int = 0, noise: float = 0.0):
    """Gaussian inputs labelled by a frozen random teacher LFCN (Kaiming init, random biases)."""
    teacher = build_lfcn(widths, with_bias=True)
    theta = init(teacher, InitConfig("kaiming_uniform", seed=seed + 7919, random_bias=True))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, widths[0]))
    Y, _ = forward(teacher, theta, X)
    if noise:
        Y = Y + noise * rng.standard_normal(Y.shape)
    return X, Y


def gaussian_blobs(n: int, dim: int, classes: int, seed: int = 0, spread: float = 1.0):
    """Isotropic Gaussian clusters around random centres; one-hot labels."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, dim)) * 2.0
    labels = rng.integers(0, classes, size=n)
    X = centres[labels] + spread * rng.standard_normal((n, dim))
    return X, np.eye(classes)[labels]


def write_dataset(path, X, Y) -> None:
    X, Y = np.atleast_2d(X), np.asarray(Y).reshape(len(X), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i}" for i in range(X.shape[1])] + [f"y_{j}" for j in range(Y.shape[1])])
        for xr, yr in zip(X, Y):
            w.writerow([f"{v:.17g}" for v in xr] + [f"{v:.17g}" for v in yr])


def read_dataset(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    xi = [i for i, h in enumerate(header) if h.startswith("x_")]
    yi = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not xi or not yi:
        raise ValueError("dataset CSV needs x_* and y_* columns")
    return body[:, xi], body[:, yi]
