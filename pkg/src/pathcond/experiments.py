"""Desk-scale experiment runners: toy gradient flow and training comparisons."""
from __future__ import annotations

import csv
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .netgraph import build_lfcn, toy_net, toy_params, toy_triple
from .nncore import Hooks, InitConfig, TrainConfig, init, loss_and_grad, sgd_run
from .pathoracle import phi
from .rescale import PathCondConfig, enorm, pathcond

CSV_SCHEMA = "pathcond-csv-v1"
TOY_INITS = ((5.0, 0.2, 0.1), (0.3, 2.0, -1.0), (1.5, 0.5, 0.5))


def _fmt(x) -> str:
    return f"{x:.17g}"


def manifest(kind: str, config: dict) -> dict:
    return {
        "experiment": kind,
        "config": config,
        "csv_schema": CSV_SCHEMA,
        "versions": {
            "pathcond": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "argv": sys.argv,
    }


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def threads() -> int:
    return max(1, int(os.environ.get("PATHCOND_THREADS", "1")))


# -- toy model ------------------------------------------------------------

def toy_data(n: int = 256, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return x, np.maximum(x, 0.0)


def lifted_loss_grad(z, x, y):
    """Loss ``mean 0.5 (ReLU(z0 x + z1) - y)^2`` of the lifted toy model and its gradient."""
    pre = z[0] * x + z[1]
    r = np.maximum(pre, 0.0) - y
    act = (pre > 0).astype(float)
    n = len(x)
    loss = 0.5 * np.dot(r, r) / n
    return loss, np.array([np.dot(r * act, x), np.dot(r, act)]) / n


def toy_flow(lr: float = 1e-3, steps: int = 10_000, inits=TOY_INITS, seed: int = 0,
             n: int = 256, record_every: int = 1):
    """GD from each init, GD from its rescaled version, and Euler on the lifted loss.

    Returns ``(rows, summary)``; rows are per recorded step
    ``(init_id, kind, step, u, v, w, phi_x, phi_b, loss)``.
    """
    net = toy_net()
    x, y = toy_data(n, seed)
    X, Y = x[:, None], y[:, None]
    rows, summary = [], []
    for i, (u, v, w) in enumerate(inits):
        if u == 0 or (v == 0 and w == 0):
            raise ValueError(f"toy init {(u, v, w)} has a degenerate path diagonal")
        theta0 = toy_params(u, v, w)
        theta_r, sol = pathcond(net, theta0)
        runs = {"gd": theta0, "gd_rescaled": theta_r}
        paths = {}
        losses = {}
        drift = {}
        for kind, th in runs.items():
            th = th.copy()
            phis = np.empty((steps + 1, 2))
            ls = np.empty(steps + 1)
            b0 = th[0] ** 2 + th[1] ** 2 - th[2] ** 2
            worst = 0.0
            for t in range(steps + 1):
                loss, grad = loss_and_grad(net, th, X, Y)
                phis[t] = (th[2] * th[0], th[2] * th[1])
                ls[t] = loss
                worst = max(worst, abs(th[0] ** 2 + th[1] ** 2 - th[2] ** 2 - b0))
                if t % record_every == 0:
                    rows.append((i, kind, t, *toy_triple(th), *phis[t], loss))
                if t < steps:
                    th = th - lr * grad
            paths[kind], losses[kind], drift[kind] = phis, ls, worst
        z = phi(net, theta0)
        zs = np.empty((steps + 1, 2))
        for t in range(steps + 1):
            loss, grad = lifted_loss_grad(z, x, y)
            zs[t] = z
            if t % record_every == 0:
                rows.append((i, "lifted", t, np.nan, np.nan, np.nan, z[0], z[1], loss))
            z = z - lr * grad
        dist = {k: float(np.mean(np.linalg.norm(paths[k] - zs, axis=1))) for k in paths}
        mid = min(5000, steps)
        summary.append({
            "init_id": i,
            "theta0": [u, v, w],
            "theta_rescaled": list(toy_triple(theta_r)),
            "u_rescale": sol.u.tolist(),
            "loss_at_5000": {k: float(losses[k][mid]) for k in losses},
            "final_loss": {k: float(losses[k][-1]) for k in losses},
            "mean_phi_distance_to_lifted": dist,
            "balancedness_drift": drift,
        })
    return rows, summary


def write_toy_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["init_id", "kind", "step", "u", "v", "w", "phi_x", "phi_b", "loss"])
        for r in rows:
            wr.writerow([r[0], r[1], r[2], *(_fmt(v) for v in r[3:])])


# -- training comparisons --------------------------------------------------

METHODS = ("baseline", "pathcond", "enorm")


def epochs_to_target(losses, frac: float = 0.1):
    """First epoch whose loss is at most ``frac`` times the initial loss (None if never)."""
    hit = np.flatnonzero(np.asarray(losses) <= frac * losses[0])
    return int(hit[0]) if hit.size else None


def run_method(method: str, net, theta0, X, Y, cfg: TrainConfig, pathcond_every: int = 0):
    hooks = Hooks()
    theta = theta0
    info = {}
    if method == "pathcond":
        theta, sol = pathcond(net, theta0)
        info = {"sweeps": sol.sweeps, "log_rescale_inf": sol.log_rescale_inf}
        if pathcond_every:
            hooks.on_epoch = lambda ep, th: pathcond(net, th)[0] if ep % pathcond_every == 0 else th
    elif method == "enorm":
        hooks.on_step = lambda step, th: enorm(net, th, 1)
    elif method != "baseline":
        raise ValueError(f"unknown method {method!r}")
    return sgd_run(net, theta, X, Y, cfg, hooks), info


def train_compare(widths, X, Y, methods=METHODS, cfg: TrainConfig = TrainConfig(),
                  init_cfg: InitConfig = InitConfig(), with_bias: bool = True,
                  target_frac: float = 0.1, pathcond_every: int = 0):
    """Train every method from the same initial parameters and batch order.

    Returns ``(rows, summary)`` with rows ``(method, epoch, step, loss, acc)``.
    """
    net = build_lfcn(widths, with_bias)
    theta0 = init(net, init_cfg)
    with ThreadPoolExecutor(max_workers=threads()) as pool:
        futures = {m: pool.submit(run_method, m, net, theta0, X, Y, cfg, pathcond_every)
                   for m in methods}
        results = {m: f.result() for m, f in futures.items()}
    rows, summary = [], {"methods": {}, "initial_loss": None}
    for m in methods:
        traj, info = results[m]
        rows += [(m, *r) for r in traj.records]
        losses = traj.losses
        summary["initial_loss"] = float(losses[0])
        summary["methods"][m] = {
            "final_loss": float(losses[-1]),
            "final_acc": float(traj.records[-1][3]),
            "epochs_to_target": epochs_to_target(losses, target_frac),
            **info,
        }
    summary["target_frac"] = target_frac
    return rows, summary


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "epoch", "step", "train_loss", "train_acc"])
        for m, ep, st, lo, ac in rows:
            wr.writerow([m, ep, st, _fmt(lo), _fmt(ac)])


def config_dict(**kw) -> dict:
    out = {}
    for k, v in kw.items():
        if hasattr(v, "__dataclass_fields__"):
            v = asdict(v)
        out[k] = v
    return out


def compression_study(factors=(1, 2, 4), base: int = 32, a: float = 1.0, seeds=(0, 1, 2),
                      cfg: PathCondConfig = PathCondConfig(tol=1e-6, max_sweeps=20000)) -> dict:
    """Median ``||log d||_inf`` at init for autoencoder widths ``[b, b/c, b/c^2, b/c, b]``."""
    out = {}
    for c in factors:
        widths = [base, base // c, max(1, base // c ** 2), base // c, base]
        vals = []
        for s in seeds:
            net = build_lfcn(widths, True)
            theta = init(net, InitConfig("gaussian_scaled", a=a, seed=s))
            vals.append(pathcond(net, theta, cfg)[1].log_rescale_inf)
        out[c] = {"widths": widths, "median_log_rescale_inf": float(np.median(vals))}
    return out
