"""Diagonal of the path Gram matrix in O(p).

With ``omega = theta**2``, ``g_i`` is the derivative of ``sum_p Phi_p(omega)``
with respect to ``omega_i``. On the linearized network this derivative
factorizes: for an edge ``s -> t`` it is ``fwd(s) * bwd(t)`` and for the bias
of ``v`` it is ``bwd(v)``, where ``fwd`` sums path products from the sources
into a neuron and ``bwd`` sums path products from a neuron to the outputs.
No division by a parameter ever happens, so zero weights are fine.
"""
from __future__ import annotations

import numpy as np

from .netgraph import NetworkGraph


def _accumulators(net: NetworkGraph, omega: np.ndarray):
    """Forward and backward path-sum accumulators; ``omega`` is (p,) or (p, S)."""
    batch = omega.shape[1:]
    V = net.n_neurons
    has_b = net.bias_param >= 0
    fwd = np.zeros((V,) + batch)
    fwd[net.inputs] = 1.0
    fwd[has_b] = omega[net.bias_param[has_b]]
    plans = net.plans
    for plan in plans:
        fwd[plan.neurons] += plan.to_dst @ (omega[plan.params] * fwd[plan.src])
    bwd = np.zeros((V,) + batch)
    bwd[net.outputs] = 1.0
    for plan in reversed(plans):
        bwd += plan.to_src @ (omega[plan.params] * bwd[plan.dst])
    return fwd, bwd


def diag_g_fast(net: NetworkGraph, theta) -> np.ndarray:
    """``diag(dPhi^T dPhi)`` via one forward and one backward linear pass.

    ``theta`` may be a single vector (p,) or a batch (p, S); the result has
    the same shape.
    """
    theta = np.asarray(theta, dtype=float)
    omega = theta * theta
    fwd, bwd = _accumulators(net, omega)
    g = np.empty_like(omega)
    g[net.edge_param] = fwd[net.src] * bwd[net.dst]
    has_b = net.bias_param >= 0
    g[net.bias_param[has_b]] = bwd[has_b]
    return g


def squared_path_norm(net: NetworkGraph, theta) -> float:
    """``||Phi(theta)||_2^2`` from the same linear forward pass."""
    omega = np.asarray(theta, dtype=float) ** 2
    fwd, _ = _accumulators(net, omega)
    return float(fwd[net.outputs].sum())


def diag_invariance_transform(g, d) -> np.ndarray:
    """Diagonal after rescaling the parameters by ``d``: ``g / d**2``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("scales must be positive")
    return np.asarray(g, dtype=float) / (d * d)


def summary(net: NetworkGraph, g) -> dict:
    """Min/max/spread of g plus per-layer means (LFCNs only for the latter)."""
    g = np.asarray(g, dtype=float)
    pos = g[g > 0]
    out = {
        "p": int(g.size),
        "min": float(g.min()),
        "max": float(g.max()),
        "spread": float(pos.max() / pos.min()) if pos.size else float("nan"),
        "zeros": int(np.sum(g == 0)),
    }
    if net.widths is not None:
        out["layers"] = [
            {"layer": k, "role": role, "mean": float(g[idx].mean())}
            for k, role, idx in net.param_classes()
        ]
    return out
