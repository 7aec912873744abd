"""Brute-force ground truth by explicit path enumeration.

Everything here is exponential in depth and only meant for tiny networks
used as test oracles; :func:`path_count_fast` is the one exception.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netgraph import HIDDEN, NetworkGraph
from .nncore import forward

PATH_CAP = 10**6
KERNEL_CAP = 2000
RANK_RTOL = 1e-10


class PathCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Path:
    neurons: tuple  # v_0 -> ... -> v_d, v_d an output neuron
    starts_at_bias: bool
    params: tuple  # bias of v_0 (if bias-rooted) then each traversed edge


def enumerate_paths(net: NetworkGraph, cap: int = PATH_CAP) -> list[Path]:
    """All input- and bias-rooted paths ending at an output, in lexicographic order."""
    count = path_count_fast(net)
    if count > cap:
        raise PathCapExceeded(f"{count:.3g} paths exceed the cap of {cap}")
    succ = [[] for _ in range(net.n_neurons)]
    for e in np.lexsort((net.dst, net.src)):
        succ[net.src[e]].append((int(net.dst[e]), int(net.edge_param[e])))
    is_out = net.roles == 2

    paths = []

    def walk(v, neurons, params, rooted):
        if is_out[v]:
            paths.append(Path(tuple(neurons), rooted, tuple(params)))
        for t, pi in succ[v]:
            neurons.append(t)
            params.append(pi)
            walk(t, neurons, params, rooted)
            neurons.pop()
            params.pop()

    roots = [(int(v), False) for v in net.inputs]
    roots += [(int(v), True) for v in np.flatnonzero(net.bias_param >= 0)]
    for v, rooted in sorted(roots):
        walk(v, [v], [int(net.bias_param[v])] if rooted else [], rooted)
    return paths


def _path_matrix(net, paths):
    """0/1 incidence (q x p) of parameters on paths."""
    M = np.zeros((len(paths), net.p))
    for r, path in enumerate(paths):
        M[r, list(path.params)] = 1.0
    return M


def phi(net: NetworkGraph, theta, paths=None) -> np.ndarray:
    """Path-lifting: product of parameters along each path."""
    theta = np.asarray(theta, dtype=float)
    paths = enumerate_paths(net) if paths is None else paths
    return np.array([np.prod(theta[list(pa.params)]) for pa in paths])


def phi_jacobian(net: NetworkGraph, theta, paths=None) -> np.ndarray:
    """Exact q x p Jacobian; entry (path, i) is the product of the other parameters."""
    theta = np.asarray(theta, dtype=float)
    paths = enumerate_paths(net) if paths is None else paths
    J = np.zeros((len(paths), net.p))
    for r, pa in enumerate(paths):
        vals = theta[list(pa.params)]
        for j, i in enumerate(pa.params):
            J[r, i] = np.prod(np.delete(vals, j))
    return J


def gram(net: NetworkGraph, theta, paths=None) -> np.ndarray:
    J = phi_jacobian(net, theta, paths)
    return J.T @ J


def path_kernel(net: NetworkGraph, theta, paths=None, cap: int = KERNEL_CAP) -> np.ndarray:
    J = phi_jacobian(net, theta, paths)
    if J.shape[0] > cap:
        raise PathCapExceeded(f"path kernel of size {J.shape[0]} exceeds {cap}")
    return J @ J.T


def positive_spectrum(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Eigenvalues of a symmetric PSD matrix above ``rtol * lambda_max``, sorted."""
    ev = np.linalg.eigvalsh(M)
    top = ev.max(initial=0.0)
    if top <= 0:
        return np.array([])
    return ev[ev > rtol * top]


def divergence_logdet_plus(G, alpha: float = 1.0) -> float:
    """logdet+ Bregman divergence of ``alpha * G`` to the identity.

    ``tr(aG) - sum log(a lambda_i) - rank`` over the nonzero eigenvalues.
    """
    G = np.asarray(G, dtype=float)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("G must be square")
    if not np.allclose(G, G.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(G).max(initial=0))):
        raise ValueError("G must be symmetric")
    lam = positive_spectrum(G)
    return float(alpha * np.trace(G) - np.sum(np.log(alpha * lam)) - len(lam))


def best_alpha(G) -> float:
    """Minimizer of the divergence in the scale: rank / trace."""
    return len(positive_spectrum(G)) / float(np.trace(G))


def min_divergence(G) -> float:
    return divergence_logdet_plus(G, best_alpha(G))


def group_membership_check(net: NetworkGraph, d, tol: float = 1e-10) -> bool:
    """True iff the positive scaling ``d`` fixes every path product, i.e. lies in the rescaling group."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("scales must be positive")
    return bool(np.all(np.abs(phi(net, d) - 1.0) <= tol))


def path_count_fast(net: NetworkGraph) -> float:
    """Number of paths, as ``||Phi(1)||_1`` from one linear forward pass with unit biases."""
    acc = np.zeros(net.n_neurons)
    acc[net.inputs] = 1.0
    acc[net.bias_param >= 0] += 1.0
    for plan in net.plans:
        acc[plan.neurons] += plan.to_dst @ acc[plan.src]
    return float(acc[net.outputs].sum())


def output_factorization_check(net: NetworkGraph, theta, x, paths=None) -> float:
    """Max |forward(x) - sum over active paths of Phi_p * source value|.

    A path is active when every hidden neuron on it (including a bias root)
    has strictly positive pre-activation.
    """
    theta = np.asarray(theta, dtype=float)
    paths = enumerate_paths(net) if paths is None else paths
    out, act = forward(net, theta, x)
    out = np.atleast_1d(out)
    pre = act.pre[:, 0]
    active = pre > 0
    values = phi(net, theta, paths)
    recon = {int(v): 0.0 for v in net.outputs}
    x = np.asarray(x, dtype=float)
    in_pos = {int(v): i for i, v in enumerate(net.inputs)}
    for pa, val in zip(paths, values):
        hid = [v for v in pa.neurons if net.roles[v] == HIDDEN]
        if not all(active[v] for v in hid):
            continue
        source = 1.0 if pa.starts_at_bias else x[in_pos[pa.neurons[0]]]
        recon[pa.neurons[-1]] += val * source
    rec = np.array([recon[int(v)] for v in net.outputs])
    return float(np.max(np.abs(rec - out)))
