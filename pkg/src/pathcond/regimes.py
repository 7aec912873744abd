"""Expected path-Gram diagonal at random initialization, and regime experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .netgraph import build_lfcn
from .nncore import InitConfig, init
from .pathdiag import diag_g_fast
from .rescale import PathCondConfig, pathcond


@dataclass(frozen=True)
class RegimeSpec:
    """Layer widths and per-layer weight variances ``sigma2[k]`` (edges of layer k).

    ``bias_mode`` is "drawn" (biases share their layer's variance) or "zero".
    Without ``with_bias`` the network has no bias parameters at all.
    """

    widths: tuple
    sigma2: tuple
    with_bias: bool = True
    bias_mode: str = "drawn"

    @classmethod
    def standard(cls, widths, a: float, with_bias: bool = True, bias_mode: str = "drawn"):
        """Variances ``a / n_k`` (so that ``n_k sigma_k^2 = a`` on every layer)."""
        widths = tuple(int(w) for w in widths)
        return cls(widths, tuple(a / widths[k] for k in range(len(widths) - 1)),
                   with_bias, bias_mode)

    def __post_init__(self):
        if min(self.widths) < 1 or len(self.sigma2) != len(self.widths) - 1:
            raise ValueError("need widths >= 1 and one variance per layer")
        if min(self.sigma2) <= 0:
            raise ValueError("variances must be positive")
        if self.bias_mode not in ("drawn", "zero"):
            raise ValueError(f"unknown bias mode {self.bias_mode!r}")

    @property
    def L(self) -> int:
        return len(self.widths) - 1

    def network(self):
        return build_lfcn(self.widths, self.with_bias)

    def std_vector(self, net=None) -> np.ndarray:
        """Per-parameter standard deviations in the layout order."""
        net = net or self.network()
        s = np.zeros(net.p)
        for k, (w, b) in enumerate(net.layer_slices()):
            s[w] = np.sqrt(self.sigma2[k])
            if b is not None and self.bias_mode == "drawn":
                s[b] = np.sqrt(self.sigma2[k])
        return s


def expected_diag(spec: RegimeSpec) -> dict:
    """Closed-form ``E[g_i]`` per (layer, "edge" | "bias") class.

    Paths through an edge of layer k either start at an input (all layers
    but k and k+1 free, every layer's variance except k's) or at a bias of an
    earlier layer i < k. Biases of layer k only see the layers above them.
    """
    n, s2, L = spec.widths, spec.sigma2, spec.L
    prod = lambda xs: float(np.prod(xs)) if len(xs) else 1.0  # noqa: E731
    out = {}
    biases_live = spec.with_bias and spec.bias_mode == "drawn"
    for k in range(L):
        val = prod([n[i] for i in range(L + 1) if i not in (k, k + 1)]) \
            * prod([s2[i] for i in range(L) if i != k])
        if biases_live:
            for i in range(k):
                val += prod([n[j] for j in range(i + 1, L + 1) if j not in (k, k + 1)]) \
                    * prod([s2[j] for j in range(i, L) if j != k])
        out[(k, "edge")] = val
        if spec.with_bias and k < L - 1:
            # one fixed bias neuron in layer k+1, free neurons above it
            out[(k, "bias")] = prod([n[i] for i in range(k + 2, L + 1)]) \
                * prod([s2[i] for i in range(k + 1, L)])
    return out


def expected_diag_standard(widths, a: float, k: int, role: str = "edge") -> float:
    """The same expectation under ``a_k = a``, written with width ratios (biases drawn)."""
    n, L = widths, len(widths) - 1
    if role == "bias":
        return n[L] / n[k + 1] * a ** (L - 1 - k)
    return n[L] / n[k + 1] * (a ** (L - 1) + sum(a ** (L - 1 - i) / n[i] for i in range(k)))


def expected_diag_vector(spec: RegimeSpec, net=None) -> np.ndarray:
    net = net or spec.network()
    ev = expected_diag(spec)
    g = np.zeros(net.p)
    for k, role, idx in net.param_classes():
        g[idx] = ev[(k, role)]
    return g


def monte_carlo_diag(spec: RegimeSpec, samples: int, seed: int = 0, chunk: int = 10_000) -> dict:
    """Empirical mean and standard error of the class-averaged diagonal.

    Each sample draws zero-mean Gaussian parameters with the spec's variances
    and averages ``g`` over every parameter of a class; the standard error is
    across samples.
    """
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    net = spec.network()
    std = spec.std_vector(net)
    classes = net.param_classes()
    rng = np.random.default_rng(seed)
    s1 = np.zeros(len(classes))
    s2 = np.zeros(len(classes))
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        theta = rng.standard_normal((net.p, m)) * std[:, None]
        g = diag_g_fast(net, theta)
        for c, (_, _, idx) in enumerate(classes):
            cm = g[idx].mean(axis=0)
            s1[c] += cm.sum()
            s2[c] += (cm * cm).sum()
        done += m
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean * mean, 0.0) * samples / (samples - 1)
    se = np.sqrt(var / samples)
    return {(k, role): (float(mean[c]), float(se[c])) for c, (k, role, _) in enumerate(classes)}


def dirichlet_widths(depth: int, mean_width: int, concentration: float, seed: int = 0) -> list:
    """Hidden widths summing to ``depth * mean_width``, proportions from a symmetric Dirichlet.

    Each layer gets one neuron up front; the rest is apportioned by the
    largest-remainder method so the total is exact.
    """
    if depth < 2 or mean_width < 1:
        raise ValueError("need depth >= 2 and mean_width >= 1")
    rng = np.random.default_rng(seed)
    total = depth * mean_width
    props = rng.dirichlet(np.full(depth, float(concentration)))
    if not np.all(np.isfinite(props)):
        # tiny concentrations can underflow to NaN; fall back to a one-hot draw
        props = np.eye(depth)[rng.integers(depth)]
    quota = props * (total - depth)
    alloc = np.floor(quota).astype(int)
    rest = (total - depth) - alloc.sum()
    alloc[np.argsort(-(quota - alloc), kind="stable")[:rest]] += 1
    return [int(w) for w in alloc + 1]


REGIME_CFG = PathCondConfig(tol=1e-6, max_sweeps=20000)


def regime_row(widths, a: float, seed: int = 0, cfg: PathCondConfig = REGIME_CFG,
               with_bias: bool = False) -> dict:
    """One architecture at one init scale: width ratio, PathCond's log-rescaling, expected spread.

    The expected spread is ``log(max/min)`` of the closed-form class means
    with biases held at zero, as they are after ``init``.
    """
    net = build_lfcn(widths, with_bias=with_bias)
    theta = init(net, InitConfig("gaussian_scaled", a=a, seed=seed))
    _, sol = pathcond(net, theta, cfg)
    hidden = widths[1:-1]
    ev = expected_diag(RegimeSpec.standard(widths, a, with_bias=with_bias, bias_mode="zero"))
    vals = np.array(list(ev.values()))
    return {
        "widths": list(widths),
        "width_ratio": max(hidden) / min(hidden),
        "a": a,
        "log_rescale_inf": sol.log_rescale_inf,
        "expected_spread": float(np.log(vals.max() / vals.min())),
        "sweeps": sol.sweeps,
        "converged": sol.converged,
    }


def sample_architectures(count: int, depth: int = 8, mean_width: int = 32, n_in: int = 32,
                         n_out: int = 32, seed: int = 0, conc_range=(0.1, 100.0)) -> list:
    """Widths ``[n_in, *hidden, n_out]`` with log-uniform Dirichlet concentrations."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(conc_range[0]), np.log(conc_range[1])
    archs = []
    for j in range(count):
        conc = float(np.exp(rng.uniform(lo, hi)))
        hidden = dirichlet_widths(depth, mean_width, conc, seed=seed * 1000 + j)
        archs.append([n_in] + hidden + [n_out])
    return archs


A_VALUES = (0.01, 1.0, 100.0)


def regime_report(architectures, a_values=A_VALUES, seed: int = 0, with_bias: bool = False,
                  cfg: PathCondConfig = REGIME_CFG) -> list:
    rows = []
    for j, widths in enumerate(architectures):
        for a in a_values:
            row = regime_row(widths, a, seed=seed + j, cfg=cfg, with_bias=with_bias)
            row["arch_id"] = j
            rows.append(row)
    return rows


def rank_correlation(rows, a: float) -> float:
    sel = [r for r in rows if r["a"] == a]
    rho, _ = spearmanr([r["width_ratio"] for r in sel], [r["log_rescale_inf"] for r in sel])
    return float(rho)
