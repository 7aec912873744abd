"""DAG ReLU network structure and the canonical parameter layout.

Layout ``layout-v1``: neurons are grouped by topological level (longest
distance from a source neuron). For each level ``1, 2, ...`` in turn, the
incoming edges of that level's neurons come first, sorted by (destination,
source), followed by the biases of that level's neurons sorted by id. On a
layered fully-connected network this is, per layer ``k``, the weight matrix
``W_k`` of shape ``(n_{k+1}, n_k)`` flattened row-major, then ``b_k``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

LAYOUT_VERSION = "layout-v1"

INPUT, HIDDEN, OUTPUT = 0, 1, 2
ROLE_NAMES = {INPUT: "input", HIDDEN: "hidden", OUTPUT: "output"}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LevelPlan:
    """Edges grouped by the level of their destination neuron."""

    neurons: np.ndarray  # neuron ids at this level
    edges: np.ndarray  # edge ids whose destination is at this level
    src: np.ndarray
    dst: np.ndarray
    params: np.ndarray  # parameter index of each edge
    to_dst: sp.csr_matrix  # (len(neurons), len(edges)) scatter onto destinations
    to_src: sp.csr_matrix  # (n_neurons, len(edges)) scatter onto sources


@dataclass(frozen=True)
class NeuronIncidence:
    """Per-hidden-neuron parameter sets, i.e. the sparse columns of B.

    Stored CSR-style: the in-set of the h-th hidden neuron is
    ``in_idx[in_ptr[h]:in_ptr[h + 1]]`` and likewise for the out-set.
    """

    hidden: np.ndarray
    in_ptr: np.ndarray
    in_idx: np.ndarray
    out_ptr: np.ndarray
    out_idx: np.ndarray
    p: int

    @property
    def H(self) -> int:
        return len(self.hidden)

    def in_set(self, h: int) -> np.ndarray:
        return self.in_idx[self.in_ptr[h]:self.in_ptr[h + 1]]

    def out_set(self, h: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[h]:self.out_ptr[h + 1]]

    def B_matmul(self, u: np.ndarray) -> np.ndarray:
        """Compute ``B @ u`` without forming B."""
        return self.matrix() @ np.asarray(u, dtype=float)

    def BT_matmul(self, y: np.ndarray) -> np.ndarray:
        return self.matrix().T @ np.asarray(y, dtype=float)

    def matrix(self) -> sp.csc_matrix:
        """The explicit ``p x H`` incidence matrix (+1 out, -1 in)."""
        n_in = np.diff(self.in_ptr)
        n_out = np.diff(self.out_ptr)
        cols = np.concatenate([np.repeat(np.arange(self.H), n_out),
                               np.repeat(np.arange(self.H), n_in)])
        rows = np.concatenate([self.out_idx, self.in_idx])
        vals = np.concatenate([np.ones(len(self.out_idx)), -np.ones(len(self.in_idx))])
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.p, self.H))


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    roles: np.ndarray  # role code per neuron
    src: np.ndarray  # per edge
    dst: np.ndarray
    edge_param: np.ndarray  # parameter index per edge
    bias_param: np.ndarray  # parameter index per neuron, -1 if no bias
    p: int
    widths: tuple | None = None  # set for LFCNs
    with_bias: bool | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_edges(cls, roles, edges, bias_flags=None) -> "NetworkGraph":
        """Build a graph and assign the layout-v1 parameter indices.

        ``roles`` holds one of "input"/"hidden"/"output" (or the integer
        codes) per neuron, ``edges`` is a sequence of (src, dst) pairs and
        ``bias_flags`` an optional per-neuron boolean sequence. No validation
        happens here; use :func:`validate_graph`.
        """
        codes = {v: k for k, v in ROLE_NAMES.items()}
        roles = np.array([codes.get(r, r) for r in roles], dtype=np.int64)
        V = len(roles)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src, dst = edges[:, 0].copy(), edges[:, 1].copy()
        if bias_flags is None:
            bias_flags = np.zeros(V, dtype=bool)
        bias_flags = np.asarray(bias_flags, dtype=bool)
        levels = _levels(V, src, dst)
        if levels is None:
            # cyclic graph: fall back to plain (dst, src) ordering so that it
            # can still be inspected by validate_graph
            levels = np.zeros(V, dtype=np.int64)
        edge_param = np.empty(len(src), dtype=np.int64)
        bias_param = np.full(V, -1, dtype=np.int64)
        nxt = 0
        for lvl in range(int(levels.max(initial=0)) + 1):
            eids = np.flatnonzero(levels[dst] == lvl)
            eids = eids[np.lexsort((src[eids], dst[eids]))]
            edge_param[eids] = np.arange(nxt, nxt + len(eids))
            nxt += len(eids)
            for v in np.flatnonzero((levels == lvl) & bias_flags):
                bias_param[v] = nxt
                nxt += 1
        return cls(roles=roles, src=src, dst=dst, edge_param=edge_param,
                   bias_param=bias_param, p=nxt)

    # -- basic views -------------------------------------------------------
    @property
    def n_neurons(self) -> int:
        return len(self.roles)

    @cached_property
    def inputs(self) -> np.ndarray:
        return np.flatnonzero(self.roles == INPUT)

    @cached_property
    def outputs(self) -> np.ndarray:
        return np.flatnonzero(self.roles == OUTPUT)

    @cached_property
    def hidden(self) -> np.ndarray:
        return np.flatnonzero(self.roles == HIDDEN)

    @property
    def H(self) -> int:
        return len(self.hidden)

    @cached_property
    def level(self) -> np.ndarray:
        lv = _levels(self.n_neurons, self.src, self.dst)
        if lv is None:
            raise GraphError("graph contains a cycle")
        return lv

    @cached_property
    def plans(self) -> list[LevelPlan]:
        """Per-level edge groups, levels 1..max, used by all vectorized passes."""
        lv = self.level
        plans = []
        for lvl in range(1, int(lv.max(initial=0)) + 1):
            neurons = np.flatnonzero(lv == lvl)
            eids = np.flatnonzero(lv[self.dst] == lvl)
            local = np.searchsorted(neurons, self.dst[eids])
            to_dst = sp.csr_matrix((np.ones(len(eids)), (local, np.arange(len(eids)))),
                                   shape=(len(neurons), len(eids)))
            to_src = sp.csr_matrix((np.ones(len(eids)), (self.src[eids], np.arange(len(eids)))),
                                   shape=(self.n_neurons, len(eids)))
            plans.append(LevelPlan(neurons, eids, self.src[eids], self.dst[eids],
                                   self.edge_param[eids], to_dst, to_src))
        return plans

    @cached_property
    def _incidence(self) -> NeuronIncidence:
        hidden = self.hidden
        pos = np.full(self.n_neurons, -1, dtype=np.int64)
        pos[hidden] = np.arange(len(hidden))
        has_b = self.bias_param[hidden] >= 0
        # in-set: incoming edge params then the bias; out-set: outgoing edge params
        in_owner = np.concatenate([pos[self.dst], np.flatnonzero(has_b)])
        in_par = np.concatenate([self.edge_param, self.bias_param[hidden][has_b]])
        in_ptr, in_idx = _group(in_owner, in_par, len(hidden))
        out_ptr, out_idx = _group(pos[self.src], self.edge_param, len(hidden))
        return NeuronIncidence(hidden, in_ptr, in_idx, out_ptr, out_idx, self.p)

    def spec(self) -> dict:
        if self.widths is None:
            raise GraphError("only LFCN graphs have a compact JSON spec")
        return {"widths": list(self.widths), "with_bias": bool(self.with_bias)}

    # -- LFCN helpers --------------------------------------------------------
    def layer_slices(self) -> list[tuple[slice, slice | None]]:
        """(weight slice, bias slice or None) per layer of an LFCN."""
        if self.widths is None:
            raise GraphError("not an LFCN")
        out, off = [], 0
        L = len(self.widths) - 1
        for k in range(L):
            m = self.widths[k] * self.widths[k + 1]
            w = slice(off, off + m)
            off += m
            b = None
            if self.with_bias and k < L - 1:
                b = slice(off, off + self.widths[k + 1])
                off += self.widths[k + 1]
            out.append((w, b))
        return out

    def param_classes(self) -> list[tuple[int, str, np.ndarray]]:
        """(layer, "edge" | "bias", parameter indices) for an LFCN."""
        classes = []
        for k, (w, b) in enumerate(self.layer_slices()):
            classes.append((k, "edge", np.arange(w.start, w.stop)))
            if b is not None:
                classes.append((k, "bias", np.arange(b.start, b.stop)))
        return classes

    def fan_in(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_neurons)


def _group(owner, params, n):
    """CSR arrays of ``params`` grouped by ``owner`` (owners < 0 dropped)."""
    keep = owner >= 0
    owner, params = owner[keep], params[keep]
    order = np.lexsort((params, owner))
    ptr = np.zeros(n + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(np.bincount(owner, minlength=n))
    return ptr, params[order].astype(np.int64)


def _levels(V, src, dst):
    """Longest-path level of every neuron, or None if the graph is cyclic."""
    indeg = np.bincount(dst, minlength=V)
    order = np.argsort(src, kind="stable")
    starts = np.searchsorted(src[order], np.arange(V + 1))
    level = np.zeros(V, dtype=np.int64)
    stack = [v for v in range(V) if indeg[v] == 0]
    indeg = indeg.copy()
    seen = 0
    while stack:
        s = stack.pop()
        seen += 1
        for e in order[starts[s]:starts[s + 1]]:
            t = dst[e]
            level[t] = max(level[t], level[s] + 1)
            indeg[t] -= 1
            if indeg[t] == 0:
                stack.append(t)
    return level if seen == V else None


def build_lfcn(widths, with_bias: bool = True) -> NetworkGraph:
    """Layered fully-connected ReLU network with widths ``n_0..n_L``.

    Hidden neurons carry a bias when ``with_bias``; the output layer never does.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise GraphError("need at least an input and an output layer")
    if min(widths) < 1:
        raise GraphError(f"all widths must be >= 1, got {widths}")
    L = len(widths) - 1
    offsets = np.concatenate([[0], np.cumsum(widths)])
    roles = np.full(offsets[-1], HIDDEN, dtype=np.int64)
    roles[:widths[0]] = INPUT
    roles[offsets[L]:] = OUTPUT
    src, dst, edge_param = [], [], []
    bias_param = np.full(offsets[-1], -1, dtype=np.int64)
    nxt = 0
    for k in range(L):
        s = np.arange(offsets[k], offsets[k + 1])
        t = np.arange(offsets[k + 1], offsets[k + 2])
        tt, ss = np.meshgrid(t, s, indexing="ij")
        src.append(ss.ravel())
        dst.append(tt.ravel())
        edge_param.append(np.arange(nxt, nxt + tt.size))
        nxt += tt.size
        if with_bias and k < L - 1:
            bias_param[t] = np.arange(nxt, nxt + len(t))
            nxt += len(t)
    return NetworkGraph(roles=roles, src=np.concatenate(src), dst=np.concatenate(dst),
                        edge_param=np.concatenate(edge_param), bias_param=bias_param,
                        p=nxt, widths=tuple(widths), with_bias=bool(with_bias))


def incidence(net: NetworkGraph) -> NeuronIncidence:
    """In/out parameter sets of every hidden neuron (cached on the graph)."""
    return net._incidence


def validate_graph(net: NetworkGraph) -> list[str]:
    """Human-readable list of violated structural invariants (empty if valid)."""
    problems = []
    V = net.n_neurons
    if len(net.src) and (net.src.min() < 0 or net.dst.min() < 0
                         or max(net.src.max(), net.dst.max()) >= V):
        return ["edge endpoint out of range"]
    if np.any(net.src == net.dst):
        problems.append("self-loop present")
    if _levels(V, net.src, net.dst) is None:
        problems.append("graph is not acyclic")
    elif np.any(net.src >= net.dst):
        problems.append("neuron ids do not follow a topological order")
    indeg = np.bincount(net.dst, minlength=V)
    outdeg = np.bincount(net.src, minlength=V)
    for v in np.flatnonzero((net.roles == INPUT) & (indeg > 0)):
        problems.append(f"input neuron {v} has incoming edges")
    for v in np.flatnonzero((net.roles == OUTPUT) & (outdeg > 0)):
        problems.append(f"output neuron {v} has outgoing edges")
    for v in np.flatnonzero((net.roles == HIDDEN) & (indeg == 0)):
        problems.append(f"hidden neuron {v} has no incoming edge")
    for v in np.flatnonzero((net.roles == HIDDEN) & (outdeg == 0)):
        problems.append(f"hidden neuron {v} has no outgoing edge")
    for v in np.flatnonzero((net.roles != HIDDEN) & (net.bias_param >= 0)):
        problems.append(f"{ROLE_NAMES[int(net.roles[v])]} neuron {v} carries a bias")
    idx = np.concatenate([net.edge_param, net.bias_param[net.bias_param >= 0]])
    if len(idx) != net.p or not np.array_equal(np.sort(idx), np.arange(net.p)):
        problems.append("parameter index is not a bijection onto 0..p-1")
    if len(net.outputs) == 0:
        problems.append("no output neuron")
    return problems


def load_spec(path) -> NetworkGraph:
    with open(path) as fh:
        spec = json.load(fh)
    try:
        return build_lfcn(spec["widths"], bool(spec.get("with_bias", True)))
    except KeyError as exc:
        raise GraphError(f"graph spec is missing {exc}") from None


def save_spec(net: NetworkGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.spec(), fh)


def toy_net() -> NetworkGraph:
    """The single-neuron net ``x -> u * ReLU(v x + w)``; layout order is (v, w, u)."""
    return build_lfcn([1, 1, 1], with_bias=True)


def toy_params(u, v, w) -> np.ndarray:
    return np.array([v, w, u], dtype=float)


def toy_triple(theta) -> tuple[float, float, float]:
    """Inverse of :func:`toy_params`: return (u, v, w)."""
    return float(theta[2]), float(theta[0]), float(theta[1])


def save_params(theta, path, net: NetworkGraph | None = None, binary: bool = False) -> None:
    """Write a parameter vector as a JSON array or as raw little-endian f8.

    Binary files get a ``<path>.json`` sidecar naming the graph and layout.
    """
    theta = np.asarray(theta, dtype=float)
    path = str(path)
    if not binary:
        with open(path, "w") as fh:
            json.dump([float(x) for x in theta], fh)
        return
    theta.astype("<f8").tofile(path)
    side = {"layout": LAYOUT_VERSION, "dtype": "<f8", "length": int(theta.size)}
    if net is not None and net.widths is not None:
        side["graph"] = net.spec()
    with open(path + ".json", "w") as fh:
        json.dump(side, fh, indent=2)


def load_params(path, net: NetworkGraph | None = None) -> np.ndarray:
    path = str(path)
    with open(path, "rb") as fh:
        head = fh.read(1)
    if head == b"[":
        with open(path) as fh:
            theta = np.array(json.load(fh), dtype=float)
    else:
        try:
            with open(path + ".json") as fh:
                side = json.load(fh)
        except FileNotFoundError:
            raise GraphError(f"binary parameter file {path} has no .json sidecar") from None
        if side.get("layout") != LAYOUT_VERSION:
            raise GraphError(f"unsupported layout {side.get('layout')!r}")
        theta = np.fromfile(path, dtype="<f8").astype(float)
        if theta.size != side.get("length", theta.size):
            raise GraphError("binary parameter length disagrees with its sidecar")
    if net is not None and theta.size != net.p:
        raise GraphError(f"expected {net.p} parameters, file has {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise GraphError("parameter vector contains NaN or Inf")
    return theta
