"""Path-conditioned rescaling by coordinate descent, and the ENorm baseline.

The solver minimizes over per-neuron log-scales ``u``

    F(u) = p * log(sum_i exp((Bu)_i) g_i) - sum_i (Bu)_i

where ``g`` is the path-Gram diagonal and ``B`` the +1 (outgoing) / -1
(incoming) neuron incidence. Each coordinate has a closed-form minimizer, the
log of the positive root of a quadratic. The dual vector ``v = Bu`` and the
global sum ``E = sum exp(v_i) g_i`` are maintained incrementally so that one
sweep over all hidden neurons costs O(p).

The parameters are then multiplied by ``d = exp(-Bu / 2)``, which makes the
new diagonal ``exp(Bu) * g``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .netgraph import NetworkGraph, NeuronIncidence, incidence
from .pathdiag import diag_g_fast

log = logging.getLogger(__name__)

# exponent window for the running shift of E
_SHIFT_WINDOW = 30.0


class DegenerateDiagonalError(ValueError):
    pass


@dataclass(frozen=True)
class PathCondConfig:
    tol: float = 1e-8
    max_sweeps: int = 50
    recompute_every: int = 10

    def __post_init__(self):
        if not (self.tol > 0 and self.max_sweeps > 0 and self.recompute_every > 0):
            raise ValueError("tol, max_sweeps and recompute_every must be positive")


@dataclass
class PathCondState:
    """Mutable solver state.

    Terms ``exp(v_i) g_i`` are evaluated as ``exp(v_i + lg_i - shift)`` with
    ``lg = log(g / max g)``; ``E`` is stored in the same shifted units.
    Parameters with ``g_i = 0`` are inactive and excluded everywhere.
    """

    inc: NeuronIncidence
    g: np.ndarray
    lg: np.ndarray
    active: np.ndarray
    p_eff: int
    log_gmax: float
    u: np.ndarray
    v: np.ndarray
    E: float = 0.0
    shift: float = 0.0
    sum_v: float = 0.0

    @classmethod
    def start(cls, g, inc: NeuronIncidence, u=None) -> "PathCondState":
        g = np.asarray(g, dtype=float)
        if g.shape != (inc.p,):
            raise ValueError("diagonal has the wrong length")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("path-Gram diagonal is not finite (overflow?)")
        if np.any(g < 0):
            raise ValueError("diagonal must be nonnegative")
        active = g > 0
        if not active.any():
            raise DegenerateDiagonalError("path-Gram diagonal is identically zero")
        gmax = g.max()
        with np.errstate(divide="ignore"):
            lg = np.where(active, np.log(g / gmax), -np.inf)
        u = np.zeros(inc.H) if u is None else np.array(u, dtype=float)
        st = cls(inc=inc, g=g, lg=lg, active=active, p_eff=int(active.sum()),
                 log_gmax=float(np.log(gmax)), u=u, v=np.zeros(inc.p))
        st.recompute()
        return st

    def recompute(self) -> None:
        """Rebuild v = Bu, the shift and E from scratch (bounds incremental drift)."""
        self.v = self.inc.B_matmul(self.u)
        x = self.v[self.active] + self.lg[self.active]
        self.shift = float(x.max())
        self.E = float(np.exp(x - self.shift).sum())
        self.sum_v = float(self.v[self.active].sum())

    def objective(self) -> float:
        """F(u) for the original (unnormalized) g, from the maintained sums."""
        return self.p_eff * (np.log(self.E) + self.shift + self.log_gmax) - self.sum_v


@dataclass
class RescalingSolution:
    u: np.ndarray
    d: np.ndarray
    objective_trace: list
    sweeps: int
    converged: bool
    skipped: list = field(default_factory=list)
    update_trace: np.ndarray | None = None

    @property
    def log_rescale_inf(self) -> float:
        return float(np.max(np.abs(np.log(self.d)))) if self.d.size else 0.0


def objective_F(u, g, inc: NeuronIncidence) -> float:
    """F(u) restricted to the parameters with g_i > 0."""
    g = np.asarray(g, dtype=float)
    act = g > 0
    if not act.any():
        raise DegenerateDiagonalError("path-Gram diagonal is identically zero")
    x = inc.B_matmul(u)[act]
    return float(act.sum() * logsumexp(x, b=g[act]) - x.sum())


def grad_F(u, g, inc: NeuronIncidence) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    act = g > 0
    x = inc.B_matmul(u)
    w = np.zeros_like(g)
    w[act] = np.exp(x[act] - x[act].max()) * g[act]
    y = np.zeros_like(g)
    y[act] = act.sum() * w[act] / w.sum() - 1.0
    return inc.BT_matmul(y)


def hess_F(u, g, inc: NeuronIncidence) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    act = g > 0
    x = inc.B_matmul(u)
    w = np.zeros_like(g)
    w[act] = np.exp(x[act] - x[act].max()) * g[act]
    s = w / w.sum()
    B = inc.matrix().toarray()
    Bs = B.T @ s
    return act.sum() * ((B.T * s) @ B - np.outer(Bs, Bs))


def positive_root(a2: float, a1: float, a0: float) -> float:
    """Positive root of a2 X^2 + a1 X + a0 with a2 > 0 > a0, cancellation-free."""
    disc = np.sqrt(a1 * a1 - 4.0 * a2 * a0)
    if a1 >= 0:
        return -2.0 * a0 / (a1 + disc)
    return (-a1 + disc) / (2.0 * a2)


def _coefficients(h, st: PathCondState):
    ins = st.inc.in_set(h)
    outs = st.inc.out_set(h)
    ins = ins[st.active[ins]]
    outs = outs[st.active[outs]]
    s_out = np.exp(st.v[outs] + st.lg[outs] - st.shift).sum()
    s_in = np.exp(st.v[ins] + st.lg[ins] - st.shift).sum()
    A = len(ins) - len(outs)
    uh = st.u[h]
    B = s_out * np.exp(-uh)
    C = s_in * np.exp(uh)
    D = max(st.E - s_out - s_in, 0.0)
    return A, B, C, D, ins, outs


def coordinate_update(h: int, st: PathCondState) -> float:
    """Exact minimizer of F along coordinate ``h``; returns the new ``u_h``.

    A neuron whose active in- or out-set is empty has no finite minimizer
    and keeps its current value.
    """
    A, B, C, D, _, _ = _coefficients(h, st)
    if B <= 0 or C <= 0:
        return float(st.u[h])
    p = st.p_eff
    return float(np.log(positive_root(B * (A + p), A * D, C * (A - p))))


def _commit(h: int, new_uh: float, st: PathCondState) -> float:
    A, B, C, D, ins, outs = _coefficients(h, st)
    delta = new_uh - st.u[h]
    st.v[outs] += delta
    st.v[ins] -= delta
    st.E = D + np.exp(st.v[outs] + st.lg[outs] - st.shift).sum() \
        + np.exp(st.v[ins] + st.lg[ins] - st.shift).sum()
    st.sum_v -= A * delta
    st.u[h] = new_uh
    if st.E > np.exp(_SHIFT_WINDOW) or st.E < np.exp(-_SHIFT_WINDOW):
        st.shift += np.log(st.E)
        st.E = 1.0
    return delta


@njit(cache=True)
def _sweeps_kernel(lg, active, in_ptr, in_idx, out_ptr, out_idx, u, v, state,
                   p_eff, tol, max_sweeps, recompute_every, trace, sweep_trace):
    """Numba twin of the Python sweep loop; state = [E, shift, sum_v]."""
    H = u.shape[0]
    E, shift, sum_v = state[0], state[1], state[2]
    sweeps = 0
    converged = False
    k = 0
    for sweep in range(max_sweeps):
        total = 0.0
        for h in range(H):
            s_out = 0.0
            s_in = 0.0
            n_out = 0
            n_in = 0
            for j in range(out_ptr[h], out_ptr[h + 1]):
                i = out_idx[j]
                if active[i]:
                    s_out += np.exp(v[i] + lg[i] - shift)
                    n_out += 1
            for j in range(in_ptr[h], in_ptr[h + 1]):
                i = in_idx[j]
                if active[i]:
                    s_in += np.exp(v[i] + lg[i] - shift)
                    n_in += 1
            A = n_in - n_out
            uh = u[h]
            B = s_out * np.exp(-uh)
            C = s_in * np.exp(uh)
            D = E - s_out - s_in
            if D < 0.0:
                D = 0.0
            if B > 0.0 and C > 0.0:
                a2 = B * (A + p_eff)
                a1 = A * D
                a0 = C * (A - p_eff)
                disc = np.sqrt(a1 * a1 - 4.0 * a2 * a0)
                if a1 >= 0.0:
                    r = -2.0 * a0 / (a1 + disc)
                else:
                    r = (-a1 + disc) / (2.0 * a2)
                delta = np.log(r) - uh
                s_out = 0.0
                s_in = 0.0
                for j in range(out_ptr[h], out_ptr[h + 1]):
                    i = out_idx[j]
                    v[i] += delta
                    if active[i]:
                        s_out += np.exp(v[i] + lg[i] - shift)
                for j in range(in_ptr[h], in_ptr[h + 1]):
                    i = in_idx[j]
                    v[i] -= delta
                    if active[i]:
                        s_in += np.exp(v[i] + lg[i] - shift)
                E = D + s_out + s_in
                sum_v -= A * delta
                u[h] = uh + delta
                total += abs(delta)
                if E > 1e13 or E < 1e-13:
                    shift += np.log(E)
                    E = 1.0
            if trace.shape[0] > 0:
                trace[k] = p_eff * (np.log(E) + shift) - sum_v
                k += 1
        sweeps += 1
        if (sweep + 1) % recompute_every == 0:
            # exact rebuild of v = Bu and E
            for i in range(v.shape[0]):
                v[i] = 0.0
            for h in range(H):
                for j in range(out_ptr[h], out_ptr[h + 1]):
                    v[out_idx[j]] += u[h]
                for j in range(in_ptr[h], in_ptr[h + 1]):
                    v[in_idx[j]] -= u[h]
            shift = -np.inf
            for i in range(v.shape[0]):
                if active[i] and v[i] + lg[i] > shift:
                    shift = v[i] + lg[i]
            E = 0.0
            sum_v = 0.0
            for i in range(v.shape[0]):
                if active[i]:
                    E += np.exp(v[i] + lg[i] - shift)
                    sum_v += v[i]
        sweep_trace[sweep] = p_eff * (np.log(E) + shift) - sum_v
        if total < tol:
            converged = True
            break
    state[0] = E
    state[1] = shift
    state[2] = sum_v
    return sweeps, converged


def solve(g, inc: NeuronIncidence, cfg: PathCondConfig = PathCondConfig(),
          engine: str = "numba", record_updates: bool = False) -> RescalingSolution:
    """Run the coordinate descent on a given diagonal ``g``."""
    st = PathCondState.start(g, inc)
    p_eff = st.p_eff
    trace = [st.objective()]
    skipped = []
    for h in range(inc.H):
        ins, outs = inc.in_set(h), inc.out_set(h)
        if not (st.active[ins].any() and st.active[outs].any()):
            skipped.append(int(inc.hidden[h]))
    if skipped:
        log.warning("%d neuron(s) have an all-zero in- or out-set and stay at u=0", len(skipped))

    updates = None
    if engine == "numba":
        state = np.array([st.E, st.shift, st.sum_v])
        upd = np.empty(cfg.max_sweeps * inc.H if record_updates else 0)
        sweep_vals = np.empty(cfg.max_sweeps)
        sweeps, converged = _sweeps_kernel(
            st.lg, st.active, inc.in_ptr, inc.in_idx, inc.out_ptr, inc.out_idx,
            st.u, st.v, state, p_eff, cfg.tol, cfg.max_sweeps, cfg.recompute_every,
            upd, sweep_vals)
        trace += list(sweep_vals[:sweeps] + p_eff * st.log_gmax)
        if record_updates:
            updates = upd[:sweeps * inc.H] + p_eff * st.log_gmax
    elif engine == "python":
        upd = []
        sweeps, converged = 0, False
        for sweep in range(cfg.max_sweeps):
            total = 0.0
            for h in range(inc.H):
                total += abs(_commit(h, coordinate_update(h, st), st))
                if record_updates:
                    upd.append(st.objective())
            sweeps += 1
            if sweeps % cfg.recompute_every == 0:
                st.recompute()
            trace.append(st.objective())
            if total < cfg.tol:
                converged = True
                break
        updates = np.array(upd) if record_updates else None
    else:
        raise ValueError(f"unknown engine {engine!r}")

    u = st.u
    d = np.exp(-0.5 * inc.B_matmul(u))
    return RescalingSolution(u=u, d=d, objective_trace=[float(x) for x in trace],
                             sweeps=sweeps, converged=bool(converged), skipped=skipped,
                             update_trace=updates)


def pathcond(net: NetworkGraph, theta, cfg: PathCondConfig = PathCondConfig(),
             engine: str = "numba", record_updates: bool = False):
    """Rescale ``theta`` within its symmetry class to condition the path kernel.

    Returns ``(theta', solution)``; ``theta'`` computes the same function and
    has the same path-lifting as ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    g = diag_g_fast(net, theta)
    sol = solve(g, incidence(net), cfg, engine=engine, record_updates=record_updates)
    return theta * sol.d, sol


def apply_neuron_rescaling(net: NetworkGraph, theta, lam) -> np.ndarray:
    """Multiply incoming weights and bias of hidden neuron h by ``lam[h]`` and outgoing ones by ``1/lam[h]``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (net.H,):
        raise ValueError(f"need one factor per hidden neuron ({net.H})")
    if np.any(lam <= 0):
        raise ValueError("rescaling factors must be positive")
    return np.asarray(theta, dtype=float) * np.exp(-incidence(net).B_matmul(np.log(lam)))


@njit(cache=True)
def _enorm_kernel(theta, in_ptr, in_idx, out_ptr, out_idx, cycles):
    H = in_ptr.shape[0] - 1
    skipped = 0
    for _ in range(cycles):
        for h in range(H):
            n_in = 0.0
            n_out = 0.0
            for j in range(in_ptr[h], in_ptr[h + 1]):
                n_in += theta[in_idx[j]] ** 2
            for j in range(out_ptr[h], out_ptr[h + 1]):
                n_out += theta[out_idx[j]] ** 2
            if n_in == 0.0 or n_out == 0.0:
                skipped += 1
                continue
            lam = (n_out / n_in) ** 0.25
            for j in range(in_ptr[h], in_ptr[h + 1]):
                theta[in_idx[j]] *= lam
            for j in range(out_ptr[h], out_ptr[h + 1]):
                theta[out_idx[j]] /= lam
    return skipped


def enorm(net: NetworkGraph, theta, cycles: int = 1) -> np.ndarray:
    """ENorm with p=2, c=1: balance each neuron's incoming and outgoing l2 norms.

    Visits hidden neurons in topological order; each visit sets
    ``lam = sqrt(||out|| / ||in||)``, the exact coordinate minimizer of the
    sum of squared parameters. Neurons with a zero norm on either side are left alone.
    """
    if cycles < 1:
        raise ValueError("cycles must be positive")
    inc = incidence(net)
    out = np.array(theta, dtype=float)
    _enorm_kernel(out, inc.in_ptr, inc.in_idx, inc.out_ptr, inc.out_idx, int(cycles))
    return out
