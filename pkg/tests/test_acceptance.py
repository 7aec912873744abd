"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS`` / ``FAIL`` line with the measured numbers
(also visible under pytest's output capture), then asserts. Run directly with
``python tests/test_acceptance.py`` to get just the summary lines.
"""
from __future__ import annotations

import sys
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from pathcond.netgraph import build_lfcn, incidence, toy_net, toy_params
from pathcond.nncore import InitConfig, TrainConfig, forward, init, teacher_student
from pathcond.pathdiag import diag_g_fast
from pathcond.pathoracle import (PATH_CAP, enumerate_paths, gram, min_divergence,
                                 path_count_fast, phi)
from pathcond.regimes import (RegimeSpec, expected_diag, monte_carlo_diag, rank_correlation,
                              regime_report, sample_architectures)
from pathcond.rescale import (PathCondConfig, apply_neuron_rescaling, enorm, grad_F, hess_F,
                              objective_F, pathcond, solve)
from pathcond import experiments as ex

from _nets import random_dag, random_lfcn, random_net

_capman = None


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    if _capman is not None:
        with _capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)


@pytest.fixture(autouse=True)
def _uncaptured(request):
    global _capman
    _capman = request.config.pluginmanager.getplugin("capturemanager")
    yield
    _capman = None


def _oracle_nets(rng, count):
    """Random nets small enough for path enumeration: LFCNs and skip-connection DAGs."""
    nets = []
    while len(nets) < count:
        net = random_net(rng)
        if net.H and path_count_fast(net) <= 5000:
            nets.append(net)
    return nets


# 1 -------------------------------------------------------------------------------

def test_criterion_1_diag_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for i in range(40):
        net = random_lfcn(rng, max_depth=4, max_width=6, with_bias=bool(i % 2)) if i < 32 \
            else random_dag(rng, 2, (3, 3), 2, with_bias=bool(i % 2))
        theta = rng.standard_normal(net.p)
        g = diag_g_fast(net, theta)
        ref = np.diag(gram(net, theta))
        err = np.abs(g - ref) / np.maximum(np.abs(ref), 1e-300)
        worst = max(worst, float(err.max()))
        n += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10 and n >= 30
    report("criterion 1 (diag oracle)", ok, f"{n} nets, max rel err {worst:.2e}, {dt:.2f} s")
    assert ok


# 2 -------------------------------------------------------------------------------

def test_criterion_2_invariance():
    rng = np.random.default_rng(202)
    worst_f, worst_phi, checked = 0.0, 0.0, 0
    nets = _oracle_nets(rng, 15) + [build_lfcn([8, 16, 12, 4], True), build_lfcn([10, 30, 5, 20, 3])]
    for net in nets:
        theta = rng.standard_normal(net.p) * np.exp(rng.uniform(-1, 1, net.p))
        outs = [pathcond(net, theta)[0], enorm(net, theta, 3),
                apply_neuron_rescaling(net, theta, np.exp(rng.uniform(-2, 2, net.H)))]
        X = rng.standard_normal((100, len(net.inputs)))
        f0, _ = forward(net, theta, X)
        small = path_count_fast(net) <= 5000
        ph0 = phi(net, theta) if small else None
        for new in outs:
            f1, _ = forward(net, new, X)
            worst_f = max(worst_f, float(np.max(np.abs(f1 - f0) / (1 + np.abs(f0)))))
            if small:
                d = np.max(np.abs(phi(net, new) - ph0)) / (1 + np.abs(ph0).max())
                worst_phi = max(worst_phi, float(d))
            checked += 1
    ok = worst_f <= 1e-9 and worst_phi <= 1e-10
    report("criterion 2 (function and lifting invariance)", ok,
           f"{checked} outputs, max f ratio {worst_f:.2e}, max Phi ratio {worst_phi:.2e}")
    assert ok


# 3 -------------------------------------------------------------------------------

def test_criterion_3_solver():
    rng = np.random.default_rng(303)
    nets = _oracle_nets(rng, 20)
    worst_up, worst_grad, worst_du = -np.inf, 0.0, 0.0
    for net in nets:
        inc = incidence(net)
        theta = rng.standard_normal(net.p)
        g = diag_g_fast(net, theta)
        _, sol = pathcond(net, theta, PathCondConfig(max_sweeps=10_000), record_updates=True)
        tr = np.concatenate([[sol.objective_trace[0]], sol.update_trace])
        worst_up = max(worst_up, float(np.max(np.diff(tr), initial=-np.inf)))
        worst_grad = max(worst_grad, float(np.abs(grad_F(sol.u, g, inc)).max()))
        ref = minimize(objective_F, np.zeros(net.H), args=(g, inc), jac=grad_F, hess=hess_F,
                       method="trust-exact", options={"gtol": 1e-12})
        worst_du = max(worst_du, float(np.abs(sol.u - ref.x).max()))
    net = toy_net()
    new, sol = pathcond(net, toy_params(2, 3, 1))
    du_toy = abs(sol.u[0] - 0.5 * np.log(0.4))
    # 6.3246 is sqrt(40) rounded, so the 1e-6 check is against sqrt(40)
    dg_toy = float(np.abs(diag_g_fast(net, new) - np.sqrt(40)).max())
    ok = worst_up <= 1e-12 and worst_grad <= 1e-6 and worst_du <= 1e-5 \
        and du_toy <= 1e-10 and dg_toy <= 1e-6
    report("criterion 3 (solver)", ok,
           f"max F increase {worst_up:.1e}, max |grad F| {worst_grad:.1e}, "
           f"max |u - u_ref| {worst_du:.1e} over {len(nets)} nets; toy |du| {du_toy:.1e}, "
           f"g' = {diag_g_fast(net, new).round(6).tolist()} (|g' - sqrt 40| {dg_toy:.1e})")
    assert ok


# 4 -------------------------------------------------------------------------------

def test_criterion_4_divergence():
    rng = np.random.default_rng(404)
    nets = _oracle_nets(rng, 20)
    worst, gains, f_drops, full_rank = -np.inf, [], 0, 0
    for net in nets:
        theta = rng.standard_normal(net.p) * np.exp(rng.uniform(-1, 1, net.p))
        new, sol = pathcond(net, theta, PathCondConfig(max_sweeps=1000))
        G = gram(net, theta)
        before, after = min_divergence(G), min_divergence(gram(net, new))
        worst = max(worst, after - before)
        gains.append(before - after)
        f_drops += sol.objective_trace[-1] <= sol.objective_trace[0]
        full_rank += np.linalg.matrix_rank(G) == net.p
    ok = worst <= 1e-9
    report("criterion 4 (divergence decrease)", ok,
           f"20 nets, {sum(gn < -1e-9 for gn in gains)} increase (max {max(worst, 0):.2e}), "
           f"median decrease {np.median(gains):.3f}; F decreased on {f_drops}/20; "
           f"full-rank G on {full_rank}/20")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_criterion_5_trivial_fixed_point():
    worst, same = 0.0, True
    for widths, bias in (([3, 4, 4, 2], True), ([5, 5, 5], False), ([2, 7, 3, 6, 1], True)):
        net = build_lfcn(widths, bias)
        for alpha in (1e-3, 1.0, 42.0):
            sol = solve(np.full(net.p, alpha), incidence(net))
            worst = max(worst, float(np.abs(sol.u).max()))
            same &= bool(np.all(sol.d == 1.0))
    rng = np.random.default_rng(505)
    n = 4
    net = build_lfcn([n] * 5, False)
    theta = rng.choice([-1.0, 1.0], net.p) / np.sqrt(n)  # every g_i is exactly 1
    new, sol = pathcond(net, theta)
    worst = max(worst, float(np.abs(sol.u).max()))
    same &= bool(np.array_equal(new, theta))
    new, sol = pathcond(toy_net(), toy_params(1, 1, 0))
    same &= bool(np.array_equal(new, toy_params(1, 1, 0)))
    ok = worst <= 1e-12 and same
    report("criterion 5 (constant diagonal is a no-op)", ok,
           f"max |u| {worst:.1e}, theta' == theta bitwise: {same}")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_criterion_6_regime_formulas():
    total = good = 0
    worst_z = 0.0
    for widths in ([4, 4, 4, 4], [4, 8, 4], [8, 2, 8]):
        for a in (0.01, 1.0, 100.0):
            for mode in ("drawn", "zero"):
                spec = RegimeSpec.standard(widths, a, bias_mode=mode)
                ev = expected_diag(spec)
                for key, (mean, se) in monte_carlo_diag(spec, 100_000, seed=total).items():
                    z = abs(mean - ev[key]) / se if se > 0 else (0.0 if mean == ev[key] else np.inf)
                    worst_z = max(worst_z, z)
                    good += z <= 3
                    total += 1
    exact = expected_diag(RegimeSpec.standard([4, 4, 4, 4], 1.0))[(1, "edge")]
    frac = good / total
    ok = frac >= 0.95 and exact == 1.25
    report("criterion 6 (expected diagonal)", ok,
           f"{good}/{total} classes within 3 SE ({frac:.1%}), max z {worst_z:.2f}; "
           f"constant width n=4, k=1 gives {exact}")
    assert ok


# 7 -------------------------------------------------------------------------------

def test_criterion_7_regime_correlation():
    t0 = time.perf_counter()
    archs = sample_architectures(20, depth=8, mean_width=32, n_in=32, n_out=32, seed=0)
    rows = regime_report(archs, (0.01,), seed=0, with_bias=False)
    rho = rank_correlation(rows, 0.01)
    dt = time.perf_counter() - t0
    conv = sum(r["converged"] for r in rows)
    ok = rho > 0.5 and dt < 120
    report("criterion 7 (width ratio vs log-rescaling)", ok,
           f"Spearman rho {rho:.3f} at a=0.01 over 20 bias-free archs ({conv}/20 converged), {dt:.1f} s")
    # the biased variant is reported for information only (see the decisions ledger)
    rows_b = regime_report(archs, (0.01, 1.0), seed=0, with_bias=True)
    if _capman is not None:
        with _capman.global_and_fixture_disabled():
            print(f"INFO criterion 7 with hidden biases: rho(a=0.01) = "
                  f"{rank_correlation(rows_b, 0.01):.3f}, rho(a=1) = {rank_correlation(rows_b, 1.0):.3f}")
    assert ok


# 8 -------------------------------------------------------------------------------

def test_criterion_8_path_counting():
    rng = np.random.default_rng(808)
    mismatches, n = 0, 0
    for _ in range(60):
        net = random_net(rng)
        if path_count_fast(net) <= PATH_CAP:
            mismatches += path_count_fast(net) != len(enumerate_paths(net))
            n += 1
    formula_bad = 0
    for _ in range(40):
        widths = [int(w) for w in rng.integers(1, 30, size=rng.integers(2, 7))]
        bias = bool(rng.integers(2))
        L = len(widths) - 1
        count = int(np.prod(widths))
        if bias:
            count += sum(widths[k] * int(np.prod(widths[k + 1:])) for k in range(1, L))
        formula_bad += path_count_fast(build_lfcn(widths, bias)) != count
    ok = mismatches == 0 and formula_bad == 0
    report("criterion 8 (path counting)", ok,
           f"{n} nets vs enumeration: {mismatches} mismatches; 40 LFCNs vs product formula: "
           f"{formula_bad} mismatches")
    assert ok


# 9 -------------------------------------------------------------------------------

def test_criterion_9_toy_dynamics():
    t0 = time.perf_counter()
    _, summ = ex.toy_flow(lr=1e-3, steps=10_000, record_every=10_000)
    dt = time.perf_counter() - t0
    parts = []
    ok = dt < 60
    for s in summ:
        la, lb = s["loss_at_5000"]["gd_rescaled"], s["loss_at_5000"]["gd"]
        da, db = (s["mean_phi_distance_to_lifted"]["gd_rescaled"],
                  s["mean_phi_distance_to_lifted"]["gd"])
        ok &= la <= lb and da < db
        parts.append(f"theta0={tuple(s['theta0'])}: loss@5000 rescaled {la:.2e} vs raw {lb:.2e}"
                     f" [{'ok' if la <= lb else 'worse'}], Phi-dist {da:.3f} vs {db:.3f}"
                     f" [{'ok' if da < db else 'worse'}]")
    report("criterion 9 (toy dynamics)", ok, "; ".join(parts) + f"; {dt:.1f} s")
    assert ok


# 10 ------------------------------------------------------------------------------

def test_criterion_10_complexity():
    widths = [18, 32, 57, 100, 182, 324, 577]
    ps, times, sweeps = [], [], []
    pathcond(build_lfcn([4, 4, 4, 4]), np.ones(56))  # compile and warm up
    for n in widths:
        net = build_lfcn([n] * 4, True)
        theta = init(net, InitConfig(seed=0))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            _, sol = pathcond(net, theta)
            best = min(best, time.perf_counter() - t0)
        ps.append(net.p)
        times.append(best)
        sweeps.append(sol.sweeps)
    slope = float(np.polyfit(np.log(ps), np.log(times), 1)[0])
    ok_slope = 0.8 <= slope <= 1.3
    ok_sweeps = max(sweeps) <= 10
    report("criterion 10 (linear cost, <= 10 sweeps)", ok_slope and ok_sweeps,
           f"p {ps[0]}..{ps[-1]}, slope {slope:.3f} [{'ok' if ok_slope else 'out of range'}], "
           f"time {times[0] * 1e3:.2f} ms..{times[-1]:.3f} s, sweeps at default tol 1e-8: {sweeps} "
           f"[{'ok' if ok_sweeps else 'exceeds 10'}]")
    assert ok_slope and ok_sweeps


# substitutes for the non-reproducible large-scale training claims ---------------------

def test_supplementary_train_compare_non_degradation():
    widths = [16, 32, 8, 32, 1]
    res = {"baseline": [], "pathcond": []}
    for seed in range(3):
        X, Y = teacher_student(widths, 512, seed=seed)
        _, summ = ex.train_compare(widths, X, Y, methods=("baseline", "pathcond"),
                                   cfg=TrainConfig(learning_rate=0.1, epochs=100, seed=seed),
                                   init_cfg=InitConfig("gaussian_scaled", a=0.05, seed=seed))
        for m in res:
            e = summ["methods"][m]["epochs_to_target"]
            res[m].append(np.inf if e is None else e)
    mb, mp = np.median(res["baseline"]), np.median(res["pathcond"])
    ok = mp <= mb and np.isfinite(mb)
    report("supplementary A (train_compare, epochs to 0.1 x initial loss)", ok,
           f"pathcond {res['pathcond']} (median {mp}) vs baseline {res['baseline']} (median {mb})")
    assert ok


def test_supplementary_compression_trend():
    out = ex.compression_study(factors=(1, 2, 4))
    vals = [out[c]["median_log_rescale_inf"] for c in (1, 2, 4)]
    ok = vals[0] < vals[1] < vals[2]
    report("supplementary B (autoencoder compression trend)", ok,
           "median ||log d||_inf for c=1,2,4: " + ", ".join(f"{v:.3f}" for v in vals))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:randomly"]))
