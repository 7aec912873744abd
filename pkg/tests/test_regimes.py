import itertools

import numpy as np
import pytest

from pathcond.pathoracle import enumerate_paths
from pathcond.pathdiag import diag_g_fast
from pathcond.regimes import (RegimeSpec, dirichlet_widths, expected_diag,
                              expected_diag_standard, expected_diag_vector, monte_carlo_diag,
                              rank_correlation, regime_report, regime_row, sample_architectures)


def _enumerated_expectation(spec):
    """E[g_i] = sum over paths through i of the product of the other parameters' variances."""
    net = spec.network()
    var = spec.std_vector(net) ** 2
    out = np.zeros(net.p)
    for path in enumerate_paths(net):
        for i in path.params:
            out[i] += np.prod([var[j] for j in path.params if j != i])
    return net, out


def test_constant_width_value():
    ev = expected_diag(RegimeSpec.standard([4, 4, 4, 4], 1.0))
    assert ev[(1, "edge")] == pytest.approx(1.25, abs=1e-15)
    for L, n in itertools.product((2, 3, 5), (3, 7)):
        ev = expected_diag(RegimeSpec.standard([n] * (L + 1), 1.0))
        for k in range(L):
            assert ev[(k, "edge")] == pytest.approx(1 + k / n, rel=1e-14)


def test_large_a_asymptote():
    n, L, a = 5, 4, 1e8
    ev = expected_diag(RegimeSpec.standard([n] * (L + 1), a))
    for k in range(1, L):
        assert ev[(k, "edge")] / (a ** (L - 1) * (1 + 1 / n)) == pytest.approx(1.0, rel=1e-6)


def test_toy_hand_sum():
    s0, s1 = 0.7, 1.9
    spec = RegimeSpec((1, 1, 1), (s0, s1), with_bias=True)
    ev = expected_diag(spec)
    # v: path (v, u) -> E[u^2]; w: path (w, u) -> E[u^2]; u: E[v^2] + E[w^2]
    assert ev[(0, "edge")] == pytest.approx(s1)
    assert ev[(0, "bias")] == pytest.approx(s1)
    assert ev[(1, "edge")] == pytest.approx(2 * s0)


@pytest.mark.parametrize("widths", [(1, 1, 1), (2, 3, 1), (3, 2, 2, 2), (2, 3, 1, 2)])
@pytest.mark.parametrize("mode", ["drawn", "zero"])
def test_matches_enumeration(widths, mode):
    rng = np.random.default_rng(sum(widths))
    sig = tuple(float(x) for x in rng.uniform(0.2, 3.0, size=len(widths) - 1))
    for bias in (True, False):
        spec = RegimeSpec(widths, sig, with_bias=bias, bias_mode=mode)
        net, exact = _enumerated_expectation(spec)
        np.testing.assert_allclose(expected_diag_vector(spec, net), exact, rtol=1e-12)


def test_standard_form_agrees_with_general():
    widths = [3, 5, 2, 4, 2]
    for a in (0.01, 1.0, 30.0):
        ev = expected_diag(RegimeSpec.standard(widths, a))
        for k in range(len(widths) - 1):
            assert expected_diag_standard(widths, a, k) == pytest.approx(ev[(k, "edge")], rel=1e-12)
            if (k, "bias") in ev:
                assert expected_diag_standard(widths, a, k, "bias") == pytest.approx(
                    ev[(k, "bias")], rel=1e-12)


def test_closed_form_is_diag_at_std_vector():
    # every path term is a product of variances, which is diag_g at theta = std
    spec = RegimeSpec.standard([6, 9, 3, 7, 2], 0.3)
    net = spec.network()
    np.testing.assert_allclose(diag_g_fast(net, spec.std_vector(net)),
                               expected_diag_vector(spec, net), rtol=1e-12)


@pytest.mark.parametrize("mode", ["drawn", "zero"])
def test_monte_carlo_within_three_se(mode):
    spec = RegimeSpec.standard([4, 8, 4], 1.0, bias_mode=mode)
    mc = monte_carlo_diag(spec, 100_000, seed=0)
    ev = expected_diag(spec)
    for key, (mean, se) in mc.items():
        assert abs(mean - ev[key]) <= 3 * se, key


def test_small_a_layer_ratio():
    a = 1e-3
    spec = RegimeSpec.standard([4, 4, 4, 4, 4], a)
    mc = monte_carlo_diag(spec, 100_000, seed=1)
    ev = expected_diag(spec)
    # mean diagonal grows by ~1/a per layer: E[g] ~ a^(L-k) / n for k >= 1
    assert ev[(3, "edge")] / ev[(2, "edge")] == pytest.approx(1 / a, rel=0.2)
    assert mc[(3, "edge")][0] / mc[(2, "edge")][0] == pytest.approx(1 / a, rel=0.2)


def test_monte_carlo_determinism_and_guard():
    spec = RegimeSpec.standard([2, 3, 2], 1.0)
    assert monte_carlo_diag(spec, 2000, seed=3) == monte_carlo_diag(spec, 2000, seed=3)
    with pytest.raises(ValueError):
        monte_carlo_diag(spec, 999)


def test_spec_validation():
    with pytest.raises(ValueError):
        RegimeSpec((2, 0, 1), (1.0, 1.0))
    with pytest.raises(ValueError):
        RegimeSpec((2, 3, 1), (1.0, -1.0))
    with pytest.raises(ValueError):
        RegimeSpec((2, 3, 1), (1.0,))


def test_dirichlet_widths():
    assert dirichlet_widths(8, 32, 1e6, seed=0) == [32] * 8
    for alpha in (0.01, 0.1, 1.0, 10.0, 1e6):
        for s in range(10):
            w = dirichlet_widths(8, 32, alpha, seed=s)
            assert sum(w) == 256 and min(w) >= 1 and len(w) == 8
    ratios = [max(w) / min(w) for w in (dirichlet_widths(8, 32, 0.1, seed=s) for s in range(20))]
    assert np.median(ratios) > 4
    with pytest.raises(ValueError):
        dirichlet_widths(1, 32, 1.0)


def test_constant_width_is_nearly_untouched():
    row = regime_row([1024, 1024, 1024], 1.0, seed=0, with_bias=True)
    assert row["log_rescale_inf"] <= 0.1


def test_small_a_grows_with_depth():
    vals = [regime_row([64] * L, 0.01, seed=0, with_bias=True)["log_rescale_inf"]
            for L in (3, 4, 5, 6)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_report_shape_and_correlation():
    archs = sample_architectures(6, depth=4, mean_width=8, n_in=8, n_out=8, seed=2)
    assert all(len(w) == 6 and sum(w[1:-1]) == 32 for w in archs)
    rows = regime_report(archs, (0.01, 1.0), seed=0)
    assert len(rows) == 12 and {r["arch_id"] for r in rows} == set(range(6))
    assert all(r["converged"] for r in rows)
    rho = rank_correlation(rows, 0.01)
    assert -1.0 <= rho <= 1.0
