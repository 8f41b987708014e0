import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from tracewalk.analysis import (
    REGIME_BALLISTIC,
    REGIME_BOUNDARY,
    REGIME_RECURRENT,
    REGIME_SUB_BALLISTIC,
    classify,
    conductance_direction,
    conductance_transition_probabilities,
    doob_transform,
    edge_conductance,
    mgf,
    solve_alpha,
)
from tracewalk.errors import AlphaNotRoot, NotAnEdgePair, NotTransient
from tracewalk.trace import TraceGraph
from tracewalk.walk import Layer, drift, unit_vectors, validate_distribution

from conftest import family


def p1(w):
    return validate_distribution(w, Layer.ONE)


def test_direction_single_axis():
    cd = conductance_direction(p1([0.4, 0.2, 0.2, 0.2]))
    assert cd.ell.tolist() == [1.0, 0.0]
    assert cd.beta == pytest.approx(2.0, abs=1e-14)


def test_direction_balanced_convention():
    cd = conductance_direction(p1([0.25] * 4))
    assert cd.balanced and cd.log_beta == 0.0
    assert cd.ell.tolist() == [1.0, 0.0]


def test_direction_mixed():
    cd = conductance_direction(p1([0.09, 0.01, 0.40, 0.50]))
    raw = np.array([math.log(9), math.log(0.8)])
    assert raw == pytest.approx([2.19722, -0.22314], abs=1e-5)
    assert cd.log_beta == pytest.approx(2.20853, abs=1e-5)
    assert cd.ell == pytest.approx([0.99488, -0.10103], abs=1e-5)
    assert cd.log_beta * cd.ell == pytest.approx(raw, abs=1e-12)


def test_edge_conductance_examples():
    dist = p1([0.4, 0.2, 0.2, 0.2])
    assert edge_conductance(dist, (0, 0), (1, 0)) == pytest.approx(0.4, rel=1e-14)
    assert edge_conductance(dist, (1, 0), (1, 1)) == pytest.approx(0.4, rel=1e-14)
    assert edge_conductance(dist, (1, 0), (0, 0)) == edge_conductance(dist, (0, 0), (1, 0))
    with pytest.raises(NotAnEdgePair):
        edge_conductance(dist, (0, 0), (2, 0))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.02, 1.0), min_size=6, max_size=6),
    st.lists(st.integers(-30, 30), min_size=3, max_size=3),
)
def test_conductance_simplification(raw, x):
    dist = p1(np.asarray(raw) / sum(raw))
    cd = conductance_direction(dist)
    x = np.array(x)
    for k, e in enumerate(unit_vectors(3)):
        expected = dist.weights[k] * math.exp(cd.log_beta * float(x @ cd.ell))
        assert edge_conductance(dist, x, x + e, cd) == pytest.approx(expected, rel=1e-10)


def test_mgf_examples(p0_line):
    assert mgf(p0_line, [1.0], 0.0) == 1.0
    assert mgf(p0_line, [1.0], math.log(7 / 3)) == pytest.approx(1.0, abs=1e-15)
    assert mgf(p0_line, [1.0], 1.0) == pytest.approx(0.7 / math.e + 0.3 * math.e, abs=1e-15)
    assert mgf(p0_line, [1.0], 1.0) == pytest.approx(1.07301, abs=1e-5)


def test_mgf_strictly_convex(p0_family):
    ts = np.linspace(-3, 6, 200)
    vals = np.array([mgf(p0_family, [1.0, 0.0], t) for t in ts])
    assert np.all(vals[:-2] - 2 * vals[1:-1] + vals[2:] > 0)


def quadratic_alpha(p):
    # (1 - p) x^2 - x + p = 0, larger root
    a, b, c = 1 - p, -1.0, p
    return (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)


def test_alpha_line(p0_line):
    t, alpha = solve_alpha(p0_line, [1.0])
    assert alpha == pytest.approx(quadratic_alpha(0.7), abs=1e-12)
    assert alpha == pytest.approx(7 / 3, abs=1e-12)
    assert alpha == pytest.approx(math.exp(t), rel=1e-15)


@pytest.mark.parametrize("gamma", [1.5, 2.0, 4.0, 8.0])
def test_alpha_family_equals_gamma(gamma):
    dist = family(2, 1, gamma, Layer.ZERO)
    # x^2 - (gamma + 1) x + gamma = 0 has roots 1 and gamma
    _, alpha = solve_alpha(dist, [1.0, 0.0])
    assert alpha == pytest.approx(gamma, abs=1e-10)


def test_alpha_infinite_without_backtracking():
    dist = validate_distribution([1.0, 0.0], Layer.ZERO)
    assert solve_alpha(dist, [1.0]) == (math.inf, math.inf)


def test_alpha_requires_transience(p0_line):
    with pytest.raises(NotTransient):
        solve_alpha(p0_line, [-1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4), st.floats(-math.pi, math.pi))
def test_alpha_against_brentq(raw, angle):
    dist = validate_distribution(np.asarray(raw) / sum(raw))
    ell = np.array([math.cos(angle), math.sin(angle)])
    if drift(dist) @ ell <= 1e-3:
        return
    t, alpha = solve_alpha(dist, ell)
    assert abs(mgf(dist, ell, t) - 1) < 1e-10
    assert mgf(dist, ell, t / 2) < 1
    hi = 1.0
    while mgf(dist, ell, hi) <= 1:
        hi *= 2
    oracle = brentq(lambda s: mgf(dist, ell, s) - 1, hi / 2 if hi > 1 else 1e-9, hi, xtol=1e-14)
    assert t == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_doob_line(p0_line):
    doob = doob_transform(p0_line, [1.0], 7 / 3)
    assert doob.dist.weights == pytest.approx([0.3, 0.7], abs=1e-15)
    assert doob.drift == pytest.approx([-0.4], abs=1e-15)


def test_doob_family(p0_family):
    doob = doob_transform(p0_family, [1.0, 0.0], 4.0)
    assert doob.dist.weights == pytest.approx([1 / 7, 4 / 7, 1 / 7, 1 / 7], abs=1e-15)
    assert doob.drift == pytest.approx([-3 / 7, 0.0], abs=1e-15)


def test_doob_near_balanced():
    eps = 1e-3
    dist = validate_distribution([0.5 + eps, 0.5 - eps], Layer.ZERO)
    _, alpha = solve_alpha(dist, [1.0])
    doob = doob_transform(dist, [1.0], alpha)
    assert doob.drift == pytest.approx(-drift(dist), abs=1e-5)


def test_doob_rejects_non_root(p0_line):
    with pytest.raises(AlphaNotRoot):
        doob_transform(p0_line, [1.0], 2.0)


def test_classify_family_ballistic(p0_family):
    prof = classify(p0_family, family(2, 1, 3.0, Layer.ONE))
    assert prof.transient and prof.regime == REGIME_BALLISTIC
    assert prof.beta == pytest.approx(3.0, abs=1e-12)
    assert prof.alpha == pytest.approx(4.0, abs=1e-10)
    assert prof.kappa == pytest.approx(math.log(4) / math.log(3), abs=1e-10)
    assert prof.kappa == pytest.approx(1.26186, abs=1e-5)


def test_classify_family_sub_ballistic():
    prof = classify(family(2, 1, 2.0, Layer.ZERO), family(2, 1, 5.0, Layer.ONE))
    assert prof.transient and prof.regime == REGIME_SUB_BALLISTIC


def test_classify_boundary(p0_family):
    prof = classify(p0_family, family(2, 1, 4.0, Layer.ONE))
    assert prof.regime == REGIME_BOUNDARY


def test_classify_counterexample():
    d0 = validate_distribution([0.2, 0.15, 0.5, 0.15], Layer.ZERO)
    d1 = p1([0.09, 0.01, 0.40, 0.50])
    prof = classify(d0, d1)
    assert float(prof.drift0 @ prof.drift1) == pytest.approx(0.05 * 0.08 + 0.35 * -0.10)
    assert float(prof.drift0 @ prof.drift1) < 0
    assert float(prof.drift0 @ prof.ell) == pytest.approx(0.01438, abs=1e-5)
    assert prof.transient


def test_classify_opposite_counterexample():
    d0 = validate_distribution([0.2, 0.15, 0.5, 0.15], Layer.ZERO)
    d1 = p1([0.01, 0.09, 0.50, 0.40])
    prof = classify(d0, d1)
    assert float(prof.drift0 @ prof.drift1) > 0
    assert prof.regime == REGIME_RECURRENT


def test_classify_balanced_is_recurrent(p0_line):
    prof = classify(p0_line, p1([0.5, 0.5]))
    assert prof.balanced and not prof.transient
    assert prof.kappa == math.inf


def test_classify_family_criterion_general_k():
    # ballistic iff k1 (g1 - 1) < min(k1, k0) (g0 - 1)
    for k0, g0, k1, g1 in [(1, 3.0, 2, 1.8), (1, 3.0, 2, 2.2), (2, 2.0, 1, 1.9), (2, 2.0, 1, 2.1)]:
        prof = classify(family(3, k0, g0, Layer.ZERO), family(3, k1, g1, Layer.ONE))
        ballistic = k1 * (g1 - 1) < min(k0, k1) * (g0 - 1)
        assert prof.regime == (REGIME_BALLISTIC if ballistic else REGIME_SUB_BALLISTIC)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.02, 1.0), min_size=4, max_size=4),
       st.lists(st.floats(0.02, 1.0), min_size=4, max_size=4),
       st.floats(0.1, 10.0))
def test_profile_invariants(raw0, raw1, scale):
    w0 = np.asarray(raw0) / sum(raw0)
    if w0[0] <= w0[1]:
        w0[[0, 1]] = w0[[1, 0]]
    if w0[0] == w0[1]:
        return
    d0 = validate_distribution(w0, Layer.ZERO)
    w1 = np.asarray(raw1)
    d1 = p1(w1 / w1.sum())
    prof = classify(d0, d1)
    scaled = classify(d0, p1(w1 * scale / (w1 * scale).sum()))
    assert scaled.regime == prof.regime
    assert scaled.log_beta == pytest.approx(prof.log_beta, abs=1e-12)
    if math.isfinite(prof.kappa):
        assert scaled.kappa == pytest.approx(prof.kappa, rel=1e-9)
    # sign pattern of drift1 matches that of ell (ell is a convention when balanced)
    if not prof.balanced:
        assert np.array_equal(np.sign(np.round(prof.drift1, 15)), np.sign(np.round(prof.ell, 15)))
    if math.isfinite(prof.alpha):
        assert prof.alpha == pytest.approx(math.exp(prof.t_root))
        assert abs(prof.doob_dist.weights.sum() - 1) < 1e-12
        assert float(prof.doob_drift @ prof.ell) < 0


@pytest.mark.parametrize("d, seed", [(1, 0), (2, 1), (3, 2)])
def test_conductance_form_matches_weight_form(d, seed):
    rng = np.random.default_rng(seed)
    w0 = rng.uniform(0.2, 1, 2 * d)
    w0[0] += 1.0
    d0 = validate_distribution(w0 / w0.sum(), Layer.ZERO)
    w1 = rng.uniform(0.05, 1, 2 * d)
    d1 = p1(w1 / w1.sum())
    g = TraceGraph.generate(d0, 2000, seed)
    cd = conductance_direction(d1)
    for x, row in zip(g.coords, g.neighbour_table):
        avail = np.flatnonzero(row >= 0).tolist()
        cond = conductance_transition_probabilities(d1, x, avail, cd)
        total = d1.weights[avail].sum()
        for k in avail:
            assert abs(cond[k] - d1.weights[k] / total) < 1e-12
