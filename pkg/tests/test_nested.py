import math

import numpy as np
import pytest

from tracewalk.analysis import conductance_direction, conductance_transition_probabilities
from tracewalk.errors import FrontierNotExtended, UnknownVertex, VertexBudgetExceeded
from tracewalk.nested import (
    estimate_velocity,
    estimate_velocity_horizons,
    run_nested_walk,
    run_on_graph,
    transition_probabilities,
    velocity_from_positions,
)
from tracewalk.trace import TraceGraph, build_trace
from tracewalk.walk import Layer, direction_index, validate_distribution

from conftest import family

SMALL = [(0, 0), (1, 0), (1, 1), (1, 0)]


def p1(w):
    return validate_distribution(w, Layer.ONE)


def test_transition_equal_residual_weights():
    g = build_trace(SMALL)
    probs = transition_probabilities(g, p1([0.4, 0.2, 0.2, 0.2]), (1, 0))
    assert probs == pytest.approx({direction_index([-1, 0]): 0.5, direction_index([0, 1]): 0.5})


def test_transition_dead_end():
    g = build_trace(SMALL)
    assert transition_probabilities(g, p1([0.4, 0.2, 0.2, 0.2]), (1, 1)) == {3: 1.0}


def test_transition_interior_line():
    g = build_trace([[0], [1], [2], [3]])
    probs = transition_probabilities(g, p1([2 / 3, 1 / 3]), (1,))
    assert probs == pytest.approx({0: 2 / 3, 1: 1 / 3})


def test_transition_errors(p0_family):
    g = TraceGraph.generate(p0_family, 100, 3)
    with pytest.raises(FrontierNotExtended):
        transition_probabilities(g, p1([0.25] * 4), g.frontier)
    with pytest.raises(UnknownVertex):
        transition_probabilities(g, p1([0.25] * 4), (-50, 0))


def test_zero_steps(p0_family):
    run = run_nested_walk(p0_family, p1([0.25] * 4), 0, 1)
    assert run.positions.tolist() == [[0, 0]]


def test_balanced_line_structure(p0_line):
    run = run_nested_walk(p0_line, p1([0.5, 0.5]), 10**4, 2)
    pos = run.positions[:, 0]
    traj = run.graph.trajectory[:, 0]
    assert traj.min() <= pos.min() and pos.max() <= traj.max()
    assert set(np.abs(np.diff(pos)).tolist()) == {1}


def test_steps_follow_trace_edges(p0_family):
    run = run_nested_walk(p0_family, family(2, 1, 3.0, Layer.ONE), 50_000, 5, min_extension=500)
    nbr = run.graph.neighbour_table
    a, b = run.path[:-1], run.path[1:]
    assert np.all((nbr[a] == b[:, None]).any(axis=1))
    assert run.extensions > 0


def test_runs_reproducible(p0_family):
    d1 = family(2, 1, 3.0, Layer.ONE)
    a = run_nested_walk(p0_family, d1, 20_000, 9)
    b = run_nested_walk(p0_family, d1, 20_000, 9)
    assert np.array_equal(a.positions, b.positions)
    c = run_nested_walk(p0_family, d1, 20_000, 10)
    assert not np.array_equal(a.positions, c.positions)


def test_frontier_never_stepped_from(p0_family):
    # with a tiny initial trace, extensions must keep the walk off the unfinished end
    run = run_nested_walk(p0_family, family(2, 1, 1.5, Layer.ONE), 30_000, 4, min_extension=50)
    g = run.graph
    frontier_dist = np.abs(run.positions - g.frontier).sum(axis=1)
    assert frontier_dist.min() > 2 * g.d


def test_empirical_transitions_match_law():
    # frozen path graph 0..10: interior vertices step right with prob 2/3
    g = build_trace([[i] for i in range(11)])
    path = run_on_graph(g, p1([2 / 3, 1 / 3]), 200_000, np.random.default_rng(1))
    x = g.coords[path][:, 0]
    interior = (x[:-1] > 0) & (x[:-1] < 10)
    right = np.diff(x)[interior] > 0
    se = math.sqrt(2 / 9 / interior.sum())
    assert abs(right.mean() - 2 / 3) < 4 * se


def test_visited_vertices_conductance_agreement(p0_family):
    d1 = p1([0.1, 0.3, 0.25, 0.35])
    run = run_nested_walk(p0_family, d1, 20_000, 12)
    cd = conductance_direction(d1)
    g = run.graph
    for v in np.unique(run.path):
        row = g.neighbour_table[v]
        avail = np.flatnonzero(row >= 0).tolist()
        cond = conductance_transition_probabilities(d1, g.coords[v], avail, cd)
        total = d1.weights[avail].sum()
        assert max(abs(cond[k] - d1.weights[k] / total) for k in avail) < 1e-12


def test_vertex_budget(p0_family):
    with pytest.raises(VertexBudgetExceeded):
        run_nested_walk(p0_family, family(2, 1, 2.0, Layer.ONE), 100_000, 1,
                        min_extension=1000, vertex_budget=5000)


def test_velocity_from_positions_decomposition():
    pos = np.array([[10.0, 1.0], [12.0, -1.0], [11.0, 0.0], [9.0, 2.0]])
    est = velocity_from_positions(pos, 10, [2.0, 0.0])
    assert est.parallel == pytest.approx(1.05)
    assert est.orthogonal_norm == pytest.approx(0.05)
    assert est.parallel_stderr == pytest.approx(np.std(pos[:, 0] / 10, ddof=1) / 2)
    assert np.all(est.stderr >= 0)
    with pytest.raises(ValueError):
        velocity_from_positions(pos[:1], 10, [1.0, 0.0])


def test_ballistic_velocity_direction(p0_family):
    est = estimate_velocity(p0_family, family(2, 1, 2.0, Layer.ONE), 100_000, 8, 3)
    assert est.parallel > 5 * est.parallel_stderr
    assert est.orthogonal_norm < 3 * est.orthogonal_stderr + 1e-12


def test_horizons_share_runs(p0_family):
    d1 = family(2, 1, 2.0, Layer.ONE)
    multi = estimate_velocity_horizons(p0_family, d1, [5000, 10_000], 4, 6)
    single = estimate_velocity(p0_family, d1, 10_000, 4, 6)
    assert np.array_equal(multi[10_000].vhat, single.vhat)


def test_balanced_line_speed_decays(p0_line):
    # resistance 1 on every edge: diffusive, so X_n / n shrinks with n
    est = estimate_velocity_horizons(p0_line, p1([0.5, 0.5]), [10_000, 160_000], 16, 8)
    assert est[160_000].parallel < 0.5 * est[10_000].parallel
