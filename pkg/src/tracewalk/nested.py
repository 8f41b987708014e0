"""Biased walk on the lazily generated trace, and velocity estimation."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import FrontierNotExtended
from .trace import DEFAULT_VERTEX_BUDGET, TraceGraph
from .walk import RandomSeed, StepDistribution, as_seed, drift

MIN_EXTENSION = 10_000
UNIFORM_BLOCK = 1 << 20
X1_STREAM = 1


def transition_probabilities(graph: TraceGraph, dist1: StepDistribution, x) -> dict[int, float]:
    """Step law of the layer-1 walk at vertex ``x``: p1(e) over available edges."""
    v = graph.vertex_id(x)
    if not graph.frozen and v == graph.end_vertex:
        raise FrontierNotExtended("extend the trace before stepping from its final point")
    row = graph.neighbour_table[v]
    avail = np.flatnonzero(row >= 0)
    w = dist1.weights[avail]
    return dict(zip(avail.tolist(), (w / w.sum()).tolist()))


@numba.njit(cache=True)
def _walk_kernel(nbr, coords, weights, v, frontier, margin, uniforms, path, offset):
    """Advance from vertex ``v`` consuming one uniform per step.

    Writes visited ids to ``path[offset + 1 + i]``.  Stops early, before
    stepping, when ``v`` is within L1 distance ``margin`` of ``frontier``
    (``margin < 0`` disables the check).  Returns (steps taken, vertex,
    stopped_for_extension).
    """
    n_dirs = nbr.shape[1]
    d = coords.shape[1]
    m = uniforms.shape[0]
    i = 0
    while i < m:
        if margin >= 0:
            gap = 0
            for j in range(d):
                gap += abs(coords[v, j] - coords[frontier, j])
            if gap <= margin:
                return i, v, True
        total = 0.0
        for k in range(n_dirs):
            if nbr[v, k] >= 0:
                total += weights[k]
        u = uniforms[i] * total
        acc = 0.0
        nxt = -1
        for k in range(n_dirs):
            if nbr[v, k] >= 0:
                acc += weights[k]
                nxt = nbr[v, k]
                if u < acc:
                    break
        v = nxt
        path[offset + 1 + i] = v
        i += 1
    return i, v, False


@dataclass
class NestedWalkRun:
    path: np.ndarray  # vertex ids of the layer-1 walk, length n + 1
    graph: TraceGraph
    seed: RandomSeed
    extensions: int = 0
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.path) - 1

    @property
    def positions(self) -> np.ndarray:
        return self.graph.coords[self.path]

    def position_at(self, t: int) -> np.ndarray:
        return self.graph.coords[self.path[t]]

    @property
    def trace_size(self) -> int:
        return self.graph.n_vertices


def run_on_graph(graph: TraceGraph, dist1: StepDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Run the layer-1 walk on a frozen graph; returns vertex ids."""
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = graph.vertex_id(np.zeros(graph.d, dtype=np.int64))
    w = np.ascontiguousarray(dist1.weights)
    done, v = 0, int(path[0])
    while done < n:
        u = rng.random(min(UNIFORM_BLOCK, n - done))
        k, v, _ = _walk_kernel(graph.neighbour_table, graph.coords, w, v, 0, -1, u, path, done)
        done += k
    return path


def run_nested_walk(
    dist0: StepDistribution,
    dist1: StepDistribution,
    n: int,
    seed,
    margin: int | None = None,
    min_extension: int = MIN_EXTENSION,
    vertex_budget: int = DEFAULT_VERTEX_BUDGET,
) -> NestedWalkRun:
    """Run ``n`` steps of the layer-1 walk on a trace grown on demand.

    The trace starts with ``min_extension`` steps of the layer-0 walk; while
    the layer-1 walk sits within ``margin`` lattice steps (default ``2d``) of
    the trace's final point, the trace is extended by
    ``max(min_extension, current length)`` steps before the next move.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    seed = as_seed(seed)
    margin = 2 * dist0.d if margin is None else margin
    graph = TraceGraph.generate(dist0, min_extension, seed, vertex_budget=vertex_budget)
    rng1 = seed.generator(X1_STREAM)
    w = np.ascontiguousarray(dist1.weights)
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = 0
    v = 0
    done = 0
    extensions = 0
    while done < n:
        block = min(UNIFORM_BLOCK, n - done)
        u = rng1.random(block)
        used = 0
        while used < block:
            k, v, need = _walk_kernel(
                graph.neighbour_table, graph.coords, w, v, graph.end_vertex, margin,
                u[used:], path, done + used,
            )
            used += k
            if need:
                graph.extend(max(min_extension, graph.steps))
                extensions += 1
        done += block
    return NestedWalkRun(path, graph, seed, extensions)


@dataclass(frozen=True)
class VelocityEstimate:
    vhat: np.ndarray
    stderr: np.ndarray
    parallel: float
    parallel_stderr: float
    orthogonal_norm: float
    orthogonal_stderr: float
    replicas: int
    n: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replicas": self.replicas,
            "vhat": self.vhat.tolist(),
            "stderr": self.stderr.tolist(),
            "parallel": self.parallel,
            "parallel_stderr": self.parallel_stderr,
            "orthogonal_norm": self.orthogonal_norm,
            "orthogonal_stderr": self.orthogonal_stderr,
        }


def _replica_endpoints(args):
    dist0, dist1, horizons, seed, min_extension, vertex_budget = args
    run = run_nested_walk(dist0, dist1, max(horizons), seed,
                          min_extension=min_extension, vertex_budget=vertex_budget)
    return np.stack([run.position_at(t) for t in horizons]), run.graph.n_vertices


def simulate_endpoints(
    dist0: StepDistribution,
    dist1: StepDistribution,
    horizons,
    replicas: int,
    seed,
    workers: int = 1,
    min_extension: int = MIN_EXTENSION,
    vertex_budget: int = DEFAULT_VERTEX_BUDGET,
) -> np.ndarray:
    """Positions of independent layer-1 walks at each horizon.

    Replica ``r`` uses stream ``r`` of ``seed``; one run per replica reaches
    the largest horizon and is read at the smaller ones.  Returns an array
    of shape ``(replicas, len(horizons), d)``.
    """
    horizons = [int(h) for h in horizons]
    base = as_seed(seed)
    jobs = [(dist0, dist1, horizons, base.replica(r), min_extension, vertex_budget)
            for r in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica_endpoints, jobs))
    else:
        results = [_replica_endpoints(j) for j in jobs]
    return np.stack([r[0] for r in results])


def _orthonormal_complement(u: np.ndarray) -> np.ndarray:
    """Columns spanning the orthogonal complement of unit vector ``u``."""
    d = len(u)
    if d == 1:
        return np.zeros((1, 0))
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(d)]))
    return q[:, 1:d]


def velocity_from_positions(positions: np.ndarray, n: int, direction) -> VelocityEstimate:
    """Endpoint estimator ``X_n / n`` with replica standard errors.

    ``positions`` has shape ``(replicas, d)``; components are split along
    the unit vector of ``direction`` and its orthogonal complement.
    """
    v = np.asarray(positions, dtype=np.float64) / n
    r = len(v)
    if r < 2:
        raise ValueError("need at least two replicas for a standard error")
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    se = v.std(axis=0, ddof=1) / math.sqrt(r)
    par = v @ u
    orth = v @ _orthonormal_complement(u)
    orth_mean = orth.mean(axis=0)
    orth_se = orth.std(axis=0, ddof=1) / math.sqrt(r) if orth.shape[1] else np.zeros(0)
    return VelocityEstimate(
        vhat=v.mean(axis=0),
        stderr=se,
        parallel=float(par.mean()),
        parallel_stderr=float(par.std(ddof=1) / math.sqrt(r)),
        orthogonal_norm=float(np.linalg.norm(orth_mean)),
        orthogonal_stderr=float(np.sqrt(np.sum(orth_se**2))),
        replicas=r,
        n=n,
    )


def estimate_velocity(
    dist0: StepDistribution,
    dist1: StepDistribution,
    n: int,
    replicas: int,
    seed,
    workers: int = 1,
    **kwargs,
) -> VelocityEstimate:
    if replicas < 2:
        raise ValueError("replicas must be >= 2")
    pos = simulate_endpoints(dist0, dist1, [n], replicas, seed, workers, **kwargs)
    return velocity_from_positions(pos[:, 0], n, drift(dist0))


def estimate_velocity_horizons(
    dist0: StepDistribution,
    dist1: StepDistribution,
    horizons,
    replicas: int,
    seed,
    workers: int = 1,
    **kwargs,
) -> dict[int, VelocityEstimate]:
    """Velocity estimates at several horizons from the same replica runs."""
    pos = simulate_endpoints(dist0, dist1, horizons, replicas, seed, workers, **kwargs)
    d0 = drift(dist0)
    return {int(h): velocity_from_positions(pos[:, i], int(h), d0) for i, h in enumerate(horizons)}
