"""Trace graph of a nearest-neighbour walk, grown lazily on demand.

Vertices get dense integer ids in order of first visit (the origin is id 0).
Adjacency is kept as a ``(V, 2d)`` table of neighbour ids, ``-1`` where the
edge is absent; the per-vertex bit mask is derived from it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoGeneratorState, TooSmall, UnknownVertex, VertexBudgetExceeded
from .walk import (
    RandomSeed,
    StepDistribution,
    as_seed,
    check_unit_increments,
    directions_to_positions,
)

DEFAULT_VERTEX_BUDGET = 10**8
DUMP_VERSION = 1


class TraceGraph:
    """Vertex and edge sets of a walk's trajectory.

    A graph made by :meth:`generate` remembers its step law and RNG stream
    and can be extended; one made from a fixed trajectory is frozen.
    """

    def __init__(self, d: int, vertex_budget: int = DEFAULT_VERTEX_BUDGET):
        self.d = d
        self.vertex_budget = vertex_budget
        self._index: dict[tuple, int] = {}
        self._coords = np.zeros((0, d), dtype=np.int64)
        self._nbr = np.full((0, 2 * d), -1, dtype=np.int64)
        self._first = np.zeros(0, dtype=np.int64)
        self.n_vertices = 0
        self._traj = np.zeros((0, d), dtype=np.int64)
        self._traj_ids = np.zeros(0, dtype=np.int64)
        self._traj_len = 0
        self._end_vertex = 0
        self.dist: StepDistribution | None = None
        self.seed: RandomSeed | None = None
        self._rng: np.random.Generator | None = None

    # construction

    @classmethod
    def from_trajectory(cls, trajectory, vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> "TraceGraph":
        traj = np.asarray(trajectory, dtype=np.int64)
        if traj.ndim == 1:
            traj = traj[:, None]
        if len(traj) == 0:
            raise TooSmall("empty trajectory")
        dirs = check_unit_increments(traj)
        g = cls(traj.shape[1], vertex_budget)
        g._start(traj[0])
        g._append(dirs)
        return g

    @classmethod
    def generate(
        cls,
        dist: StepDistribution,
        n: int,
        seed,
        vertex_budget: int = DEFAULT_VERTEX_BUDGET,
    ) -> "TraceGraph":
        """Trace of an ``n``-step walk from the origin that can be extended later."""
        g = cls(dist.d, vertex_budget)
        g.dist = dist
        g.seed = as_seed(seed)
        g._rng = g.seed.generator()
        g._start(np.zeros(dist.d, dtype=np.int64))
        g.extend(n)
        return g

    def extend(self, extra_steps: int) -> "TraceGraph":
        """Append ``extra_steps`` steps drawn from the stored RNG stream, in place."""
        if self._rng is None:
            raise NoGeneratorState("graph was built from a fixed trajectory")
        if extra_steps < 0:
            raise ValueError("extra_steps must be >= 0")
        if extra_steps:
            self._append(self.dist.sample_directions(self._rng, extra_steps))
        return self

    def _start(self, origin):
        key = tuple(int(c) for c in origin)
        self._index[key] = 0
        self._grow_vertices(1)
        self._coords[0] = origin
        self._first[0] = 0
        self.n_vertices = 1
        self._grow_traj(1)
        self._traj[0] = origin
        self._traj_ids[0] = 0
        self._traj_len = 1
        self._end_vertex = 0

    def _grow_vertices(self, need: int):
        cap = len(self._coords)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 1024)
        coords = np.zeros((new_cap, self.d), dtype=np.int64)
        coords[:cap] = self._coords
        nbr = np.full((new_cap, 2 * self.d), -1, dtype=np.int64)
        nbr[:cap] = self._nbr
        first = np.zeros(new_cap, dtype=np.int64)
        first[:cap] = self._first
        self._coords, self._nbr, self._first = coords, nbr, first

    def _grow_traj(self, need: int):
        cap = len(self._traj)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 1024)
        traj = np.zeros((new_cap, self.d), dtype=np.int64)
        traj[:cap] = self._traj
        ids = np.zeros(new_cap, dtype=np.int64)
        ids[:cap] = self._traj_ids
        self._traj, self._traj_ids = traj, ids

    def _append(self, dirs: np.ndarray):
        m = len(dirs)
        if m == 0:
            return
        t0 = self._traj_len
        pos = directions_to_positions(dirs, self.d, self._traj[t0 - 1])[1:]
        ids = np.empty(m, dtype=np.int64)
        index = self._index
        get = index.get
        nv = self.n_vertices
        budget = self.vertex_budget
        fresh = []
        for i, key in enumerate(map(tuple, pos.tolist())):
            v = get(key)
            if v is None:
                v = nv
                if v >= budget:
                    raise VertexBudgetExceeded(
                        f"trace would exceed the vertex budget of {budget}"
                    )
                index[key] = v
                nv += 1
                fresh.append(i)
            ids[i] = v
        self._grow_vertices(nv)
        fresh = np.asarray(fresh, dtype=np.int64)
        self._coords[self.n_vertices : nv] = pos[fresh]
        self._first[self.n_vertices : nv] = t0 + fresh
        self.n_vertices = nv

        prev = np.empty(m, dtype=np.int64)
        prev[0] = self._traj_ids[t0 - 1]
        prev[1:] = ids[:-1]
        dirs = dirs.astype(np.int64)
        self._nbr[prev, dirs] = ids
        self._nbr[ids, dirs ^ 1] = prev

        self._grow_traj(t0 + m)
        self._traj[t0 : t0 + m] = pos
        self._traj_ids[t0 : t0 + m] = ids
        self._traj_len = t0 + m
        self._end_vertex = int(ids[-1])

    # queries

    @property
    def frozen(self) -> bool:
        return self._rng is None

    @property
    def trajectory(self) -> np.ndarray:
        return self._traj[: self._traj_len]

    @property
    def trajectory_vertex_ids(self) -> np.ndarray:
        return self._traj_ids[: self._traj_len]

    @property
    def steps(self) -> int:
        return self._traj_len - 1

    @property
    def coords(self) -> np.ndarray:
        return self._coords[: self.n_vertices]

    @property
    def neighbour_table(self) -> np.ndarray:
        return self._nbr[: self.n_vertices]

    @property
    def first_visit(self) -> np.ndarray:
        return self._first[: self.n_vertices]

    @property
    def end_vertex(self) -> int:
        return self._end_vertex

    @property
    def frontier(self) -> np.ndarray:
        return self._coords[self._end_vertex]

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.neighbour_table >= 0)) // 2

    def vertex_id(self, x) -> int:
        key = tuple(int(c) for c in np.atleast_1d(x))
        try:
            return self._index[key]
        except KeyError:
            raise UnknownVertex(f"{list(key)} is not a vertex of the trace") from None

    def __contains__(self, x) -> bool:
        return tuple(int(c) for c in np.atleast_1d(x)) in self._index

    def masks(self) -> np.ndarray:
        """Adjacency bit masks for all vertices (bit k set iff direction k is an edge)."""
        bits = (self.neighbour_table >= 0).astype(np.int64)
        return (bits << np.arange(2 * self.d)).sum(axis=1)

    def mask(self, x) -> int:
        row = self._nbr[self.vertex_id(x)]
        return sum(1 << k for k in range(2 * self.d) if row[k] >= 0)

    def vertex_set(self) -> set[tuple]:
        return set(self._index)

    def edge_set(self) -> set[frozenset]:
        edges = set()
        coords = self.coords
        for v, row in enumerate(self.neighbour_table):
            for u in row[row >= 0]:
                edges.add(frozenset((tuple(coords[v].tolist()), tuple(coords[u].tolist()))))
        return edges


def build_trace(trajectory) -> TraceGraph:
    """Frozen trace graph of a fixed trajectory."""
    return TraceGraph.from_trajectory(trajectory)


def extend_trace(graph: TraceGraph, extra_steps: int) -> TraceGraph:
    return graph.extend(extra_steps)


def neighbors(graph: TraceGraph, x) -> frozenset[int]:
    """Direction indices ``k`` such that ``{x, x + e_k}`` is an edge."""
    row = graph._nbr[graph.vertex_id(x)]
    return frozenset(int(k) for k in np.flatnonzero(row >= 0))


@dataclass(frozen=True)
class CutPointList:
    """Cut vertices separating the origin from the last trajectory point.

    Sorted by ``indices``, the trajectory time of each vertex's first visit.
    """

    vertex_ids: np.ndarray
    positions: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


def _dfs_low(nbr: list[list[int]], root: int, n: int):
    """Iterative Hopcroft-Tarjan lowpoint DFS. Returns (disc, low, parent)."""
    disc = [-1] * n
    low = [0] * n
    parent = [-1] * n
    disc[root] = low[root] = 0
    clock = 1
    stack = [(root, iter(nbr[root]))]
    while stack:
        v, it = stack[-1]
        advanced = False
        for u in it:
            if u < 0:
                continue
            if disc[u] < 0:
                parent[u] = v
                disc[u] = low[u] = clock
                clock += 1
                stack.append((u, iter(nbr[u])))
                advanced = True
                break
            if u != parent[v] and disc[u] < low[v]:
                low[v] = disc[u]
        if not advanced:
            stack.pop()
            p = parent[v]
            if p >= 0 and low[v] < low[p]:
                low[p] = low[v]
    return disc, low, parent


def cut_points(graph: TraceGraph, tail_margin: int = 0) -> CutPointList:
    """Vertices whose removal disconnects the origin from the final point.

    Found with a lowpoint DFS rooted at the origin: a vertex ``v`` on the tree
    path to the final point separates the two iff the child ``c`` of ``v`` on
    that path has ``low[c] >= disc[v]``.  Cut-points first visited within
    ``tail_margin`` steps of the end of the trajectory are dropped, since the
    unrealised continuation of the walk may bypass them.
    """
    n = graph.n_vertices
    if n < 2:
        raise TooSmall("cut points need at least two vertices")
    root, target = 0, graph.end_vertex
    found = []
    if target != root:
        disc, low, parent = _dfs_low(graph.neighbour_table.tolist(), root, n)
        c = target
        while parent[c] >= 0:
            v = parent[c]
            if v != root and low[c] >= disc[v]:
                found.append(v)
            c = v
    ids = np.asarray(found, dtype=np.int64)
    first = graph.first_visit[ids]
    if tail_margin > 0:
        keep = first <= graph.steps - tail_margin
        ids, first = ids[keep], first[keep]
    order = np.argsort(first, kind="stable")
    ids, first = ids[order], first[order]
    return CutPointList(ids, graph.coords[ids].copy(), first)


# Binary dump, little-endian:
#   header  u8 version, u8 d, u64 vertex_count, u64 end_vertex
#   records vertex_count x (d x i64 coordinate, u64 first_visit, u16 mask)
# Records are in vertex-id order, so the first record is the origin.

_HEADER = struct.Struct("<BBQQ")


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("coords", "<i8", (d,)), ("first_visit", "<u8"), ("mask", "<u2")])


def dump_trace(graph: TraceGraph, path) -> None:
    if graph.d > 8:
        raise ValueError("dump format holds at most 16 directions per mask")
    rec = np.zeros(graph.n_vertices, dtype=_record_dtype(graph.d))
    rec["coords"] = graph.coords
    rec["first_visit"] = graph.first_visit
    rec["mask"] = graph.masks()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_VERSION, graph.d, graph.n_vertices, graph.end_vertex))
        fh.write(rec.tobytes())


def load_trace(path) -> TraceGraph:
    """Read a dump back as a frozen graph (no trajectory beyond first visits)."""
    raw = Path(path).read_bytes()
    version, d, count, end = _HEADER.unpack_from(raw)
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported trace dump version {version}")
    rec = np.frombuffer(raw, dtype=_record_dtype(d), count=count, offset=_HEADER.size)
    g = TraceGraph(d)
    g._grow_vertices(count)
    g.n_vertices = count
    g._coords[:count] = rec["coords"]
    g._first[:count] = rec["first_visit"].astype(np.int64)
    g._index = {tuple(c): i for i, c in enumerate(rec["coords"].tolist())}
    units = np.eye(d, dtype=np.int64)
    masks = rec["mask"].astype(np.int64)
    for k in range(2 * d):
        has = np.flatnonzero((masks >> k) & 1)
        step = units[k // 2] * (1 if k % 2 == 0 else -1)
        targets = g._coords[has] + step
        g._nbr[has, k] = [g._index[tuple(t)] for t in targets.tolist()]
    g._end_vertex = int(end)
    g._grow_traj(1)
    g._traj[0] = g._coords[end]
    g._traj_ids[0] = end
    g._traj_len = 1
    return g
