"""Lattice geometry, step distributions and seeded nearest-neighbour walks.

Directions of Z^d are indexed ``0 .. 2d-1`` in the order
``(+e1, -e1, +e2, -e2, ..., +ed, -ed)``; direction ``k`` moves along axis
``k // 2`` with sign ``+1`` when ``k`` is even.  The opposite of ``k`` is
``k ^ 1``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    NegativeWeight,
    NonPositiveFirstDriftLayerZero,
    NonUnitIncrement,
    NotNormalized,
    ZeroWeightLayerOne,
)

INPUT_TOLERANCE = 1e-9
SUM_TOLERANCE = 1e-12


class Layer(str, enum.Enum):
    ZERO = "layer-0"
    ONE = "layer-1"


@lru_cache(maxsize=None)
def _unit_vectors(d: int) -> np.ndarray:
    units = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        units[2 * j, j] = 1
        units[2 * j + 1, j] = -1
    units.setflags(write=False)
    return units


def unit_vectors(d: int) -> np.ndarray:
    """Return the ``(2d, d)`` table of signed unit vectors in direction order."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return _unit_vectors(d)


def direction_index(step) -> int:
    """Map a signed unit vector to its direction index."""
    step = np.asarray(step, dtype=np.int64)
    nz = np.flatnonzero(step)
    if len(nz) != 1 or abs(step[nz[0]]) != 1:
        raise NonUnitIncrement(f"{step.tolist()} is not a signed unit vector")
    j = int(nz[0])
    return 2 * j + (0 if step[j] > 0 else 1)


def direction_name(k: int) -> str:
    return f"{'+' if k % 2 == 0 else '-'}e{k // 2 + 1}"


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """Probability weights on the 2d signed unit vectors.

    Construct through :func:`validate_distribution` unless the weights are
    already exactly normalised (for example a Doob-transformed law).
    """

    weights: np.ndarray
    layer: Layer | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) < 2 or len(w) % 2:
            raise ValueError(f"expected 2d weights, got shape {w.shape}")
        if np.any(w < 0):
            raise NegativeWeight(f"negative weight in {w.tolist()}")
        if abs(w.sum() - 1.0) > SUM_TOLERANCE:
            raise NotNormalized(f"weights sum to {float(w.sum())!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        cum = np.cumsum(w)
        cum[-1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @property
    def d(self) -> int:
        return len(self.weights) // 2

    def __eq__(self, other):
        if not isinstance(other, StepDistribution):
            return NotImplemented
        return self.layer == other.layer and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.layer, self.weights.tobytes()))

    def __repr__(self):
        tag = self.layer.value if self.layer else "untagged"
        return f"StepDistribution({self.weights.tolist()}, {tag})"

    def sample_directions(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. direction indices.

        One uniform is consumed per step, so drawing ``a`` then ``b`` steps
        from a generator yields the same directions as drawing ``a + b``.
        """
        u = rng.random(n)
        return np.searchsorted(self._cum, u, side="right").astype(np.int8)


def validate_distribution(weights, layer: Layer | str | None = None) -> StepDistribution:
    """Check raw weights and return a renormalised :class:`StepDistribution`.

    Input sums may deviate from one by up to 1e-9 (decimal literals in config
    files); the accepted weights are divided by their sum.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) < 2 or len(w) % 2:
        raise ValueError(f"need 2d weights for some d >= 1, got {len(w)} values")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight in {w.tolist()}")
    total = w.sum()
    if abs(total - 1.0) > INPUT_TOLERANCE:
        raise NotNormalized(f"weights sum to {float(total)!r}, not 1")
    layer = Layer(layer) if layer is not None else None
    if layer is Layer.ONE and np.any(w <= 0):
        raise ZeroWeightLayerOne("every layer-1 weight must be strictly positive")
    w = w / total
    if layer is Layer.ZERO and w[0] - w[1] <= 0:
        raise NonPositiveFirstDriftLayerZero(
            f"layer-0 drift along e1 is {w[0] - w[1]!r}; must be > 0"
        )
    return StepDistribution(w, layer)


def family_weights(d: int, k: int, gamma: float) -> np.ndarray:
    """Weights that boost the first ``k`` positive directions by ``gamma``.

    p(e) = (1 + (gamma - 1) [e in {e1..ek}]) / (2d + k (gamma - 1))
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    w = np.ones(2 * d)
    w[0 : 2 * k : 2] = gamma
    return w / (2 * d + k * (gamma - 1.0))


def drift(dist: StepDistribution) -> np.ndarray:
    """Mean step, sum over e of e * p(e)."""
    w = dist.weights
    return w[0::2] - w[1::2]


@dataclass(frozen=True)
class RandomSeed:
    """Top-level seed plus replica stream id.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys
    and drive the counter-based Philox generator, so ``(seed, stream, *sub)``
    names an independent, reproducible stream.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stream < 0:
            raise ValueError("stream id must be nonnegative")

    def generator(self, *subkeys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *subkeys))
        return np.random.Generator(np.random.Philox(ss))

    def replica(self, stream: int) -> "RandomSeed":
        return RandomSeed(self.seed, stream)


def as_seed(seed) -> RandomSeed:
    if isinstance(seed, RandomSeed):
        return seed
    return RandomSeed(int(seed))


def directions_to_positions(dirs: np.ndarray, d: int, start=None) -> np.ndarray:
    """Cumulate direction indices into ``len(dirs) + 1`` lattice positions."""
    units = unit_vectors(d)
    out = np.empty((len(dirs) + 1, d), dtype=np.int64)
    out[0] = 0 if start is None else start
    if len(dirs):
        np.cumsum(units[dirs], axis=0, out=out[1:])
        out[1:] += out[0]
    return out


def sample_walk(dist: StepDistribution, n: int, seed) -> np.ndarray:
    """Trajectory of ``n`` i.i.d. steps from the origin, shape ``(n + 1, d)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = as_seed(seed).generator()
    return directions_to_positions(dist.sample_directions(rng, n), dist.d)


def check_unit_increments(trajectory: np.ndarray) -> np.ndarray:
    """Return direction indices of a trajectory, raising on any non-unit jump."""
    traj = np.asarray(trajectory, dtype=np.int64)
    if traj.ndim == 1:
        traj = traj[:, None]
    inc = np.diff(traj, axis=0)
    if len(inc) == 0:
        return np.empty(0, dtype=np.int8)
    l1 = np.abs(inc).sum(axis=1)
    bad = np.flatnonzero(l1 != 1)
    if len(bad):
        i = int(bad[0])
        raise NonUnitIncrement(
            f"step {i}: {traj[i].tolist()} -> {traj[i + 1].tolist()} is not a unit increment"
        )
    axis = np.argmax(np.abs(inc), axis=1)
    sign = inc[np.arange(len(inc)), axis]
    return (2 * axis + (sign < 0)).astype(np.int8)
