"""Monte Carlo checks of the closed-form predictions.

Vectorised experiments split replicas into fixed blocks of ``BLOCK``
walks; block ``b`` draws from stream ``b`` of the top-level seed, so results
depend only on the seed and the replica count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nested
from .analysis import AnalyticProfile, classify
from .errors import (
    AlphaInfinite,
    DegenerateGrid,
    InsufficientGrid,
    ResistanceOverflow,
    TooFewSamples,
)
from .reports import ExperimentReport
from .trace import TraceGraph, cut_points
from .walk import StepDistribution, as_seed, drift, sample_walk, unit_vectors

BLOCK = 16_384
TIME_CHUNK = 256
OVERFLOW_LOG = math.log(1e300)
DEGENERATE_LOG_BETA = 1e-6
_EPS = 1e-9


def _projections(dist: StepDistribution, ell) -> np.ndarray:
    return unit_vectors(dist.d) @ np.asarray(ell, dtype=np.float64)


def saturation_horizon(dist0: StepDistribution, ell, x_max: float) -> int:
    """Walk length after which the running minimum down to ``-x_max`` has settled."""
    speed = float(np.dot(drift(dist0), ell))
    if speed <= 0:
        raise ValueError("drift . ell must be positive")
    return int(math.ceil(50 * x_max / speed))


def weighted_slope(x, y, sigma=None, cov=None) -> tuple[float, float, float]:
    """Generalised least squares line ``y = a + b x``; returns (b, se(b), a).

    Pass per-point ``sigma`` for independent errors or a full ``cov``.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    cov = np.diag(np.asarray(sigma, dtype=np.float64) ** 2) if cov is None else np.asarray(cov)
    prec = np.linalg.inv(cov)
    X = np.column_stack([np.ones_like(x), x])
    beta_cov = np.linalg.inv(X.T @ prec @ X)
    coef = beta_cov @ (X.T @ prec @ y)
    return float(coef[1]), float(math.sqrt(beta_cov[1, 1])), float(coef[0])


def nested_log_covariance(p, replicas: int) -> np.ndarray:
    """Covariance of log p-hat for nested events (event i+1 inside event i).

    Cov(p_i, p_j) = (p_max(i,j) - p_i p_j) / R, then the delta method.
    """
    p = np.asarray(p, dtype=np.float64)
    joint = p[np.maximum.outer(np.arange(len(p)), np.arange(len(p)))]
    return (joint - np.outer(p, p)) / replicas / np.outer(p, p)


def backtrack_minimum(dist0: StepDistribution, ell, n: int, seed) -> float:
    """min over t <= n of X_t . ell for one walk (0 at t = 0, so never positive)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    traj = sample_walk(dist0, n, seed)
    return float(min(0.0, (traj @ np.asarray(ell, dtype=np.float64)).min()))


def projection_minima(dist0: StepDistribution, ell, n: int, replicas: int, seed) -> np.ndarray:
    """Running minimum of X_t . ell over ``n`` steps for each of ``replicas`` walks."""
    base = as_seed(seed)
    proj = _projections(dist0, ell)
    cum = np.cumsum(dist0.weights)
    cum[-1] = 1.0
    out = np.empty(replicas)
    for b, start in enumerate(range(0, replicas, BLOCK)):
        m = min(BLOCK, replicas - start)
        rng = base.replica(b).generator()
        x = np.zeros(m)
        lo = np.zeros(m)
        left = n
        while left > 0:
            c = min(TIME_CHUNK, left)
            steps = proj[np.searchsorted(cum, rng.random((m, c)), side="right")]
            path = x[:, None] + np.cumsum(steps, axis=1)
            np.minimum(lo, path.min(axis=1), out=lo)
            x = path[:, -1]
            left -= c
        out[start : start + m] = lo
    return out


def estimate_backtrack_exponent(
    dist0: StepDistribution,
    ell,
    n: int | None,
    replicas: int,
    x_grid,
    seed,
) -> ExperimentReport:
    """Empirical P(min_t X_t . ell <= -x) per x and the fitted decay rate.

    The slope of ``-log P`` against ``x`` estimates ``log alpha``.  With
    ``n=None`` the walk length is :func:`saturation_horizon` for the largest x.
    """
    xs = np.asarray(x_grid, dtype=np.float64)
    if len(xs) < 2 or np.any(xs <= 0) or np.any(np.diff(xs) <= 0):
        raise DegenerateGrid("x grid must hold >= 2 positive increasing values")
    if n is None:
        n = saturation_horizon(dist0, ell, xs[-1])
    minima = projection_minima(dist0, ell, n, replicas, seed)
    table = []
    for x in xs:
        hits = int(np.count_nonzero(minima <= -x + _EPS))
        p = hits / replicas
        table.append({"x": float(x), "hits": hits, "probability": p,
                      "stderr": math.sqrt(p * (1 - p) / replicas)})
    results = {}
    flags = []
    ok = [r for r in table if r["hits"] > 0]
    if len(ok) >= 2:
        probs = [r["probability"] for r in ok]
        slope, se, icpt = weighted_slope([r["x"] for r in ok], -np.log(probs),
                                         cov=nested_log_covariance(probs, replicas))
        results.update(slope=slope, slope_stderr=se, intercept=icpt)
    elif not ok:
        results.update(slope=math.inf, slope_stderr=0.0)
        flags.append("no back-tracking observed: exponent is +inf")
    else:
        results.update(slope=math.nan, slope_stderr=math.nan)
        flags.append("fewer than two grid points with hits")
    return ExperimentReport(
        name="backtrack",
        results=results,
        samples=replicas,
        seed=as_seed(seed).seed,
        config={"n": n, "replicas": replicas, "x_grid": xs.tolist(), "ell": list(map(float, ell))},
        table=table,
        flags=flags,
    )


def projection_lattice_step(ell) -> float | None:
    """Spacing of the values of x . ell over Z^d when ``ell`` lies on an axis."""
    ell = np.asarray(ell, dtype=np.float64)
    nz = np.flatnonzero(np.abs(ell) > 1e-15)
    return float(abs(ell[nz[0]])) if len(nz) == 1 else None


@dataclass(frozen=True)
class TailSamples:
    """Samples of beta^{-min_t X_t . ell}, stored in log form to avoid overflow."""

    log_values: np.ndarray
    log_beta: float
    lattice_step: float | None
    degenerate: bool

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def __len__(self):
        return len(self.log_values)


def escape_tail_samples(
    dist0: StepDistribution,
    ell,
    log_beta: float,
    n: int,
    replicas: int,
    seed,
) -> TailSamples:
    """Escape-time proxies beta^{-min X . ell}, one per independent walk.

    ``lattice_step`` is the spacing of the log samples when they live on a
    lattice (axis-aligned ``ell``); it is ``None`` otherwise.
    """
    if log_beta <= 0:
        raise ValueError("log_beta must be positive")
    minima = projection_minima(dist0, ell, n, replicas, seed)
    step = projection_lattice_step(ell)
    return TailSamples(
        log_values=-log_beta * minima,
        log_beta=log_beta,
        lattice_step=None if step is None else step * log_beta,
        degenerate=log_beta < DEGENERATE_LOG_BETA,
    )


def _hill(log_sorted_desc: np.ndarray, k: int, lattice_step: float | None):
    u = log_sorted_desc[k]
    if lattice_step is None:
        h = float(np.mean(log_sorted_desc[:k] - u))
        kappa = math.inf if h <= 0 else 1.0 / h
        return kappa, kappa / math.sqrt(k), k
    # lattice data: exceedances strictly above the threshold level, minus one
    # lattice step, are geometric; invert their mean
    exc = log_sorted_desc[:k] - u
    exc = exc[exc > 0.5 * lattice_step]
    kk = len(exc)
    if kk == 0:
        return math.inf, math.inf, 0
    h = float(exc.mean())
    if h <= lattice_step * (1 + 1e-12):
        return math.inf, math.inf, kk
    kappa = math.log(h / (h - lattice_step)) / lattice_step
    q = math.exp(-kappa * lattice_step)
    se = (1 - q) / (lattice_step * math.sqrt(q * kk))
    return kappa, se, kk


def hill_tail_index(samples, k: int | None = None, lattice_step="auto") -> ExperimentReport:
    """Hill estimate of the power-law tail index of ``samples``.

    kappa = [ (1/k) sum_{i<=k} log(s_(i) / s_(k+1)) ]^{-1} over the ``k``
    largest values, with standard error kappa / sqrt(k).  ``k`` defaults to
    ceil(sqrt(N)); the estimate at k/2 and 2k is reported in the table.

    When the log-samples sit on a lattice of spacing ``lattice_step`` the
    plain estimator is inconsistent (ties at the threshold); the lattice form
    uses the strict exceedances, whose excess over the threshold is one
    lattice step plus a geometric count, and inverts their mean:
    kappa = log(H / (H - step)) / step.  It tends to the plain estimator as
    the step shrinks.  ``"auto"`` takes the step from :class:`TailSamples`.
    """
    if isinstance(samples, TailSamples):
        logs = np.asarray(samples.log_values, dtype=np.float64)
        if lattice_step == "auto":
            lattice_step = samples.lattice_step
        flags = ["degenerate bias: samples are all close to 1"] if samples.degenerate else []
    else:
        s = np.asarray(samples, dtype=np.float64)
        if np.any(s <= 0):
            raise ValueError("samples must be positive")
        logs = np.log(s)
        flags = []
        if lattice_step == "auto":
            lattice_step = None
    n = len(logs)
    if k is None:
        k = int(math.ceil(math.sqrt(n)))
    if k < 10 or n < 10 * k:
        raise TooFewSamples(f"need k >= 10 and N >= 10k, got k={k}, N={n}")
    desc = np.sort(logs)[::-1]
    table = []
    for kk in sorted({max(10, k // 2), k, min(2 * k, n - 1)}):
        kappa, se, used = _hill(desc, kk, lattice_step)
        table.append({"k": kk, "exceedances": used, "kappa": kappa, "stderr": se})
    kappa, se, used = _hill(desc, k, lattice_step)
    return ExperimentReport(
        name="tail",
        results={"kappa": kappa, "kappa_stderr": se, "k": k, "exceedances": used,
                 "estimator": "hill" if lattice_step is None else "lattice-hill"},
        samples=n,
        seed=-1,
        config={"k": k, "lattice_step": lattice_step},
        table=table,
        flags=flags,
    )


def resistance_partial_sums(
    dist0: StepDistribution,
    ell,
    log_beta: float,
    n: int,
    seed,
    log: bool = False,
) -> np.ndarray:
    """S_N = sum_{t <= N} beta^{-X_t . ell} for N = 0..n along one walk.

    With ``log=True`` returns ``log S_N``, which never overflows.  Otherwise
    raises :class:`ResistanceOverflow` (carrying the log series) once a sum
    passes 1e300.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    traj = sample_walk(dist0, n, seed)
    terms = -log_beta * (traj @ np.asarray(ell, dtype=np.float64))
    log_sums = np.logaddexp.accumulate(terms)
    if log:
        return log_sums
    if log_sums[-1] > OVERFLOW_LOG:
        raise ResistanceOverflow("partial resistance sum exceeds 1e300", log_sums)
    return np.exp(log_sums)


def resistance_growth(dist0, ell, log_beta, n_half: int, seed) -> float:
    """S_{2N} / S_N for one walk, computed in log space."""
    ls = resistance_partial_sums(dist0, ell, log_beta, 2 * n_half, seed, log=True)
    return float(math.exp(min(ls[2 * n_half] - ls[n_half], 700.0)))


def _cylinder_phase(rng, dist0, pos, alive, start, axis, ell, sign, h, w, max_steps):
    """Advance live walks until their ell-progress reaches ``sign * h``.

    A walk dies if it leaves the cylinder of radius ``w`` about ``axis``
    through ``start`` (or falls more than ``w`` behind ``start`` along it),
    or if it needs more than ``max_steps`` steps.
    """
    units = unit_vectors(dist0.d)
    act = np.flatnonzero(alive)
    start = start.astype(np.float64)
    for _ in range(max_steps):
        if len(act) == 0:
            return
        p = pos[act] + units[dist0.sample_directions(rng, len(act))]
        rel = p - start[act]
        s = rel @ axis
        orth2 = np.einsum("ij,ij->i", rel, rel) - s * s
        inside = (orth2 <= w * w + _EPS) & (s >= -w - _EPS)
        reached = inside & (sign * (rel @ ell) >= h - _EPS)
        pos[act] = p
        alive[act[~inside]] = False
        act = act[inside & ~reached]
    alive[act] = False


def trap_event_frequency(
    dist0: StepDistribution,
    profile: AnalyticProfile,
    h_grid,
    w: float,
    replicas: int,
    seed,
) -> ExperimentReport:
    """Frequency of the three-phase back-tracking event, per depth ``h``.

    Phase 1 climbs ``h`` in ell-coordinate inside a cylinder along drift0,
    phase 2 descends ``h`` inside a cylinder along the Doob drift, phase 3
    climbs ``h`` again along drift0.  ``-log frequency`` should grow like
    ``h log alpha``.
    """
    if not math.isfinite(profile.alpha):
        raise AlphaInfinite("no back-tracking is possible: alpha is infinite")
    hs = [int(h) for h in h_grid]
    if any(h < 1 for h in hs):
        raise ValueError("depths must be >= 1")
    base = as_seed(seed)
    cfg = {"h_grid": hs, "w": w, "replicas": replicas}
    if w < 1:
        table = [{"h": h, "hits": 0, "frequency": 0.0, "stderr": 0.0} for h in hs]
        return ExperimentReport("trap", {"slope": math.nan, "slope_stderr": math.nan,
                                         "log_alpha": math.log(profile.alpha)},
                                replicas, base.seed, cfg, table,
                                ["degenerate cylinder: width below one lattice step"])
    ell = profile.ell
    u0 = profile.drift0 / np.linalg.norm(profile.drift0)
    u2 = profile.doob_drift / np.linalg.norm(profile.doob_drift)
    speed = float(np.dot(profile.drift0, ell))
    table = []
    for hi, h in enumerate(hs):
        max_steps = int(50 * h / speed) + 1000
        hits = 0
        for b, start in enumerate(range(0, replicas, BLOCK)):
            m = min(BLOCK, replicas - start)
            rng = base.replica(b).generator(100 + hi)
            pos = np.zeros((m, dist0.d), dtype=np.int64)
            alive = np.ones(m, dtype=bool)
            for axis, sign in ((u0, 1.0), (u2, -1.0), (u0, 1.0)):
                origin = pos.copy()
                _cylinder_phase(rng, dist0, pos, alive, origin, axis, ell, sign, h, w, max_steps)
            hits += int(alive.sum())
        f = hits / replicas
        table.append({"h": h, "hits": hits, "frequency": f,
                      "stderr": math.sqrt(f * (1 - f) / replicas)})
    results = {"log_alpha": math.log(profile.alpha)}
    ok = [r for r in table if r["hits"] > 0]
    if len(ok) >= 2:
        slope, se, _ = weighted_slope([r["h"] for r in ok],
                                      [-math.log(r["frequency"]) for r in ok],
                                      [r["stderr"] / r["frequency"] for r in ok])
        results.update(slope=slope, slope_stderr=se)
    else:
        results.update(slope=math.nan, slope_stderr=math.nan)
    freqs = [r["frequency"] for r in table]
    results["decreasing"] = all(b < a for a, b in zip(freqs, freqs[1:]))
    return ExperimentReport("trap", results, replicas, base.seed, cfg, table)


@dataclass(frozen=True)
class PotentialSeries:
    indices: np.ndarray
    values: np.ndarray


def cutpoint_potential(graph: TraceGraph, ell, log_beta: float, tail_margin: int = 0) -> PotentialSeries:
    """-log(beta) * (X_c . ell) at the cut-points c of the trace, in trajectory order."""
    if log_beta <= 0:
        raise ValueError("the potential needs log_beta > 0")
    cp = cut_points(graph, tail_margin=tail_margin)
    values = -log_beta * (cp.positions @ np.asarray(ell, dtype=np.float64))
    return PotentialSeries(cp.indices.copy(), values)


def fluctuation_exponent(
    dist0: StepDistribution,
    dist1: StepDistribution,
    n_grid,
    replicas: int,
    seed,
    workers: int = 1,
    **kwargs,
) -> ExperimentReport:
    """Exploratory displacement-scaling probe along drift0.

    For kappa < 1 fits log median(X_n . u) against log n, u the unit drift0;
    otherwise fits log median |X_n . u - mean_n| against log n.  The expected
    slopes (kappa, 1/kappa, 1/2) come from a conjecture, so the report is
    tagged exploratory.
    """
    ns = np.asarray(n_grid, dtype=np.int64)
    if len(ns) < 4:
        raise InsufficientGrid("need at least four horizons")
    if np.any(ns <= 0) or np.any(np.diff(ns) <= 0):
        raise InsufficientGrid("horizons must be positive and increasing")
    ratios = ns[1:] / ns[:-1]
    if ratios.max() > 1.1 * ratios.min():
        raise InsufficientGrid("horizons must form a geometric grid")
    profile = classify(dist0, dist1)
    kappa = profile.kappa
    u = profile.drift0 / np.linalg.norm(profile.drift0)
    pos = nested.simulate_endpoints(dist0, dist1, ns.tolist(), replicas, seed, workers, **kwargs)
    proj = pos @ u
    centred = not kappa < 1
    table = []
    for i, n in enumerate(ns):
        x = proj[:, i]
        stat = float(np.median(np.abs(x - x.mean()))) if centred else float(np.median(x))
        table.append({"n": int(n), "statistic": stat, "mean": float(x.mean())})
    good = [r for r in table if r["statistic"] > 0]
    slope = math.nan
    if len(good) >= 2:
        slope = float(np.polyfit(np.log([r["n"] for r in good]),
                                 np.log([r["statistic"] for r in good]), 1)[0])
    if kappa < 1:
        expected = kappa
    elif kappa < 2:
        expected = 1 / kappa
    else:
        expected = 0.5
    return ExperimentReport(
        name="fluctuations",
        results={"slope": slope, "expected_slope": expected, "kappa": kappa,
                 "statistic": "centred" if centred else "raw", "exploratory": True},
        samples=replicas,
        seed=as_seed(seed).seed,
        config={"n_grid": ns.tolist(), "replicas": replicas},
        table=table,
        flags=["exploratory: tests a conjectured scaling, not a theorem"],
    )
