"""Closed-form quantities for the walk on the trace.

Conductance direction and strength of the layer-1 law, edge conductances,
the moment generating function of the backwards projected step, its
positive root, the Doob transform and the regime classifier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlphaNotRoot, NotAnEdgePair, NotTransient
from .walk import StepDistribution, drift, unit_vectors

BALANCE_TOLERANCE = 1e-14
BOUNDARY_TOLERANCE = 1e-9
ROOT_TOLERANCE = 1e-13


@dataclass(frozen=True)
class ConductanceDirection:
    ell: np.ndarray
    log_beta: float
    balanced: bool = False

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)


def log_ratios(dist1: StepDistribution) -> np.ndarray:
    w = dist1.weights
    return np.log(w[0::2]) - np.log(w[1::2])


def conductance_direction(dist1: StepDistribution) -> ConductanceDirection:
    """Unit vector and norm of ``(log p(e_j)/p(-e_j))_j``.

    A balanced law has no direction; ``e1`` is returned by convention with
    ``balanced=True``.
    """
    r = log_ratios(dist1)
    r[np.abs(r) < BALANCE_TOLERANCE] = 0.0
    norm = float(np.linalg.norm(r))
    if norm == 0.0:
        ell = np.zeros(dist1.d)
        ell[0] = 1.0
        return ConductanceDirection(ell, 0.0, balanced=True)
    return ConductanceDirection(r / norm, norm)


def _check_edge(x, y):
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape != y.shape or np.abs(y - x).sum() != 1:
        raise NotAnEdgePair(f"{x.tolist()} and {y.tolist()} are not lattice neighbours")
    return x, y


def log_edge_conductance(dist1: StepDistribution, x, y, direction: ConductanceDirection | None = None) -> float:
    x, y = _check_edge(x, y)
    cd = direction or conductance_direction(dist1)
    w = dist1.weights
    log_p_neg = float(np.dot(np.abs(y - x), np.log(w[1::2])))
    return log_p_neg + cd.log_beta * float(np.dot(np.maximum(x, y), cd.ell))


def edge_conductance(dist1: StepDistribution, x, y, direction: ConductanceDirection | None = None) -> float:
    """c(x, y) = prod_j p(-e_j)^{|y_j - x_j|} * beta^{(x v y) . ell}."""
    return math.exp(log_edge_conductance(dist1, x, y, direction))


def conductance_transition_probabilities(
    dist1: StepDistribution,
    x,
    available,
    direction: ConductanceDirection | None = None,
) -> dict[int, float]:
    """Step law at ``x`` written as normalised edge conductances.

    The common factor ``beta^{x . ell}`` cancels between numerator and
    denominator; it is divided out before exponentiating so the result stays
    accurate far from the origin.
    """
    cd = direction or conductance_direction(dist1)
    x = np.asarray(x, dtype=np.int64)
    units = unit_vectors(dist1.d)
    log_neg = np.log(dist1.weights[1::2])
    logs = {}
    for k in sorted(available):
        y = x + units[k]
        lift = np.maximum(x, y) - x
        logs[k] = float(np.dot(np.abs(units[k]), log_neg)) + cd.log_beta * float(np.dot(lift, cd.ell))
    top = max(logs.values())
    vals = {k: math.exp(v - top) for k, v in logs.items()}
    total = sum(vals.values())
    return {k: v / total for k, v in vals.items()}


def _projections(dist0: StepDistribution, ell) -> np.ndarray:
    return unit_vectors(dist0.d) @ np.asarray(ell, dtype=np.float64)


def mgf(dist0: StepDistribution, ell, t: float) -> float:
    """E exp(-t X_1 . ell) under ``dist0``."""
    if t == 0:
        return 1.0
    return float(np.dot(dist0.weights, np.exp(-t * _projections(dist0, ell))))


def log_mgf(dist0: StepDistribution, ell, t: float) -> float:
    w = dist0.weights
    mask = w > 0
    a = np.log(w[mask]) - t * _projections(dist0, ell)[mask]
    top = a.max()
    return float(top + math.log(np.exp(a - top).sum()))


def solve_alpha(dist0: StepDistribution, ell) -> tuple[float, float]:
    """Unique ``t > 0`` with ``mgf(t) = 1``, and ``alpha = exp(t)``.

    Returns ``(inf, inf)`` when no step in the support moves backwards along
    ``ell``.  Works on ``log mgf`` so the bracket never overflows.
    """
    ell = np.asarray(ell, dtype=np.float64)
    if float(np.dot(drift(dist0), ell)) <= 0:
        raise NotTransient("drift . ell must be > 0")
    proj = _projections(dist0, ell)
    if not np.any((dist0.weights > 0) & (proj < 0)):
        return math.inf, math.inf

    def f(t):
        return log_mgf(dist0, ell, t)

    lo, hi = 0.0, 1.0
    while f(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise ArithmeticError("failed to bracket the mgf root")
    while hi - lo > ROOT_TOLERANCE * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    t = 0.5 * (lo + hi)
    # one Newton step on mgf(t) - 1, kept only if it stays inside the bracket
    # and does not worsen the residual
    w = dist0.weights
    e = np.exp(-t * proj)
    g = float(np.dot(w, e)) - 1.0
    dg = float(np.dot(w, -proj * e))
    if dg > 0:
        t_new = t - g / dg
        if lo <= t_new <= hi and abs(mgf(dist0, ell, t_new) - 1.0) <= abs(g):
            t = t_new
    return t, math.exp(t)


@dataclass(frozen=True)
class DoobTransform:
    dist: StepDistribution
    drift: np.ndarray


def doob_transform(dist0: StepDistribution, ell, alpha: float) -> DoobTransform:
    """Tilt ``dist0`` by the harmonic function ``alpha^{-x . ell}``.

    The tilted law is ``p(e) alpha^{-e . ell}``; it sums to one exactly when
    ``log alpha`` is the mgf root, so the weights are not renormalised.
    """
    if not math.isfinite(alpha) or alpha <= 0:
        raise AlphaNotRoot(f"alpha={alpha} is not a finite positive root")
    t = math.log(alpha)
    if abs(mgf(dist0, ell, t) - 1.0) > 1e-9:
        raise AlphaNotRoot(f"mgf(log {alpha}) = {mgf(dist0, ell, t)!r} != 1")
    w = dist0.weights * np.exp(-t * _projections(dist0, ell))
    tilted = StepDistribution(w)
    return DoobTransform(tilted, drift(tilted))


REGIME_RECURRENT = "recurrent"
REGIME_BALLISTIC = "ballistic"
REGIME_SUB_BALLISTIC = "sub-ballistic"
REGIME_BOUNDARY = "boundary"


@dataclass(frozen=True)
class AnalyticProfile:
    ell: np.ndarray
    log_beta: float
    t_root: float
    alpha: float
    kappa: float
    doob_drift: np.ndarray | None
    doob_dist: StepDistribution | None
    transient: bool
    ballistic: str | None
    balanced: bool
    drift0: np.ndarray
    drift1: np.ndarray

    @property
    def beta(self) -> float:
        return math.exp(self.log_beta)

    @property
    def regime(self) -> str:
        return self.ballistic if self.transient else REGIME_RECURRENT

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else (float(x) if math.isfinite(x) else "inf")

        return {
            "ell": self.ell.tolist(),
            "log_beta": self.log_beta,
            "beta": self.beta,
            "t_root": num(self.t_root),
            "alpha": num(self.alpha),
            "kappa": num(self.kappa),
            "doob_drift": None if self.doob_drift is None else self.doob_drift.tolist(),
            "doob_weights": None if self.doob_dist is None else self.doob_dist.weights.tolist(),
            "drift0": self.drift0.tolist(),
            "drift1": self.drift1.tolist(),
            "drift0_dot_ell": float(np.dot(self.drift0, self.ell)),
            "transient": self.transient,
            "regime": self.regime,
            "balanced": self.balanced,
        }


def classify(dist0: StepDistribution, dist1: StepDistribution) -> AnalyticProfile:
    """All closed-form parameters and the recurrence / ballisticity regime.

    Transient iff ``drift0 . ell > 0``; then ballistic iff ``beta < alpha``.
    A balanced layer-1 law puts resistance 1 on every edge, so the walk is
    classified recurrent.
    """
    if dist0.d != dist1.d:
        raise ValueError("layer distributions have different dimensions")
    cd = conductance_direction(dist1)
    d0, d1 = drift(dist0), drift(dist1)
    transient = (not cd.balanced) and float(np.dot(d0, cd.ell)) > 0
    t_root = alpha = kappa = math.inf
    doob = None
    ballistic = None
    if float(np.dot(d0, cd.ell)) > 0:
        t_root, alpha = solve_alpha(dist0, cd.ell)
        if math.isfinite(alpha):
            doob = doob_transform(dist0, cd.ell, alpha)
    if not cd.balanced and math.isfinite(t_root):
        kappa = t_root / cd.log_beta
    if transient:
        if abs(cd.log_beta - t_root) < BOUNDARY_TOLERANCE:
            ballistic = REGIME_BOUNDARY
        elif cd.log_beta < t_root:
            ballistic = REGIME_BALLISTIC
        else:
            ballistic = REGIME_SUB_BALLISTIC
    return AnalyticProfile(
        ell=cd.ell,
        log_beta=cd.log_beta,
        t_root=t_root,
        alpha=alpha,
        kappa=kappa,
        doob_drift=None if doob is None else doob.drift,
        doob_dist=None if doob is None else doob.dist,
        transient=transient,
        ballistic=ballistic,
        balanced=cd.balanced,
        drift0=d0,
        drift1=d1,
    )
