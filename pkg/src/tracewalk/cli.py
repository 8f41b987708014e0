"""Command-line entry point: classify, sweep and experiment subcommands.

A run is described by one JSON config document; flags override its fields.
Every artifact echoes the expanded config so it can be regenerated.
Exit codes: 0 ok, 2 config error, 3 resource budget, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analysis import REGIME_BOUNDARY, classify, conductance_direction, solve_alpha
from .errors import (
    InvariantViolation,
    TooFewSamples,
    TraceWalkError,
    VertexBudgetExceeded,
)
from .nested import estimate_velocity_horizons
from .reports import SCHEMA_VERSION, ExperimentReport, jsonable
from .trace import DEFAULT_VERTEX_BUDGET, TraceGraph
from .walk import Layer, StepDistribution, drift, family_weights, validate_distribution

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_INVARIANT = 4

EXPERIMENTS = ("backtrack", "tail", "resistance", "trap", "cutpoints", "fluctuations", "velocity")
SWEEP_COLUMNS = ("gamma1", "regime", "beta", "alpha", "kappa", "speed", "speed_stderr",
                 "hill_kappa", "hill_stderr")
FAMILY_KEYS = {0: ("k0", "gamma0"), 1: ("k1", "gamma1")}


class ConfigError(TraceWalkError, ValueError):
    """Invalid run configuration; ``key`` names the offending field."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-run: first word of SeedSequence(seed, spawn_key=keys)."""
    ss = np.random.SeedSequence(seed, spawn_key=keys)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class RunConfig:
    d: int
    p0: StepDistribution
    p1: StepDistribution | None
    seed: int = 0
    workers: int = 1
    family: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.params.get(key, default)

    def to_dict(self) -> dict:
        out = {"d": self.d, **self.family, "p0": self.p0.weights.tolist(),
               "p1": None if self.p1 is None else self.p1.weights.tolist(),
               "seed": self.seed, "workers": self.workers}
        out.update(self.params)
        return out

    def require_p1(self) -> StepDistribution:
        if self.p1 is None:
            raise ConfigError("this command needs a layer-1 law (p1 or k1/gamma1)", "p1")
        return self.p1


def _layer(raw: dict, d: int, i: int) -> tuple[StepDistribution | None, dict]:
    name = f"p{i}"
    layer = Layer.ZERO if i == 0 else Layer.ONE
    kkey, gkey = FAMILY_KEYS[i]
    explicit = None
    if raw.get(name) is not None:
        w = raw[name]
        if not isinstance(w, list) or len(w) != 2 * d:
            raise ConfigError(f"{name} must be a list of {2 * d} weights", name)
        try:
            explicit = validate_distribution(w, layer)
        except (TraceWalkError, ValueError, TypeError) as err:
            raise ConfigError(f"{name}: {err}", name) from None
    if gkey not in raw:
        return explicit, {}
    k = raw.get(kkey, 1)
    gamma = raw[gkey]
    if not isinstance(k, int) or not 1 <= k <= d:
        raise ConfigError(f"{kkey} must be an integer in 1..{d}", kkey)
    if not isinstance(gamma, (int, float)) or not gamma > 0:
        raise ConfigError(f"{gkey} must be a positive number", gkey)
    fam = {kkey: k, gkey: float(gamma)}
    try:
        dist = validate_distribution(family_weights(d, k, float(gamma)), layer)
    except (TraceWalkError, ValueError) as err:
        raise ConfigError(f"{gkey}: {err}", gkey) from None
    # an echoed config carries both forms; they must describe the same law
    if explicit is not None and not np.allclose(explicit.weights, dist.weights, rtol=0, atol=1e-12):
        raise ConfigError(f"{name} disagrees with {kkey}/{gkey}", name)
    return dist, fam


def parse_config(raw: dict) -> RunConfig:
    """Expand a raw config mapping.

    Each layer is given by explicit weights or by the family shorthand
    (k, gamma); when both appear the shorthand is used and must agree.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    d = raw.get("d")
    if d is None:
        for name in ("p0", "p1"):
            if isinstance(raw.get(name), list):
                d = len(raw[name]) // 2
                break
    if not isinstance(d, int) or d < 1:
        raise ConfigError("d must be a positive integer", "d")
    p0, fam0 = _layer(raw, d, 0)
    if p0 is None:
        raise ConfigError("missing layer-0 law: give p0 or k0/gamma0", "p0")
    p1, fam1 = _layer(raw, d, 1)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer", "workers")
    reserved = {"d", "p0", "p1", "seed", "workers", *FAMILY_KEYS[0], *FAMILY_KEYS[1]}
    params = {k: v for k, v in raw.items() if k not in reserved}
    return RunConfig(d, p0, p1, seed, workers, {**fam0, **fam1}, params)


def _key_line(text: str, key) -> int | None:
    if key is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(str(key)), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def load_raw_config(path) -> tuple[dict, str]:
    """Read a config file; a report JSON is accepted and its config echo used."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON at column {err.colno}: {err.msg}", line=err.lineno) from None
    if isinstance(raw, dict) and "schema_version" in raw and isinstance(raw.get("config"), dict):
        raw = raw["config"]
    return raw, text


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Flags win over file fields; setting a family key drops that layer's weights."""
    out = dict(raw)
    for i, keys in FAMILY_KEYS.items():
        if any(k in overrides for k in keys):
            out.pop(f"p{i}", None)
    for i in (0, 1):
        if f"p{i}" in overrides:
            for k in FAMILY_KEYS[i]:
                out.pop(k, None)
    out.update(overrides)
    return out


def _int_list(cfg: RunConfig, key, default):
    v = cfg.get(key, default)
    if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"{key} must be a nonempty list of numbers", key)
    return v


def _int(cfg: RunConfig, key, default, minimum=1):
    v = cfg.get(key, default)
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}", key)
    return v


def _direction(cfg: RunConfig):
    """Conductance direction of p1, or the unit drift of p0 when p1 is absent."""
    if cfg.p1 is not None:
        cd = conductance_direction(cfg.p1)
        return cd.ell, cd.log_beta
    d0 = drift(cfg.p0)
    beta = cfg.get("beta", 1.0)
    if not isinstance(beta, (int, float)) or beta < 1:
        raise ConfigError("beta must be a number >= 1", "beta")
    return d0 / np.linalg.norm(d0), math.log(beta)


def _checked_profile(cfg: RunConfig):
    prof = classify(cfg.p0, cfg.require_p1())
    if prof.doob_dist is not None and abs(prof.doob_dist.weights.sum() - 1) > 1e-12:
        raise InvariantViolation("Doob-transformed weights do not sum to one")
    if prof.transient and prof.ballistic is None:
        raise InvariantViolation("transient profile without a ballisticity verdict")
    return prof


def cmd_classify(cfg: RunConfig) -> dict:
    return _checked_profile(cfg).to_dict()


def _exp_backtrack(cfg):
    ell, _ = _direction(cfg)
    xs = _int_list(cfg, "x_grid", list(range(1, 9)))
    n = None if cfg.get("n") is None else _int(cfg, "n", None)
    return ex.estimate_backtrack_exponent(cfg.p0, ell, n, _int(cfg, "replicas", 10**5), xs, cfg.seed)


def _tail_horizon(dist0: StepDistribution, ell, replicas: int) -> int:
    """Walk length at which minima below the ``1/replicas`` quantile are resolved."""
    try:
        t, _ = solve_alpha(dist0, ell)
    except TraceWalkError:
        return 1000
    depth = 10 if not math.isfinite(t) else math.log(replicas) / t + 10
    return ex.saturation_horizon(dist0, ell, depth)


def _exp_tail(cfg):
    ell, log_beta = _direction(cfg)
    replicas = _int(cfg, "replicas", 10**5)
    n = _int(cfg, "n", _tail_horizon(cfg.p0, ell, replicas))
    samples = ex.escape_tail_samples(cfg.p0, ell, log_beta, n, replicas, cfg.seed)
    k = cfg.get("k")
    rep = ex.hill_tail_index(samples, k=None if k is None else _int(cfg, "k", k, 10))
    rep.seed = cfg.seed
    rep.config = {**rep.config, "n": n, "replicas": replicas, "log_beta": log_beta}
    if cfg.p1 is not None:
        rep.results["kappa_predicted"] = classify(cfg.p0, cfg.p1).kappa
    return rep


def _exp_resistance(cfg):
    ell, log_beta = _direction(cfg)
    n = _int(cfg, "n", 10**5)
    seeds = _int(cfg, "replicas", 10)
    table = []
    base = ex.as_seed(cfg.seed)
    for r in range(seeds):
        ls = ex.resistance_partial_sums(cfg.p0, ell, log_beta, 2 * n, base.replica(r), log=True)
        table.append({"replica": r, "log_s_n": float(ls[n]), "log_s_2n": float(ls[2 * n]),
                      "ratio": float(math.exp(min(ls[2 * n] - ls[n], 700.0)))})
    ratios = [row["ratio"] for row in table]
    return ExperimentReport("resistance", {"max_ratio": max(ratios), "min_ratio": min(ratios),
                                           "median_ratio": float(np.median(ratios))},
                            seeds, cfg.seed, {"n": n, "log_beta": log_beta}, table)


def _exp_trap(cfg):
    prof = _checked_profile(cfg)
    w = cfg.get("w", 3)
    if not isinstance(w, (int, float)) or w < 0:
        raise ConfigError("w must be a nonnegative number", "w")
    return ex.trap_event_frequency(cfg.p0, prof, _int_list(cfg, "h_grid", [2, 3, 4]), w,
                                   _int(cfg, "replicas", 10**5), cfg.seed)


def _exp_cutpoints(cfg):
    ell, log_beta = _direction(cfg)
    n = _int(cfg, "n", 10**5)
    margin = _int(cfg, "tail_margin", 0, minimum=0)
    graph = TraceGraph.generate(cfg.p0, n, cfg.seed,
                                vertex_budget=_int(cfg, "vertex_budget", DEFAULT_VERTEX_BUDGET))
    pot = ex.cutpoint_potential(graph, ell, log_beta, tail_margin=margin)
    results = {"count": int(len(pot.values)), "trace_vertices": graph.n_vertices}
    if len(pot.values) >= 2:
        gaps = np.diff(pot.indices)
        slope = float(np.polyfit(np.arange(len(pot.values)), pot.values, 1)[0])
        results.update(mean_gap=float(gaps.mean()), potential_slope=slope)
    table = [{"ordinal": i, "index": int(t), "potential": float(v)}
             for i, (t, v) in enumerate(zip(pot.indices, pot.values))]
    return ExperimentReport("cutpoints", results, 1, cfg.seed,
                            {"n": n, "tail_margin": margin, "log_beta": log_beta}, table)


def _nested_kwargs(cfg):
    return {"vertex_budget": _int(cfg, "vertex_budget", DEFAULT_VERTEX_BUDGET),
            "min_extension": _int(cfg, "min_extension", 10_000)}


def _exp_fluctuations(cfg):
    grid = _int_list(cfg, "n_grid", [1000, 4000, 16_000, 64_000])
    return ex.fluctuation_exponent(cfg.p0, cfg.require_p1(), grid, _int(cfg, "replicas", 32),
                                   cfg.seed, cfg.workers, **_nested_kwargs(cfg))


def _exp_velocity(cfg):
    n = _int(cfg, "n", 10**5)
    horizons = sorted(int(h) for h in _int_list(cfg, "horizons", [n]))
    replicas = _int(cfg, "replicas", 32, minimum=2)
    est = estimate_velocity_horizons(cfg.p0, cfg.require_p1(), horizons, replicas, cfg.seed,
                                     cfg.workers, **_nested_kwargs(cfg))
    table = []
    for h, v in est.items():
        row = v.to_dict()
        row["vhat"] = json.dumps(row["vhat"])
        row["stderr"] = json.dumps(row["stderr"])
        table.append(row)
    last = est[horizons[-1]]
    results = {k: v for k, v in last.to_dict().items() if k not in ("n", "replicas")}
    results["regime"] = classify(cfg.p0, cfg.p1).regime
    return ExperimentReport("velocity", results, replicas, cfg.seed,
                            {"horizons": horizons, "direction": drift(cfg.p0).tolist()}, table)


_DISPATCH = {
    "backtrack": _exp_backtrack,
    "tail": _exp_tail,
    "resistance": _exp_resistance,
    "trap": _exp_trap,
    "cutpoints": _exp_cutpoints,
    "fluctuations": _exp_fluctuations,
    "velocity": _exp_velocity,
}


def cmd_experiment(cfg: RunConfig, name: str) -> ExperimentReport:
    if name not in _DISPATCH:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    rep = _DISPATCH[name](cfg)
    rep.config = {**cfg.to_dict(), "experiment": name, "derived": rep.config}
    rep.seed = cfg.seed
    return rep


def cmd_sweep(cfg: RunConfig) -> ExperimentReport:
    """Phase table over gamma1 with the layer-1 law taken from the family shorthand.

    Row ``i`` simulates with seeds ``derive_seed(seed, i, 0)`` (speed) and
    ``derive_seed(seed, i, 1)`` (tail).  Boundary rows are not simulated.
    """
    grid = cfg.get("gamma1_grid")
    if not isinstance(grid, list) or not grid or not all(
            isinstance(g, (int, float)) and g > 0 for g in grid):
        raise ConfigError("gamma1_grid must be a nonempty list of positive numbers", "gamma1_grid")
    k1 = cfg.family.get("k1", cfg.get("k1", 1))
    n = _int(cfg, "n", 10**5)
    replicas = _int(cfg, "replicas", 16, minimum=2)
    tail_replicas = _int(cfg, "tail_replicas", 10**4, minimum=0)
    rows = []
    for i, g in enumerate(grid):
        p1 = validate_distribution(family_weights(cfg.d, k1, float(g)), Layer.ONE)
        prof = classify(cfg.p0, p1)
        row = dict.fromkeys(SWEEP_COLUMNS)
        row.update(gamma1=float(g), regime=prof.regime, beta=prof.beta, alpha=prof.alpha,
                   kappa=prof.kappa)
        if prof.regime != REGIME_BOUNDARY:
            v = estimate_velocity_horizons(cfg.p0, p1, [n], replicas, derive_seed(cfg.seed, i, 0),
                                           cfg.workers, **_nested_kwargs(cfg))[n]
            row.update(speed=v.parallel, speed_stderr=v.parallel_stderr)
            if prof.transient and math.isfinite(prof.alpha) and tail_replicas:
                try:
                    hill = ex.hill_tail_index(ex.escape_tail_samples(
                        cfg.p0, prof.ell, prof.log_beta,
                        _tail_horizon(cfg.p0, prof.ell, tail_replicas), tail_replicas,
                        derive_seed(cfg.seed, i, 1)))
                    row.update(hill_kappa=hill["kappa"], hill_stderr=hill["kappa_stderr"])
                except TooFewSamples:
                    pass
        rows.append(row)
    flags = [f"gamma1={r['gamma1']} is on the boundary; not simulated"
             for r in rows if r["regime"] == REGIME_BOUNDARY]
    return ExperimentReport("sweep", {"rows": len(rows)}, replicas, cfg.seed,
                            {**cfg.to_dict(), "command": "sweep"}, rows, flags)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (or a report to reproduce)")
    common.add_argument("--seed", type=int, help="top-level unsigned 64-bit seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available CPUs)")
    common.add_argument("--format", choices=("json", "csv", "both"), default="both")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config field; VALUE is JSON")
    for key, typ in (("d", int), ("k0", int), ("gamma0", float), ("k1", int),
                     ("gamma1", float), ("n", int), ("replicas", int)):
        common.add_argument(f"--{key}", type=typ, default=None)

    p = argparse.ArgumentParser(prog="tracewalk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="closed-form regime and exponents")
    sub.add_parser("sweep", parents=[common], help="speed and tail table over gamma1_grid")
    e = sub.add_parser("experiment", parents=[common], help="run one Monte Carlo experiment")
    e.add_argument("name", help=" | ".join(EXPERIMENTS))
    return p


def _gather_raw(args) -> tuple[dict, str, str]:
    raw, text, source = {}, "", None
    if args.config is not None:
        try:
            raw, text = load_raw_config(args.config)
        except OSError as err:
            raise ConfigError(f"cannot read {args.config}: {err.strerror}") from None
        source = str(args.config)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    for key in ("d", "k0", "gamma0", "k1", "gamma1", "n", "replicas", "seed"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    if args.workers is not None:
        overrides["workers"] = args.workers
    elif "workers" not in raw:
        overrides["workers"] = os.cpu_count() or 1
    return apply_overrides(raw, overrides), text, source


def _write(report: ExperimentReport, args, stem: str, runtime: float) -> None:
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    if args.format in ("json", "both"):
        report.write_json(out / f"{stem}.json", runtime)
    if args.format in ("csv", "both"):
        report.write_csv(out / f"{stem}.csv")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    text, source = "", None if args.config is None else str(args.config)
    try:
        raw, text, source = _gather_raw(args)
        cfg = parse_config(raw)
        t0 = time.perf_counter()
        if args.command == "classify":
            profile = cmd_classify(cfg)
            doc = jsonable({"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
                            "seed": cfg.seed, "results": profile,
                            "runtime_seconds": time.perf_counter() - t0})
            if args.out is not None:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "classify.json").write_text(json.dumps(doc, indent=2) + "\n")
            print(json.dumps(doc, indent=2))
        elif args.command == "sweep":
            rep = cmd_sweep(cfg)
            _write(rep, args, "sweep", time.perf_counter() - t0)
            print(json.dumps(rep.to_dict(time.perf_counter() - t0)["results"]["table"], indent=2))
        else:
            rep = cmd_experiment(cfg, args.name)
            _write(rep, args, args.name, time.perf_counter() - t0)
            print(json.dumps(rep.to_dict(time.perf_counter() - t0)["results"], indent=2))
    except VertexBudgetExceeded as err:
        print(f"error: resource budget exhausted: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except InvariantViolation as err:
        print(f"error: internal invariant violated: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except ConfigError as err:
        line = err.line or _key_line(text, err.key)
        where = "" if source is None else (f"{source}:{line}: " if line else f"{source}: ")
        print(f"error: {where}{err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceWalkError, ValueError) as err:
        print(f"error: {'' if source is None else source + ': '}{err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
