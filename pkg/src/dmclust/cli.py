"""Dataset ingestion, experiment orchestration, machine-readable reports.

Subcommand-free interface driven by flags:

  dmclust --objective kmedian --k 3 --epsilon 0.3 --input pts.csv \
          --format points-csv --trials 5 --seed 1 --output out.json

Modes: the default runs trials of the approximation pipeline (with exact
oracle columns whenever the instance fits the brute-force caps); --stats
runs the Monte-Carlo cut/badly-cut probability harness; --scaling measures
wall-time doubling ratios on synthetic instances.  Exit codes: 0 success,
2 validation failure, 3 failed acceptance assertion under --check.

Result JSON is schema-versioned and byte-identical for identical
(config, seed) unless --timing is given.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import bootstrap_kmeans
from .instance import ClusteringInstance
from .metric import (MetricSpace, ParameterError, load_distance_matrix_csv,
                     load_points_csv, validate_triangle)
from .oracle import OracleSizeError, exact_solution
from .pipeline import approximate, baseline_for
from .rng import substream
from .split_tree import (BadlyCutParams, ball_cut_level, build_decomposition,
                         default_rho, is_badly_cut_client)

__all__ = ["RunConfig", "ingest", "export_instance", "run", "stats",
           "scaling", "main"]

SCHEMA_VERSION = 2
FORMATS = ("points-csv", "distmatrix-csv", "instance-json")


@dataclass
class RunConfig:
    objective: str = "kmedian"
    epsilon: float = 0.3
    k: int | None = None
    z: int | None = None
    seed: int = 0
    trials: int = 1
    input: str | None = None
    format: str = "points-csv"
    synthetic: str | None = None
    oracle_cap: int = 1_000_000
    output: str | None = None
    timing: bool = False
    check: bool = False
    max_cells: int = 30_000
    rho: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0 / 3.0):
            raise ParameterError("epsilon must lie in (0, 1/3)")
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def ingest(path: str, format: str, objective: str = "kmedian",
           k: int | None = None, z: int | None = None,
           d: int = 2) -> ClusteringInstance:
    """Load an instance; coordinate inputs induce the Euclidean metric."""
    if format not in FORMATS:
        raise ParameterError(f"format must be one of {FORMATS}")
    if format == "instance-json":
        with open(path, "r", encoding="utf-8") as fh:
            return instance_from_dict(json.load(fh))
    if format == "points-csv":
        space = load_points_csv(path, d=d)
    else:
        space = load_distance_matrix_csv(path, d=d)
    return _default_instance(space, objective, k=k, z=z)


def _default_instance(space, objective, k=None, z=None) -> ClusteringInstance:
    n = space.n
    kw: dict = {}
    if objective == "fl":
        kw["opening_costs"] = np.full(n, 1.0)
    else:
        kw["k"] = k if k is not None else max(1, min(3, n))
    if objective == "pc":
        kw["penalties"] = np.full(n, 1.0)
    if objective == "outliers":
        kw["z"] = z if z is not None else 1
    return ClusteringInstance(space=space, clients=np.arange(n),
                              facilities=np.arange(n), objective=objective,
                              **kw)


def instance_from_dict(doc: dict) -> ClusteringInstance:
    if "points" in doc:
        space = MetricSpace.from_coords(np.asarray(doc["points"], dtype=float),
                                        d=int(doc.get("d", 2)))
    elif "matrix" in doc:
        m = np.asarray(doc["matrix"], dtype=float)
        validate_triangle(m) if m.shape[0] <= 200 else None
        space = MetricSpace.from_matrix(m, d=int(doc.get("d", 2)))
    else:
        raise ParameterError("instance json needs 'points' or 'matrix'")
    clients = np.asarray(doc["clients"], dtype=np.int64)
    facilities = np.asarray(doc["facilities"], dtype=np.int64)
    kw: dict = {}
    for name in ("demands", "opening_costs", "penalties"):
        if doc.get(name) is not None:
            kw[name] = np.asarray(doc[name])
    return ClusteringInstance(space=space, clients=clients,
                              facilities=facilities,
                              objective=doc["objective"],
                              k=doc.get("k"), z=doc.get("z"), **kw)


def export_instance(inst: ClusteringInstance) -> dict:
    doc: dict = {"objective": inst.objective,
                 "clients": [int(c) for c in inst.clients],
                 "facilities": [int(f) for f in inst.facilities],
                 "demands": [int(x) for x in inst.demands],
                 "d": inst.space.d}
    if inst.space.coords is not None:
        doc["points"] = [[float(x) for x in row] for row in inst.space.coords]
    else:
        doc["matrix"] = [[float(x) for x in row]
                         for row in inst.space.pdist_block(
                             inst.space.points, inst.space.points)]
    if inst.k is not None:
        doc["k"] = int(inst.k)
    if inst.z is not None:
        doc["z"] = int(inst.z)
    if inst.opening_costs is not None:
        doc["opening_costs"] = [float(x) for x in inst.opening_costs]
    if inst.penalties is not None:
        doc["penalties"] = [float(x) for x in inst.penalties]
    return doc


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def synthetic_space(spec: str, seed: int) -> MetricSpace:
    """uniform:n=100 | grid:side=10 | twoscale:n=60 planar generators."""
    kind, _, args = spec.partition(":")
    params = dict(p.split("=") for p in args.split(",") if p)
    rng = substream(seed, f"generator.{spec}")
    if kind == "uniform":
        n = int(params.get("n", 100))
        return MetricSpace.from_coords(rng.uniform(0, 1, size=(n, 2)), d=2)
    if kind == "grid":
        side = int(params.get("side", 10))
        xs, ys = np.meshgrid(np.arange(side), np.arange(side))
        return MetricSpace.from_coords(
            np.column_stack([xs.ravel(), ys.ravel()]).astype(float), d=2)
    if kind == "twoscale":
        n = int(params.get("n", 60))
        half = n // 2
        a = rng.uniform(0, 1, size=(half, 2))
        b = rng.uniform(0, 1, size=(n - half, 2)) * 0.01 + 50.0
        return MetricSpace.from_coords(np.vstack([a, b]), d=2)
    raise ParameterError(f"unknown synthetic spec {spec!r}")


def _load_config_instance(cfg: RunConfig, trial_seed: int) -> ClusteringInstance:
    if cfg.input is not None:
        return ingest(cfg.input, cfg.format, cfg.objective, k=cfg.k, z=cfg.z)
    spec = cfg.synthetic or "uniform:n=40"
    space = synthetic_space(spec, trial_seed)
    return _default_instance(space, cfg.objective, k=cfg.k, z=cfg.z)


# ---------------------------------------------------------------------------
# Run mode
# ---------------------------------------------------------------------------

def _run_trial(cfg: RunConfig, t: int) -> tuple[dict, dict]:
    trial_seed = cfg.seed + t
    inst = _load_config_instance(cfg, trial_seed)
    t0 = time.perf_counter()
    if cfg.objective == "kmeans":
        sol = bootstrap_kmeans(inst, inst.k, cfg.epsilon, seed=trial_seed)
        baseline_cost = sol.meta["round_costs"][0]
    else:
        res = approximate(inst, cfg.epsilon, seed=trial_seed,
                          rho=cfg.rho, max_cells=cfg.max_cells)
        sol = res.solution
        baseline_cost = res.baseline.cost
    wall = time.perf_counter() - t0
    rec = {
        "trial": t,
        "seed": trial_seed,
        "n": inst.space.n,
        "baseline_cost": float(baseline_cost),
        "algorithm_cost": float(sol.cost),
        "centers": len(sol.facilities),
        "outliers_dropped": int(sol.outlier_demand(inst)),
    }
    exact_cost = None
    try:
        if math.comb(len(inst.facilities),
                     min(inst.k or 1, len(inst.facilities))) \
                <= cfg.oracle_cap and len(inst.facilities) <= 20:
            opt = exact_solution(inst)
            exact_cost = float(opt.meta.get("exact_cost", opt.cost))
    except OracleSizeError:
        exact_cost = None
    if exact_cost is not None:
        rec["exact_cost"] = exact_cost
        rec["ratio"] = float(sol.cost / exact_cost) if exact_cost > 0 \
            else (1.0 if sol.cost <= 1e-12 else math.inf)
    else:
        rec["exact_cost"] = None
        rec["ratio"] = None
    return rec, {"trial": t, "wall_seconds": wall}


def run(cfg: RunConfig) -> dict:
    records = []
    timings = []
    failures = []
    if cfg.workers > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_trial, [cfg] * cfg.trials,
                                    range(cfg.trials)))
    else:
        results = [_run_trial(cfg, t) for t in range(cfg.trials)]
    for rec, timing in results:   # merged in seed order either way
        if rec["ratio"] is not None and rec["ratio"] < 1.0 - 1e-9:
            failures.append(f"trial {rec['trial']}: ratio below 1")
        records.append(rec)
        timings.append(timing)

    ratios = [r["ratio"] for r in records if r["ratio"] is not None]
    report = {
        "schema": SCHEMA_VERSION,
        "mode": "run",
        "config": _config_dict(cfg),
        "records": records,
        "aggregate": {
            "median_ratio": float(np.median(ratios)) if ratios else None,
            "median_cost": float(np.median([r["algorithm_cost"]
                                            for r in records])),
            "trials": cfg.trials,
        },
        "failures": failures,
    }
    if cfg.timing:
        report["timings"] = timings
    return report


# ---------------------------------------------------------------------------
# Stats mode (Monte-Carlo probability harness)
# ---------------------------------------------------------------------------

def stats(cfg: RunConfig) -> dict:
    inst = _load_config_instance(cfg, cfg.seed)
    space = inst.space
    params = BadlyCutParams(cfg.epsilon, 1 if inst.p == 1 else 2, space.d)
    rho = cfg.rho if cfg.rho is not None else default_rho(params)
    guide = baseline_for(inst, seed=cfg.seed)
    gfac = np.asarray(sorted(set(guide.facilities)), dtype=np.int64)
    l_dist = space.pdist_block(space.points, gfac).min(axis=1)

    # sampled (v, r, i) triples: measure Pr[ball cut at level >= i] against
    # the scaling bound 2^(2d+2) * r / 2^i (with r on the rescaled metric)
    rng = substream(cfg.seed, "stats.triples")
    n = space.n
    scale = space.min_positive_distance()
    triples = []
    for _ in range(30):
        v = int(rng.integers(0, n))
        r = float(rng.uniform(0.02, 0.25) * space.diameter_upper())
        r_scaled = r / scale
        i = int(math.ceil(math.log2(r_scaled))) + int(rng.integers(1, 11))
        triples.append((v, r, i))

    cut_hits = np.zeros(len(triples))
    badly_hits = np.zeros(n)
    for t in range(cfg.trials):
        dec = build_decomposition(space, rho=rho, seed=cfg.seed + t)
        for idx, (v, r, i) in enumerate(triples):
            if ball_cut_level(dec, v, r) >= i:
                cut_hits[idx] += 1
        for v in range(n):
            if is_badly_cut_client(dec, v, float(l_dist[v]), params):
                badly_hits[v] += 1

    trials = cfg.trials
    kappa = params.kappa
    se = math.sqrt(kappa * (1 - kappa) / trials)
    badly_freq = badly_hits / trials
    d = space.d
    rows = []
    all_ok = True
    for idx, (v, r, i) in enumerate(triples):
        freq = float(cut_hits[idx] / trials)
        bound = min(1.0, 2.0 ** (2 * d + 2) * (r / scale) / 2.0 ** i)
        slack = 3.0 * math.sqrt(max(freq * (1 - freq), 1e-12) / trials)
        ok = freq <= bound + slack + 1e-12
        all_ok = all_ok and ok
        rows.append({"v": v, "r": r, "level": i, "freq": freq,
                     "bound": bound, "ok": ok})
    report = {
        "schema": SCHEMA_VERSION,
        "mode": "stats",
        "config": _config_dict(cfg),
        "kappa": kappa,
        "tau": params.tau_threshold,
        "badly_cut": {
            "max_frequency": float(badly_freq.max()),
            "mean_frequency": float(badly_freq.mean()),
            "bound": kappa + 3 * se,
            "ok": bool(np.all(badly_freq <= kappa + 3 * se)),
        },
        "ball_cut_rates": rows,
        "scaling_ok": all_ok,
        "zero_radius_never_cut": _zero_radius_check(space, rho, cfg.seed),
    }
    return report


def _zero_radius_check(space, rho, seed) -> bool:
    dec = build_decomposition(space, rho=rho, seed=seed)
    return all(ball_cut_level(dec, v, 0.0) == -math.inf
               for v in range(min(space.n, 20)))


# ---------------------------------------------------------------------------
# Scaling mode
# ---------------------------------------------------------------------------

def scaling(cfg: RunConfig, sizes=(2000, 4000, 8000), reps: int = 3) -> dict:
    """Median wall time per size for the fl pipeline on uniform instances."""
    rows = []
    for n in sizes:
        times = []
        for r in range(reps):
            space = synthetic_space(f"uniform:n={n}", cfg.seed + r)
            inst = ClusteringInstance(space=space, clients=np.arange(n),
                                      facilities=np.arange(n), objective="fl",
                                      opening_costs=np.full(n, 0.05))
            t0 = time.perf_counter()
            approximate(inst, cfg.epsilon, seed=cfg.seed + r,
                        rho=cfg.rho if cfg.rho is not None else 1.0 / 16.0,
                        max_cells=32, skip_reduction=True,
                        dp_caps={"variant_cap": 8, "max_pending_groups": 4,
                                 "max_exports": 6, "pair_budget": 40_000})
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "median_seconds": float(np.median(times))})
    ratios = [rows[i + 1]["median_seconds"] / rows[i]["median_seconds"]
              for i in range(len(rows) - 1)]
    return {
        "schema": SCHEMA_VERSION,
        "mode": "scaling",
        "config": _config_dict(cfg),
        "rows": rows,
        "doubling_ratios": ratios,
        "ok": bool(all(r <= 3.0 for r in ratios)),
    }


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _config_dict(cfg: RunConfig) -> dict:
    # execution details (output path, timing, pool size) do not affect the
    # results and stay out of the byte-identical payload
    doc = asdict(cfg)
    doc.pop("output", None)
    doc.pop("timing", None)
    doc.pop("workers", None)
    return doc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmclust", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--objective", default="kmedian",
                    choices=["fl", "kmedian", "kmeans", "pc", "outliers",
                             "kcenter"])
    ap.add_argument("--epsilon", type=float, default=0.3)
    ap.add_argument("--k", type=int, default=None)
    ap.add_argument("--z", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=1)
    ap.add_argument("--input", default=None)
    ap.add_argument("--format", default="points-csv", choices=FORMATS)
    ap.add_argument("--synthetic", default=None,
                    help="uniform:n=100 | grid:side=10 | twoscale:n=60")
    ap.add_argument("--output", default=None)
    ap.add_argument("--stats", action="store_true")
    ap.add_argument("--scaling", action="store_true")
    ap.add_argument("--oracle-cap", type=int, default=1_000_000)
    ap.add_argument("--timing", action="store_true")
    ap.add_argument("--check", action="store_true",
                    help="exit 3 when an acceptance assertion fails")
    ap.add_argument("--rho", type=float, default=None)
    ap.add_argument("--max-cells", type=int, default=30_000)
    ap.add_argument("--workers", type=int, default=1,
                    help="trial worker pool size (records merge in seed order)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(objective=args.objective, epsilon=args.epsilon,
                        k=args.k, z=args.z, seed=args.seed,
                        trials=args.trials, input=args.input,
                        format=args.format, synthetic=args.synthetic,
                        oracle_cap=args.oracle_cap, output=args.output,
                        timing=args.timing, check=args.check,
                        max_cells=args.max_cells, rho=args.rho,
                        workers=args.workers)
        if args.stats:
            report = stats(cfg)
        elif args.scaling:
            report = scaling(cfg)
        else:
            report = run(cfg)
    except (ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = json.dumps(report, sort_keys=True, indent=2)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if cfg.check:
        bad = bool(report.get("failures")) or \
            (report.get("mode") == "stats" and
             not (report["badly_cut"]["ok"] and report["scaling_ok"])) or \
            (report.get("mode") == "scaling" and not report["ok"])
        if bad:
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
