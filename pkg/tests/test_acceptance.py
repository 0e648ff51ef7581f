"""Acceptance suite: one test per headline criterion, printed pass lines.

Each test pins its tolerance and trial count up front; statistical clauses
carry a three-standard-error slack on top of their stated bound.  Run with
`pytest tests/test_acceptance.py -v -s` to see the per-criterion lines.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from dmclust.baselines import (bootstrap_kmeans, greedy_kcenter,
                               local_search_kmedian)
from dmclust.metric import MetricSpace, build_net, build_net_hierarchy
from dmclust.oracle import (exact_kcenter, exact_kmedian, exact_solution,
                            validate_structured_solution)
from dmclust.pipeline import approximate
from dmclust.preprocess import (combine_subinstance_solutions, lift_reduction,
                                reduce_aspect_ratio)
from dmclust.rng import substream
from dmclust.split_tree import (BadlyCutParams, ball_cut_level,
                                build_decomposition, cut_level, default_rho,
                                is_badly_cut_client, portal_respecting_path)

from conftest import random_instance

EPS = 0.3
PARAMS = BadlyCutParams(EPS, 1, 2)
RHO = default_rho(PARAMS)


def _se(p_hat: float, n: int) -> float:
    return math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n)


def _planar(n: int, seed: int) -> MetricSpace:
    rng = np.random.default_rng(seed)
    return MetricSpace.from_coords(rng.uniform(0, 1, size=(n, 2)), d=2)


# ---------------------------------------------------------------------------
# 1. Decomposition structure
# ---------------------------------------------------------------------------

def test_acceptance_01_decomposition_structure():
    rng = np.random.default_rng(11)
    t0 = time.time()
    max_parts_ratio = 0.0
    for i in range(200):
        n = int(rng.integers(20, 501))
        space = MetricSpace.from_coords(rng.uniform(0, 1, size=(n, 2)), d=2)
        dec = build_decomposition(space, rho=RHO, seed=i)
        stats = dec.validate()   # diameter, refinement, portals, nesting
        assert stats["parts"] <= 2 * n
        for part in dec.parts:
            assert len(part.portals) <= (1.0 / RHO) ** 2
        max_parts_ratio = max(max_parts_ratio, stats["parts"] / n)
    elapsed = time.time() - t0
    assert elapsed < 10.0, f"structure sweep took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 1 decomposition-structure: PASS "
          f"(200 builds, parts/n <= {max_parts_ratio:.2f}, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2 + 3. Scaling probability and badly-cut probability (shared Monte-Carlo)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def monte_carlo_50():
    """1000 decompositions of one 50-point instance, with cut statistics."""
    space = _planar(50, 424242)
    scale = space.min_positive_distance()
    guide_cols = np.array([3, 17, 31])
    l_dist = space.pdist_block(space.points, guide_cols).min(axis=1)

    tri_rng = substream(7, "acceptance.triples")
    triples = []
    for _ in range(40):
        v = int(tri_rng.integers(0, 50))
        r = float(tri_rng.uniform(0.02, 0.25) * space.diameter_upper())
        i = int(math.ceil(math.log2(r / scale))) + int(tri_rng.integers(1, 11))
        triples.append((v, r, i))

    grid = [(e, p) for e in (0.1, 0.3) for p in (1, 2)]
    badly = {ep: np.zeros(50) for ep in grid}
    cut_hits = np.zeros(len(triples))
    trials = 1000
    t0 = time.time()
    for s in range(trials):
        dec = build_decomposition(space, rho=RHO, seed=s)
        for idx, (v, r, i) in enumerate(triples):
            if ball_cut_level(dec, v, r) >= i:
                cut_hits[idx] += 1
        for ep in grid:
            pr = BadlyCutParams(ep[0], ep[1], 2)
            for v in range(50):
                if is_badly_cut_client(dec, v, float(l_dist[v]), pr):
                    badly[ep][v] += 1
    return dict(space=space, scale=scale, triples=triples, trials=trials,
                cut_hits=cut_hits, badly=badly, grid=grid,
                elapsed=time.time() - t0)


def test_acceptance_02_scaling_probability(monte_carlo_50):
    mc = monte_carlo_50
    trials = mc["trials"]
    worst_margin = math.inf
    for idx, (v, r, i) in enumerate(mc["triples"]):
        freq = mc["cut_hits"][idx] / trials
        bound = min(1.0, 2.0 ** (2 * 2 + 2) * (r / mc["scale"]) / 2.0 ** i)
        limit = bound + 3 * _se(freq, trials)
        assert freq <= limit + 1e-12, f"triple {(v, r, i)}: {freq} > {limit}"
        worst_margin = min(worst_margin, limit - freq)
    assert mc["elapsed"] < 60.0, f"Monte-Carlo took {mc['elapsed']:.1f}s"
    print(f"\nACCEPTANCE 2 scaling-probability: PASS "
          f"(1000 seeds, 40 triples, min margin {worst_margin:.3f}, "
          f"{mc['elapsed']:.1f}s)")


def test_acceptance_03_badly_cut_probability(monte_carlo_50):
    mc = monte_carlo_50
    trials = mc["trials"]
    report = []
    for (e, p) in mc["grid"]:
        pr = BadlyCutParams(e, p, 2)
        limit = pr.kappa + 3 * math.sqrt(pr.kappa * (1 - pr.kappa) / trials)
        freq = mc["badly"][(e, p)] / trials
        assert float(freq.max()) <= limit, \
            f"eps={e} p={p}: {freq.max()} > {limit}"
        report.append(f"eps={e},p={p}:{freq.max():.4f}<={limit:.4f}")
    print(f"\nACCEPTANCE 3 badly-cut-probability: PASS ({'; '.join(report)})")


# ---------------------------------------------------------------------------
# 4. Portal-path detour
# ---------------------------------------------------------------------------

def test_acceptance_04_portal_path_detour():
    rho = 1.0 / 8.0   # coarse portals so detours are nontrivial
    checked = 0
    t0 = time.time()
    for i in range(20):
        rng = np.random.default_rng(900 + i)
        n = int(rng.integers(60, 101))
        space = MetricSpace.from_coords(rng.uniform(0, 1, size=(n, 2)), d=2)
        dec = build_decomposition(space, rho=rho, seed=i)
        for u in range(n):
            for v in range(u + 1, n):
                path, length = portal_respecting_path(dec, u, v)
                bound = space.dist(u, v) + dec.to_original(
                    16.0 * rho * 2.0 ** cut_level(dec, u, v))
                assert length <= bound + 1e-9
                checked += 1
    print(f"\nACCEPTANCE 4 portal-path-detour: PASS "
          f"({checked} pairs exact, {time.time()-t0:.1f}s)")


# ---------------------------------------------------------------------------
# 5. Net packing
# ---------------------------------------------------------------------------

def test_acceptance_05_net_packing():
    checked = 0
    for i in range(25):
        rng = np.random.default_rng(50 + i)
        n = int(rng.integers(30, 200))
        space = MetricSpace.from_coords(rng.uniform(0, 1, size=(n, 2)), d=2)
        diam = space.diameter()
        for delta in (0.05, 0.1, 0.2, 0.4):
            net = build_net(space, None, delta)
            bound = 2.0 ** (2 * math.ceil(math.log2(max(diam / delta, 1.0001))))
            assert len(net) <= bound
            checked += 1
        scale = space.min_positive_distance()
        scaled = MetricSpace.from_coords(space.coords / scale, d=2)
        nets = build_net_hierarchy(scaled)
        for lvl in range(1, len(nets)):
            ground = nets[lvl - 1].centers
            if len(ground) < 2:
                continue
            sub = scaled.pdist_block(ground, ground)
            d_ground = float(sub.max())
            delta = 2.0 ** (lvl - 2)
            if d_ground <= delta:
                continue
            bound = 2.0 ** (2 * math.ceil(math.log2(d_ground / delta)))
            assert len(nets[lvl]) <= bound
            checked += 1
    print(f"\nACCEPTANCE 5 net-packing: PASS ({checked} nets within the "
          f"cardinality bound)")


# ---------------------------------------------------------------------------
# 6 - 11. End-to-end schemes
# ---------------------------------------------------------------------------

def _end_to_end(objective, trials, n_range, k_range, seed0, *, z=None,
                tol=1 + 5 * EPS, use_bootstrap=False):
    rng = np.random.default_rng(seed0)
    success = 0
    runs = []
    for t in range(trials):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        k = int(rng.integers(k_range[0], k_range[1] + 1)) if k_range else None
        inst = random_instance(objective, n, seed0 + 31 * t,
                               n_fac=min(8, n), k=k, z=z)
        if use_bootstrap:
            sol = bootstrap_kmeans(inst, k, EPS, seed=t)
            base_cost = sol.meta["round_costs"][0]
            res = None
        else:
            res = approximate(inst, EPS, seed=t)
            sol = res.solution
            base_cost = res.baseline.cost
        opt = exact_solution(inst)
        opt_cost = opt.meta.get("exact_cost", opt.cost)
        assert sol.cost >= opt_cost - 1e-9, "algorithm beat the exact optimum"
        sol.check(inst)
        if sol.cost <= tol * opt_cost + 1e-12:
            success += 1
        runs.append((inst, sol, opt_cost, base_cost))
    return success, runs


def test_acceptance_06_fl_end_to_end():
    trials = 100
    t0 = time.time()
    success, runs = _end_to_end("fl", trials, (8, 12), None, 606060)
    elapsed = time.time() - t0
    need = (1 - 2 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    assert elapsed < 300.0, f"fl harness took {elapsed:.0f}s"
    print(f"\nACCEPTANCE 6 fl-end-to-end: PASS ({success}/{trials} within "
          f"{1+5*EPS:.1f}x, need {need:.2f}, {elapsed:.0f}s)")


def test_acceptance_07_kmedian_end_to_end():
    trials = 100
    t0 = time.time()
    success, runs = _end_to_end("kmedian", trials, (8, 12), (1, 3), 707070)
    for inst, sol, _, _ in runs:
        assert len(sol.facilities) <= inst.k, "used more than k centers"
    need = (1 - 3 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    print(f"\nACCEPTANCE 7 kmedian-end-to-end: PASS ({success}/{trials}, "
          f"need {need:.2f}, {time.time()-t0:.0f}s)")


def test_acceptance_08_kmeans_bootstrap():
    trials = 100
    t0 = time.time()
    success, runs = _end_to_end("kmeans", trials, (8, 10), (1, 2), 808080,
                                use_bootstrap=True)
    for inst, sol, _, _ in runs:
        assert len(sol.facilities) <= inst.k
        trace = sol.meta["round_costs"]
        for a, b in zip(trace, trace[1:]):
            assert b <= (1 + EPS) * a + 1e-9, "round trace regressed"
    need = (1 - 3 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    print(f"\nACCEPTANCE 8 kmeans-bootstrap: PASS ({success}/{trials}, "
          f"need {need:.2f}, {time.time()-t0:.0f}s)")


def test_acceptance_09_prize_collecting():
    # exact reduction clause: infinite penalties match the k-median path
    from dmclust.dp import solve_k_dp, solve_pc_dp
    from dmclust.preprocess import build_modified_instance
    for seed in range(3):
        inst = random_instance("pc", 9, 909090 + seed, n_fac=6, k=2)
        inst_inf = inst.replace(penalties=np.full(9, 1e12))
        guide = local_search_kmedian(inst_inf, k=2, seed=0)
        dec = build_decomposition(inst.space, rho=RHO, seed=seed)
        mod = build_modified_instance(inst_inf, guide, dec, PARAMS)
        res_pc = solve_pc_dp(mod, dec, EPS, 2, guide.cost)
        km = inst.replace(objective="kmedian", penalties=None)
        guide_km = local_search_kmedian(km, k=2, seed=0)
        mod_km = build_modified_instance(km, guide_km, dec, PARAMS)
        res_km = solve_k_dp(mod_km, dec, EPS, 2, guide_km.cost, 1)
        assert res_pc.solution.cost == pytest.approx(res_km.solution.cost,
                                                     rel=1e-9)
    trials = 100
    t0 = time.time()
    success, runs = _end_to_end("pc", trials, (8, 10), (1, 2), 919191)
    for inst, sol, _, _ in runs:
        assert len(sol.facilities) <= inst.k
    need = (1 - 3 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    print(f"\nACCEPTANCE 9 prize-collecting: PASS (reduction exact; "
          f"{success}/{trials}, need {need:.2f}, {time.time()-t0:.0f}s)")


def test_acceptance_10_outliers_bicriteria():
    trials = 100
    t0 = time.time()
    z = 2
    success, runs = _end_to_end("outliers", trials, (8, 10), (1, 2),
                                101010, z=z)
    cap = math.ceil((1 + 5 * EPS) * z)
    for inst, sol, _, _ in runs:
        assert len(sol.facilities) <= inst.k, "centers over budget"
        assert sol.outlier_demand(inst) <= cap, "outliers over bicriteria cap"
    need = (1 - 3 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    print(f"\nACCEPTANCE 10 outliers-bicriteria: PASS ({success}/{trials}, "
          f"outliers <= {cap}, {time.time()-t0:.0f}s)")


def test_acceptance_11_kcenter_bicriteria():
    trials = 100
    t0 = time.time()
    rng = np.random.default_rng(111111)
    success = 0
    for t in range(trials):
        n = int(rng.integers(8, 13))
        k = int(rng.integers(1, 4))
        inst = random_instance("kcenter", n, 111111 + 31 * t, n_fac=n, k=k)
        res = approximate(inst, EPS, seed=t)
        opt = exact_kcenter(inst).cost
        greedy = greedy_kcenter(inst, k).cost
        assert greedy <= 2.0 * opt + 1e-9, "greedy baseline above 2x"
        assert len(res.solution.facilities) <= math.ceil((1 + 5 * EPS) * k)
        assert res.solution.cost >= opt - 1e-9
        if res.solution.cost <= (1 + 5 * EPS) * opt + 1e-12:
            success += 1
    need = (1 - 3 * EPS) - 3 * _se(success / trials, trials)
    assert success / trials >= need
    print(f"\nACCEPTANCE 11 kcenter-bicriteria: PASS ({success}/{trials}, "
          f"need {need:.2f}, greedy always <= 2x, {time.time()-t0:.0f}s)")


# ---------------------------------------------------------------------------
# 12. Aspect-ratio preprocessing
# ---------------------------------------------------------------------------

def test_acceptance_12_aspect_ratio_reduction():
    checked = 0
    for seed in range(8):
        inst = random_instance("kmedian", 10, 121212 + seed, n_fac=6, k=2)
        opt = exact_kmedian(inst)
        gamma = local_search_kmedian(inst, k=2, seed=0).cost
        subs, info = reduce_aspect_ratio(inst, EPS, gamma)
        n = inst.space.n
        for ratio in info.aspect_ratios:
            assert ratio <= 16.0 * n ** 5 / EPS
        tables = []
        for sub in subs:
            tab = []
            k_hi = min(sub.instance.k, len(sub.instance.facilities))
            for kk in range(0, k_hi + 1):
                if kk == 0:
                    if len(sub.instance.clients):
                        continue
                    tab.append((0.0, 0))
                    continue
                tab.append((exact_kmedian(sub.instance, k=kk).cost, kk))
            tables.append(tab)
        combined, choice = combine_subinstance_solutions(tables, inst.k)
        assert combined <= (1 + EPS / n) * opt.cost + 1e-9
        assert combined >= opt.cost - EPS * opt.cost / n - 1e-9
        sols = [exact_kmedian(sub.instance, k=max(tab[ci][1], 1))
                for sub, tab, ci in zip(subs, tables, choice)]
        lifted = lift_reduction(inst, subs, sols)
        assert lifted.cost <= combined + EPS * opt.cost / n + 1e-9
        checked += 1
    print(f"\nACCEPTANCE 12 aspect-ratio-preprocessing: PASS "
          f"({checked} oracle instances, bounds exact)")


# ---------------------------------------------------------------------------
# 13. Structured-solution validator
# ---------------------------------------------------------------------------

def test_acceptance_13_structured_solution():
    eps = 0.2   # the cut-level bound's derivation needs eps <= 1/5
    params = BadlyCutParams(eps, 1, 2)
    inst = random_instance("kmedian", 12, 131313, n_fac=8, k=3)
    guide = local_search_kmedian(inst, k=3, seed=0)
    rho = default_rho(params)
    trials = 500
    t0 = time.time()
    admissible = 0
    violations = 0
    for s in range(trials):
        dec = build_decomposition(inst.space, rho=rho, seed=s)
        rep = validate_structured_solution(inst, dec, guide, params, seed=s)
        admissible += rep.admissible
        violations += len(rep.cut_level_violations)
        # removal-cost averaging statistic stays within a generous constant
        assert rep.removal_cost_sum <= 10.0 * (rep.cost_opt + rep.cost_l)
    rate = admissible / trials
    need = 1 - eps / 2 - 3 * _se(rate, trials)
    assert rate >= need, f"admissible rate {rate} below {need}"
    assert violations == 0, f"{violations} cut-level bound violations"
    print(f"\nACCEPTANCE 13 structured-solution: PASS "
          f"(admissible {admissible}/{trials}, 0 cut-level violations, "
          f"{time.time()-t0:.1f}s)")


# ---------------------------------------------------------------------------
# 14. Near-linear scaling
# ---------------------------------------------------------------------------

def test_acceptance_14_near_linear_scaling():
    from dmclust.cli import RunConfig, scaling
    t0 = time.time()
    report = scaling(RunConfig(objective="fl", epsilon=EPS, seed=5),
                     sizes=(2000, 4000, 8000), reps=3)
    assert report["ok"], f"doubling ratios {report['doubling_ratios']}"
    for ratio in report["doubling_ratios"]:
        assert ratio <= 3.0
    rows = "; ".join(f"n={r['n']}:{r['median_seconds']:.1f}s"
                     for r in report["rows"])
    print(f"\nACCEPTANCE 14 near-linear-scaling: PASS ({rows}; ratios "
          f"{[round(r, 2) for r in report['doubling_ratios']]}, "
          f"{time.time()-t0:.0f}s total)")
