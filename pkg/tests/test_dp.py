"""Portal-respecting DP: exactness, soundness, monotonicity, budgets."""
from __future__ import annotations

import numpy as np
import pytest

from dmclust.baselines import greedy_kcenter, local_search_kmedian, meyerson_fl
from dmclust.dp import (compute_budget, solve_fl_dp, solve_k_dp,
                        solve_kcenter_dp, solve_outliers_dp, solve_pc_dp)
from dmclust.instance import OUTLIER, ClusteringInstance, evaluate_facilities
from dmclust.oracle import (exact_fl, exact_kmedian,
                            portal_respecting_optimum)
from dmclust.preprocess import build_kcenter_instance, build_modified_instance
from dmclust.split_tree import BadlyCutParams, build_decomposition, default_rho

from conftest import line_space, random_instance


def make_mod(inst, guide, seed=0, rho=None, eps=0.3):
    params = BadlyCutParams(eps, 1 if inst.p == 1 else 2, inst.space.d)
    rho = default_rho(params) if rho is None else rho
    dec = build_decomposition(inst.space, rho=rho, seed=seed)
    mod = build_modified_instance(inst, guide, dec, params)
    return mod, dec


# ---------------------------------------------------------------------------
# facility location
# ---------------------------------------------------------------------------

def test_fl_trivial_colocated():
    space = line_space([0.0, 5.0])
    inst = ClusteringInstance(space=space, clients=np.array([0]),
                              facilities=np.array([0]), objective="fl",
                              opening_costs=np.array([1.0]))
    guide = meyerson_fl(inst, seed=0)
    mod, dec = make_mod(inst, guide)
    res = solve_fl_dp(mod, dec, epsilon=0.3)
    assert res.solution.cost == pytest.approx(1.0)
    assert res.opened == (0,)


def test_fl_exact_mode_equals_unrestricted_when_all_portals():
    # with every point a portal and no quantization the DP must return the
    # plain optimum exactly
    for seed in range(6):
        inst = random_instance("fl", 8, 300 + seed, n_fac=5)
        guide = meyerson_fl(inst, seed=1)
        mod, dec = make_mod(inst, guide, seed=seed, rho=1e-7)
        res = solve_fl_dp(mod, dec, epsilon=0.3, quantize=False)
        opt = exact_fl(mod_as_instance(mod)).cost
        assert res.dp_value == pytest.approx(opt, rel=1e-9)
        assert res.solution.cost == pytest.approx(opt, rel=1e-9)


def mod_as_instance(mod):
    """The modified instance as a plain instance (entries at positions)."""
    inst = mod.base
    pos = {}
    for e in mod.entries:
        pos[e.position] = pos.get(e.position, 0) + e.chi
    clients = np.asarray(sorted(pos), dtype=np.int64)
    demands = np.asarray([pos[c] for c in clients], dtype=np.int64)
    return ClusteringInstance(space=inst.space, clients=clients,
                              facilities=inst.facilities, objective="fl",
                              demands=demands,
                              opening_costs=inst.opening_costs)


def test_fl_dp_value_at_least_portal_optimum():
    # quantized DP value must never undercut the exact portal-respecting
    # optimum computed by exhaustive enumeration
    for seed in range(8):
        inst = random_instance("fl", 6, 400 + seed, n_fac=4)
        guide = meyerson_fl(inst, seed=2)
        params = BadlyCutParams(0.3, 1, 2)
        dec = build_decomposition(inst.space, rho=0.25, seed=seed)
        mod = build_modified_instance(inst, guide, dec, params)
        res = solve_fl_dp(mod, dec, epsilon=0.3)
        p_opt = portal_respecting_optimum(mod_as_instance(mod), dec)
        assert res.dp_value >= p_opt - 1e-9


def test_fl_declared_value_dominates_true_cost():
    for seed in range(5):
        inst = random_instance("fl", 10, 500 + seed, n_fac=6)
        guide = meyerson_fl(inst, seed=3)
        mod, dec = make_mod(inst, guide, seed=seed, rho=1.0 / 8.0)
        res = solve_fl_dp(mod, dec, epsilon=0.3)
        assert res.solution.cost <= res.dp_value + 1e-9


# ---------------------------------------------------------------------------
# k-median / k-means
# ---------------------------------------------------------------------------

def test_k_dp_colocated_clients():
    space = line_space([0.0, 3.0, 7.0])
    inst = ClusteringInstance(space=space, clients=np.arange(3),
                              facilities=np.arange(3), objective="kmedian", k=3)
    guide = local_search_kmedian(inst, k=3, seed=0)
    mod, dec = make_mod(inst, guide, eps=0.3)
    # guide cost is 0 here; feed a positive stand-in cost for the grid
    res = solve_k_dp(mod, dec, epsilon=0.3, k=3, l_cost=1.0, p=1)
    assert res.solution.cost == pytest.approx(0.0)
    assert len(res.opened) <= 3


def test_k_dp_respects_k_and_dominates_cost():
    for seed in range(6):
        inst = random_instance("kmedian", 10, 600 + seed, n_fac=6, k=2)
        guide = local_search_kmedian(inst, k=2, seed=0)
        mod, dec = make_mod(inst, guide, seed=seed)
        res = solve_k_dp(mod, dec, epsilon=0.3, k=2, l_cost=guide.cost, p=1)
        assert len(res.opened) <= 2
        assert res.solution.cost <= res.dp_value + 1e-9
        # monotone frontier: more budget never needs more centers
        cents = [c for _, c in res.frontier]
        assert all(a >= b for a, b in zip(cents, cents[1:]))


def test_k_dp_near_optimal_with_tiny_rho():
    hits = 0
    trials = 10
    for seed in range(trials):
        inst = random_instance("kmedian", 9, 700 + seed, n_fac=5, k=2)
        guide = local_search_kmedian(inst, k=2, seed=0)
        mod, dec = make_mod(inst, guide, seed=seed, rho=1e-7, eps=0.3)
        res = solve_k_dp(mod, dec, epsilon=0.3, k=2, l_cost=guide.cost, p=1)
        opt = exact_kmedian(inst).cost
        lifted = evaluate_facilities(inst, res.opened)
        if lifted.cost <= (1 + 5 * 0.3) * opt + 1e-9:
            hits += 1
    assert hits >= trials - 2


# ---------------------------------------------------------------------------
# prize-collecting and outliers
# ---------------------------------------------------------------------------

def test_pc_all_penalties_zero():
    inst = random_instance("pc", 6, 31, n_fac=3, k=1)
    inst = inst.replace(penalties=np.zeros(6))
    guide = local_search_kmedian(inst, k=1, seed=0)
    # guide cost 0: everything pays zero penalty; nothing to optimize
    assert guide.cost == pytest.approx(0.0)


def test_pc_infinite_penalties_reduces_to_kmedian():
    for seed in range(4):
        inst = random_instance("pc", 8, 800 + seed, n_fac=5, k=2)
        inst_inf = inst.replace(penalties=np.full(8, 1e9))
        guide = local_search_kmedian(inst_inf, k=2, seed=0)
        mod, dec = make_mod(inst_inf, guide, seed=seed, rho=1e-7)
        res_pc = solve_pc_dp(mod, dec, epsilon=0.3, k=2, l_cost=guide.cost)
        km = inst.replace(objective="kmedian", penalties=None)
        guide_km = local_search_kmedian(km, k=2, seed=0)
        mod2, dec2 = make_mod(km, guide_km, seed=seed, rho=1e-7)
        res_km = solve_k_dp(mod2, dec2, epsilon=0.3, k=2,
                            l_cost=guide_km.cost, p=1)
        assert res_pc.solution.cost == pytest.approx(res_km.solution.cost,
                                                     rel=1e-6)
        assert not res_pc.outlier_clients


def test_outliers_budget_zero_matches_k_dp():
    for seed in range(3):
        inst = random_instance("outliers", 8, 900 + seed, n_fac=5, k=2, z=0)
        guide = local_search_kmedian(inst, k=2, seed=0)
        mod, dec = make_mod(inst, guide, seed=seed, rho=1e-7)
        res = solve_outliers_dp(mod, dec, epsilon=0.3, k=2, z=0,
                                l_cost=guide.cost)
        km = inst.replace(objective="kmedian", z=None)
        guide2 = local_search_kmedian(km, k=2, seed=0)
        mod2, dec2 = make_mod(km, guide2, seed=seed, rho=1e-7)
        res2 = solve_k_dp(mod2, dec2, epsilon=0.3, k=2, l_cost=guide2.cost, p=1)
        assert res.solution.cost == pytest.approx(res2.solution.cost, rel=1e-6)


def test_outliers_all_dropped():
    inst = random_instance("outliers", 6, 41, n_fac=3, k=1, z=6)
    guide = local_search_kmedian(inst, k=1, seed=0)
    mod, dec = make_mod(inst, guide, seed=0, rho=1e-7)
    # the guide drops everything at cost 0; any positive grid scale works
    res = solve_outliers_dp(mod, dec, epsilon=0.3, k=1, z=6, l_cost=1.0)
    assert res.solution.cost == pytest.approx(0.0)
    assert len(res.outlier_clients) == 6


# ---------------------------------------------------------------------------
# k-center
# ---------------------------------------------------------------------------

def test_kcenter_k_equals_n():
    inst = random_instance("kcenter", 6, 51, n_fac=6, k=6)
    guide = greedy_kcenter(inst, 6)
    assert guide.cost == pytest.approx(0.0)


def test_kcenter_dp_reasonable():
    for seed in range(4):
        inst = random_instance("kcenter", 10, 950 + seed, n_fac=10, k=2)
        guide = greedy_kcenter(inst, 2)
        params = BadlyCutParams(0.3, 1, 2)
        rho = default_rho(params, kcenter=True)
        dec = build_decomposition(inst.space, rho=rho, seed=seed)
        mod = build_kcenter_instance(inst, guide, dec, params, guide.cost)
        res = solve_kcenter_dp(mod, dec, epsilon=0.3, k=2, gamma=guide.cost)
        assert len(res.opened) <= 2
        assert res.solution.cost <= res.dp_value + 1e-9


# ---------------------------------------------------------------------------
# budget
# ---------------------------------------------------------------------------

def test_budget_colocated_zero():
    space = line_space([0.0, 1.0])
    inst = ClusteringInstance(space=space, clients=np.array([0]),
                              facilities=np.array([0]), objective="fl",
                              opening_costs=np.array([0.0]))
    sol = evaluate_facilities(inst, [0])
    dec = build_decomposition(space, rho=0.1, seed=0)
    assert compute_budget(sol, dec, 0.3).total == 0.0


def test_budget_single_pair_formula():
    space = line_space([0.0, 1.0, 5.0, 11.0])
    dec = build_decomposition(space, rho=0.1, seed=4)
    from dmclust.instance import Solution
    sol = Solution(facilities=(2,), assignment={0: 2}, cost=0.0)
    lvl = dec.cut_level(0, 2)
    b = compute_budget(sol, dec, 0.3)
    assert b.total == pytest.approx(0.3 * 2.0 ** lvl)


def test_budget_matches_naive_recomputation():
    inst = random_instance("kmedian", 12, 61, n_fac=5, k=3)
    guide = local_search_kmedian(inst, k=3, seed=0)
    dec = build_decomposition(inst.space, rho=0.05, seed=2)
    b = compute_budget(guide, dec, 0.25, demands=inst.demand_of())
    naive = 0.0
    for c, f in guide.assignment.items():
        if f == OUTLIER or c == f:
            continue
        naive += inst.demand_of()[c] * 0.25 * \
            dec.to_original(2.0 ** dec.cut_level(c, f))
    assert b.total == pytest.approx(naive)
