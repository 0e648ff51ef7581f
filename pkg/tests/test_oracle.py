"""Exact solvers: trivial values, enumerator cross-checks, validator wiring."""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from dmclust.instance import ClusteringInstance, evaluate_facilities
from dmclust.oracle import (OracleSizeError, exact_cost_second_enumerator,
                            exact_fl, exact_kcenter, exact_kmedian,
                            exact_outliers, exact_pc, exact_solution,
                            portal_respecting_optimum,
                            validate_structured_solution)
from dmclust.split_tree import BadlyCutParams, build_decomposition, default_rho
from dmclust.baselines import local_search_kmedian

from conftest import line_space, random_instance


def fl_instance(points, opening, clients=None, facilities=None):
    space = line_space(points)
    n = len(points)
    return ClusteringInstance(
        space=space,
        clients=np.arange(n) if clients is None else np.asarray(clients),
        facilities=np.arange(n) if facilities is None else np.asarray(facilities),
        objective="fl",
        opening_costs=np.asarray(opening, dtype=float),
    )


# ---------------------------------------------------------------------------
# exact_fl
# ---------------------------------------------------------------------------

def test_fl_one_client_one_facility():
    # client at 0, facility at distance 2 with opening cost 1: the only
    # feasible solution opens it, total 1 + 2 = 3
    inst = fl_instance([0.0, 2.0], opening=[1.0], clients=[0], facilities=[1])
    sol = exact_fl(inst)
    assert sol.cost == pytest.approx(3.0)
    assert sol.facilities == (1,)


def test_fl_symmetric_tie():
    # two facilities symmetric around one client: either argmin accepted
    inst = fl_instance([0.0, -1.0, 1.0], opening=[0.5, 0.5],
                       clients=[0], facilities=[1, 2])
    sol = exact_fl(inst)
    assert sol.cost == pytest.approx(1.5)
    assert sol.facilities in ((1,), (2,))


def test_fl_cap():
    inst = random_instance("fl", 25, 0, n_fac=25)
    with pytest.raises(OracleSizeError):
        exact_fl(inst)


# ---------------------------------------------------------------------------
# k-mode oracles
# ---------------------------------------------------------------------------

def test_k_equals_f_costs():
    inst = random_instance("kmedian", 8, 1, n_fac=8, k=8)
    sol = exact_kmedian(inst)
    assert sol.cost == pytest.approx(0.0)
    kc = random_instance("kcenter", 8, 2, n_fac=8, k=8)
    assert exact_kcenter(kc).cost == pytest.approx(0.0)


def test_outliers_all_dropped():
    inst = random_instance("outliers", 6, 3, n_fac=3, k=1, z=6)
    assert exact_outliers(inst).cost == pytest.approx(0.0)


def test_kcenter_line_enumeration():
    # 4 points on a line, k=2: full enumeration gives OPT = 1
    space = line_space([0.0, 1.0, 2.0, 3.0])
    inst = ClusteringInstance(space=space, clients=np.arange(4),
                              facilities=np.arange(4), objective="kcenter", k=2)
    sol = exact_kcenter(inst)
    best = min(
        max(min(space.dist(c, f) for f in combo) for c in range(4))
        for combo in itertools.combinations(range(4), 2))
    assert sol.cost == pytest.approx(best) == pytest.approx(1.0)
    # the optimum is a realized pairwise distance
    dists = {round(space.dist(a, b), 9) for a in range(4) for b in range(4)}
    assert round(sol.cost, 9) in dists


def test_pc_penalties_zero_and_infinite():
    inst = random_instance("pc", 7, 4, n_fac=4, k=2)
    zero = inst.replace(penalties=np.zeros(7))
    assert exact_pc(zero).cost == pytest.approx(0.0)
    inf = inst.replace(penalties=np.full(7, 1e18))
    km = inst.replace(objective="kmedian", penalties=None)
    assert exact_pc(inf).cost == pytest.approx(exact_kmedian(km).cost)


@pytest.mark.parametrize("objective", ["fl", "kmedian", "kmeans", "pc",
                                       "outliers", "kcenter"])
def test_second_enumerator_agrees(objective):
    for seed in range(8):
        inst = random_instance(objective, 7, 900 + seed, n_fac=5, k=2, z=1)
        first = exact_solution(inst)
        first_cost = first.meta.get("exact_cost", first.cost)
        assert exact_cost_second_enumerator(inst) == pytest.approx(first_cost)


def test_oracle_beats_every_feasible_set():
    inst = random_instance("kmedian", 9, 77, n_fac=6, k=2)
    opt = exact_kmedian(inst).cost
    rng = np.random.default_rng(0)
    for _ in range(20):
        combo = rng.choice(inst.facilities, size=2, replace=False)
        assert evaluate_facilities(inst, combo).cost >= opt - 1e-12


# ---------------------------------------------------------------------------
# portal-respecting optimum
# ---------------------------------------------------------------------------

def test_portal_optimum_matches_unrestricted_when_all_portals():
    inst = random_instance("fl", 6, 5, n_fac=4)
    dec = build_decomposition(inst.space, rho=1e-7, seed=2)
    assert portal_respecting_optimum(inst, dec) == \
        pytest.approx(exact_fl(inst).cost)


def test_portal_optimum_at_least_unrestricted():
    inst = random_instance("fl", 6, 8, n_fac=4)
    dec = build_decomposition(inst.space, rho=0.25, seed=3)
    assert portal_respecting_optimum(inst, dec) >= exact_fl(inst).cost - 1e-12


# ---------------------------------------------------------------------------
# structured-solution validator
# ---------------------------------------------------------------------------

def test_validator_no_badly_cut_seed():
    inst = random_instance("kmedian", 10, 4, n_fac=6, k=3)
    params = BadlyCutParams(0.2, 1, 2)
    guide = local_search_kmedian(inst, k=3, seed=1)
    for seed in range(5):
        dec = build_decomposition(inst.space, rho=default_rho(params), seed=seed)
        rep = validate_structured_solution(inst, dec, guide, params, seed=seed)
        if not rep.badly_cut_facilities:
            assert rep.admissible
            assert not rep.cut_level_violations
            assert rep.cost_step1 <= 10 * (rep.cost_opt + rep.cost_l)
            return
    pytest.skip("all probed seeds had badly-cut facilities")


@pytest.mark.parametrize("objective", ["kmedian", "kmeans", "pc", "outliers"])
def test_validator_modes_run_clean(objective):
    inst = random_instance(objective, 9, 11, n_fac=5, k=2, z=1)
    params = BadlyCutParams(0.2, 1 if objective != "kmeans" else 2, 2)
    guide = local_search_kmedian(inst, k=2, seed=0, p=inst.p)
    dec = build_decomposition(inst.space, rho=default_rho(params), seed=0)
    rep = validate_structured_solution(inst, dec, guide, params, seed=0)
    assert rep.size_star <= rep.k + len(rep.badly_cut_facilities)
    assert rep.cost_star >= 0
    assert not rep.cut_level_violations
    json_text = rep.to_json()
    assert '"mode"' in json_text
