"""Brute-force exact solvers and the structured-solution validator.

Everything here is desk-scale ground truth: exhaustive enumeration over
facility subsets with hard size caps, a second structurally different
enumerator to cross-check the first, an exhaustive portal-respecting optimum
for tiny instances, and the three-step structured-solution construction used
to validate the probabilistic guarantees seed by seed.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import ClusteringInstance, Solution, evaluate_facilities
from .metric import ParameterError
from .split_tree import (BadlyCutParams, Decomposition, cut_level,
                         is_badly_cut_client, is_badly_cut_facility)

__all__ = [
    "OracleSizeError",
    "exact_fl",
    "exact_kmedian",
    "exact_kmeans",
    "exact_kcenter",
    "exact_pc",
    "exact_outliers",
    "exact_solution",
    "portal_respecting_optimum",
    "validate_structured_solution",
    "StructuredReport",
]

MAX_FL_FACILITIES = 20
MAX_CENTER_SETS = 1_000_000
MAX_EXACT_STEP1_SUBSETS = 10_000


class OracleSizeError(ParameterError):
    """Instance exceeds the brute-force caps."""


# ---------------------------------------------------------------------------
# Cost kernels (vectorized per center set)
# ---------------------------------------------------------------------------

def _set_cost(inst: ClusteringInstance, dmat_cols: np.ndarray) -> float:
    """Objective value given the distance columns of the open facilities."""
    nd = dmat_cols.min(axis=1)
    if inst.objective == "kcenter":
        return float(nd.max()) if len(nd) else 0.0
    per_unit = nd ** inst.p
    if inst.objective == "pc":
        return float(np.sum(np.minimum(per_unit, inst.penalties) * inst.demands))
    if inst.objective == "outliers":
        return _outlier_cost(per_unit, inst.demands, inst.z)
    return float(per_unit @ inst.demands)


def _outlier_cost(per_unit: np.ndarray, demands: np.ndarray, z: int) -> float:
    """Drop the z most expensive demand units (exact for fixed centers)."""
    total = float(per_unit @ demands)
    if z <= 0:
        return total
    order = np.argsort(-per_unit, kind="stable")
    remaining = int(z)
    for i in order:
        if remaining <= 0:
            break
        take = min(remaining, int(demands[i]))
        total -= take * float(per_unit[i])
        remaining -= take
    return max(total, 0.0)


# ---------------------------------------------------------------------------
# Exact solvers
# ---------------------------------------------------------------------------

def exact_fl(inst: ClusteringInstance) -> Solution:
    if inst.objective != "fl":
        raise ParameterError("exact_fl needs an fl instance")
    nf = len(inst.facilities)
    if nf > MAX_FL_FACILITIES:
        raise OracleSizeError(f"|F| = {nf} exceeds the fl oracle cap")
    dmat = inst.client_facility_distances()
    wf = inst.opening_costs
    best_cost, best_mask = np.inf, None
    for mask in range(1, 1 << nf):
        cols = [j for j in range(nf) if mask >> j & 1]
        conn = float(dmat[:, cols].min(axis=1) @ inst.demands)
        cost = conn + float(wf[cols].sum())
        if cost < best_cost - 1e-15:
            best_cost, best_mask = cost, cols
    sol = evaluate_facilities(inst, [int(inst.facilities[j]) for j in best_mask])
    return sol


def _k_oracle(inst: ClusteringInstance, enumerator) -> Solution:
    nf = len(inst.facilities)
    k = min(inst.k, nf)
    if math.comb(nf, k) > MAX_CENTER_SETS:
        raise OracleSizeError("C(|F|, k) exceeds the oracle cap")
    dmat = inst.client_facility_distances()
    best_cost, best_combo = np.inf, None
    for combo in enumerator(nf, k):
        cost = _set_cost(inst, dmat[:, combo])
        if cost < best_cost - 1e-15:
            best_cost, best_combo = cost, combo
    open_fac = [int(inst.facilities[j]) for j in best_combo]
    sol = evaluate_facilities(inst, open_fac)
    # the evaluation may differ from the scan for partial-demand outliers;
    # record the exact scan value as the authoritative cost
    sol.meta["exact_cost"] = float(best_cost)
    sol.cost = float(best_cost) if inst.objective == "outliers" else sol.cost
    return sol


def _combinations(nf: int, k: int):
    return itertools.combinations(range(nf), k)


def _combinations_reversed(nf: int, k: int):
    """Second, structurally different enumerator: DFS from the top index."""
    combo: list[int] = []

    def rec(start):
        if len(combo) == k:
            yield tuple(sorted(combo))
            return
        for j in range(start, -1, -1):
            if j + 1 < k - len(combo):
                break
            combo.append(j)
            yield from rec(j - 1)
            combo.pop()

    yield from rec(nf - 1)


def exact_kmedian(inst, k=None) -> Solution:
    inst = inst if k is None else inst.replace(k=k)
    return _k_oracle(inst, _combinations)


def exact_kmeans(inst, k=None) -> Solution:
    inst = inst if k is None else inst.replace(k=k)
    return _k_oracle(inst, _combinations)


def exact_kcenter(inst, k=None) -> Solution:
    inst = inst if k is None else inst.replace(k=k)
    return _k_oracle(inst, _combinations)


def exact_pc(inst, k=None) -> Solution:
    inst = inst if k is None else inst.replace(k=k)
    return _k_oracle(inst, _combinations)


def exact_outliers(inst, k=None, z=None) -> Solution:
    kw = {}
    if k is not None:
        kw["k"] = k
    if z is not None:
        kw["z"] = z
    inst = inst.replace(**kw) if kw else inst
    return _k_oracle(inst, _combinations)


def exact_solution(inst: ClusteringInstance) -> Solution:
    """Dispatch on the instance's objective."""
    if inst.objective == "fl":
        return exact_fl(inst)
    return _k_oracle(inst, _combinations)


def exact_cost_second_enumerator(inst: ClusteringInstance) -> float:
    """Optimum recomputed with the reversed-order enumerator (cross-check)."""
    if inst.objective == "fl":
        nf = len(inst.facilities)
        dmat = inst.client_facility_distances()
        best = np.inf
        for r in range(1, nf + 1):
            for combo in _combinations_reversed(nf, r):
                cost = float(dmat[:, combo].min(axis=1) @ inst.demands) + \
                    float(inst.opening_costs[list(combo)].sum())
                best = min(best, cost)
        return best
    sol = _k_oracle(inst, _combinations_reversed)
    return float(sol.meta.get("exact_cost", sol.cost))


# ---------------------------------------------------------------------------
# Exhaustive portal-respecting optimum (independent of the DP machinery)
# ---------------------------------------------------------------------------

def _portal_levels(decomp: Decomposition) -> np.ndarray:
    """Max level at which each point is a portal of its own part."""
    n = decomp.space.n
    out = np.zeros(n, dtype=np.int64)
    for x in range(n):
        part = decomp.leaf_of(x)
        best = part.level_hi
        while part.parent is not None:
            part = decomp.parts[part.parent]
            if x in part.portal_set:
                best = part.level_hi
            else:
                break
        out[x] = best
    return out


def portal_respecting_distances(decomp: Decomposition) -> np.ndarray:
    """All-pairs shortest portal-respecting path lengths (tiny n only).

    A hop (a, b) is allowed when every level at which a and b lie in
    different parts has both endpoints as portals of their parts; by portal
    nestedness that reduces to cut_level(a,b) <= min(portal_level(a),
    portal_level(b)).  Floyd-Warshall over the allowed-hop graph then gives
    the optimal portal-respecting connection costs.
    """
    n = decomp.space.n
    if n > 40:
        raise OracleSizeError("portal-respecting APSP is capped at n = 40")
    plev = _portal_levels(decomp)
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for a in range(n):
        for b in range(a + 1, n):
            if cut_level(decomp, a, b) <= min(plev[a], plev[b]):
                dist[a, b] = dist[b, a] = decomp.space.dist(a, b)
    for m in range(n):
        dist = np.minimum(dist, dist[:, [m]] + dist[[m], :])
    return dist


def portal_respecting_optimum(inst: ClusteringInstance,
                              decomp: Decomposition) -> float:
    """Exact optimum over portal-respecting solutions, by full enumeration."""
    pr = portal_respecting_distances(decomp)
    dmat = pr[np.ix_(inst.clients, inst.facilities)]
    nf = len(inst.facilities)
    if inst.objective == "fl":
        best = np.inf
        for mask in range(1, 1 << nf):
            cols = [j for j in range(nf) if mask >> j & 1]
            cost = float(dmat[:, cols].min(axis=1) @ inst.demands) + \
                float(inst.opening_costs[cols].sum())
            best = min(best, cost)
        return best
    best = np.inf
    for combo in itertools.combinations(range(nf), min(inst.k, nf)):
        cols = dmat[:, list(combo)]
        nd = cols.min(axis=1)
        per_unit = nd ** inst.p
        if inst.objective == "pc":
            cost = float(np.sum(np.minimum(per_unit, inst.penalties) * inst.demands))
        elif inst.objective == "outliers":
            cost = _outlier_cost(per_unit, inst.demands, inst.z)
        elif inst.objective == "kcenter":
            cost = float(nd.max())
        else:
            cost = float(per_unit @ inst.demands)
        best = min(best, cost)
    return best


# ---------------------------------------------------------------------------
# Structured-solution validator
# ---------------------------------------------------------------------------

@dataclass
class StructuredReport:
    mode: str
    k: int
    size_star: int
    admissible: bool
    cost_opt: float
    cost_l: float
    cost_step1: float
    cost_star: float
    badly_cut_facilities: list[int]
    step1_exact: bool
    step1_removed: list[int]
    removal_cost_sum: float
    cut_level_violations: list[dict] = field(default_factory=list)
    forced_outliers: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        payload = dict(self.__dict__)
        return json.dumps(payload, sort_keys=True)


def _nearest(space, point: int, pool) -> tuple[int, float]:
    pool = list(pool)
    dd = space.dist_row(point, np.asarray(pool, dtype=np.int64))
    j = int(np.argmin(dd))
    return int(pool[j]), float(dd[j])


def _objective_cost(inst: ClusteringInstance, open_set,
                    forced_outliers=frozenset()) -> float:
    """Objective cost of a facility set, honoring forced outliers."""
    open_arr = np.asarray(sorted(open_set), dtype=np.int64)
    dmat = inst.space.pdist_block(inst.clients, open_arr)
    nd = dmat.min(axis=1)
    if inst.objective == "kcenter":
        mask = np.array([int(c) not in forced_outliers for c in inst.clients])
        return float(nd[mask].max()) if mask.any() else 0.0
    per_unit = nd ** inst.p
    total = 0.0
    dropped = 0
    for i, c in enumerate(inst.clients):
        c = int(c)
        chi = int(inst.demands[i])
        if c in forced_outliers:
            if inst.objective == "pc":
                total += chi * float(inst.penalties[i])
            else:
                dropped += chi
            continue
        if inst.objective == "pc":
            total += chi * min(float(per_unit[i]), float(inst.penalties[i]))
        else:
            total += chi * float(per_unit[i])
    if inst.objective == "outliers":
        # spend whatever drop budget remains on the most expensive clients
        remaining = max(0, inst.z - dropped)
        keep_units, keep_costs = [], []
        for i, c in enumerate(inst.clients):
            if int(c) not in forced_outliers:
                keep_units.append(int(inst.demands[i]))
                keep_costs.append(float(per_unit[i]))
        order = np.argsort(-np.asarray(keep_costs), kind="stable")
        for i in order:
            if remaining <= 0:
                break
            take = min(remaining, keep_units[i])
            total -= take * keep_costs[i]
            remaining -= take
    return total


def validate_structured_solution(inst: ClusteringInstance,
                                 decomp: Decomposition,
                                 guide: Solution,
                                 params: BadlyCutParams,
                                 seed: int = 0) -> StructuredReport:
    """Run the three-step structured-solution construction and report.

    Step 1 removes a small subset of non-closest optimum facilities (exactly
    when the subset count is small, greedily otherwise; a random subset in
    outliers mode).  Step 2 swaps each badly-cut guide facility with its
    nearest optimum facility; Step 3 adds badly-cut guide facilities that
    absorbed no optimum facility.  The report records admissibility, the
    cost ratios, and the per-client cut-level bound violations.
    """
    if inst.objective not in ("kmedian", "kmeans", "pc", "outliers"):
        raise ParameterError("validator supports the k-clustering modes only")
    space = inst.space
    opt = exact_solution(inst)
    opt_fac = list(opt.facilities)
    guide_fac = list(guide.facilities)
    k = min(inst.k, len(inst.facilities))

    # mapping from optimum facilities to their closest guide facility
    l_of: dict[int, int] = {}
    for f in opt_fac:
        l_of[f], _ = _nearest(space, f, guide_fac)
    psi: dict[int, list[int]] = {ell: [] for ell in guide_fac}
    for f, ell in l_of.items():
        psi[ell].append(f)
    l0 = [ell for ell in guide_fac if len(psi[ell]) == 0]
    l_ge2 = [ell for ell in guide_fac if len(psi[ell]) >= 2]
    f_of_ell: dict[int, int] = {}
    for ell in guide_fac:
        if psi[ell]:
            f_of_ell[ell], _ = _nearest(space, ell, psi[ell])
    opt_ge2 = [f for f in opt_fac if len(psi[l_of[f]]) >= 2]
    hot = [f for f in opt_ge2 if f != f_of_ell[l_of[f]]]

    forced_outliers: set[int] = set()
    guide_outliers = set(int(c) for c in guide.outliers)

    # ---- Step 1 ------------------------------------------------------------
    budget = int(math.floor(params.epsilon * len(opt_ge2) / 2.0))
    budget = min(budget, len(hot))
    removed: list[int] = []
    step1_exact = True
    if budget > 0:
        if inst.objective == "outliers":
            rng = np.random.default_rng(seed)
            removed = sorted(int(x) for x in
                             rng.choice(hot, size=budget, replace=False))
            step1_exact = False
        elif math.comb(len(hot), budget) <= MAX_EXACT_STEP1_SUBSETS:
            best = np.inf
            for combo in itertools.combinations(hot, budget):
                cost = _objective_cost(inst, set(opt_fac) - set(combo))
                if cost < best - 1e-15:
                    best, removed = cost, list(combo)
        else:
            step1_exact = False
            pool = set(opt_fac)
            for _ in range(budget):
                pick = min((f for f in hot if f in pool),
                           key=lambda f: _objective_cost(inst, pool - {f}))
                pool.discard(pick)
                removed.append(pick)
    opt_prime = [f for f in opt_fac if f not in set(removed)]
    cost_step1 = _objective_cost(inst, opt_prime)

    # removal-cost averaging statistic over all of H
    removal_cost_sum = sum(
        _objective_cost(inst, set(opt_fac) - {f}) - opt.cost for f in hot)

    # ---- badly-cut sets (w.r.t. the post-step-1 optimum) -------------------
    def opt_dist(x: int) -> float:
        return _nearest(space, x, opt_prime)[1]

    badly = [ell for ell in guide_fac
             if is_badly_cut_facility(decomp, ell, opt_dist(ell), params)]
    badly_outliers = []
    if inst.objective in ("pc", "outliers"):
        badly_outliers = [c for c in guide_outliers
                          if is_badly_cut_facility(decomp, c, opt_dist(c), params)]

    # ---- Steps 2 and 3 ------------------------------------------------------
    star = set(opt_prime)
    for ell in badly:
        if psi[ell]:
            f_ell = f_of_ell[ell]
            if f_ell in star:
                star.discard(f_ell)
                star.add(ell)
                if inst.objective in ("pc", "outliers"):
                    for i, c in enumerate(inst.clients):
                        if int(c) in guide_outliers and \
                                opt.assignment.get(int(c)) == f_ell:
                            forced_outliers.add(int(c))
        else:
            star.add(ell)
    if inst.objective in ("pc", "outliers"):
        forced_outliers.update(badly_outliers)

    cost_star = _objective_cost(inst, star, frozenset(forced_outliers))

    # ---- cut-level clause ----------------------------------------------------
    violations: list[dict] = []
    eps = params.epsilon
    guide_assign = guide.assignment
    for i, c in enumerate(inst.clients):
        c = int(c)
        if c in forced_outliers or c in guide_outliers:
            continue
        l_c = _nearest(space, c, guide_fac)[1]
        opt_c = opt_dist(c)
        pos = c
        lc_target = guide_assign.get(c, -1)
        if lc_target < 0:
            lc_target = _nearest(space, c, guide_fac)[0]
        if is_badly_cut_client(decomp, c, l_c, params):
            pos = lc_target
        star_f, _ = _nearest(space, pos, star)
        if pos == star_f:
            continue
        arg = 4.0 * opt_c + 3.0 * l_c / eps
        if arg <= 0:
            if space.dist(pos, star_f) > 0:
                violations.append({"client": c, "reason": "zero-bound"})
            continue
        bound = math.log2(decomp.to_scaled(arg)) + params.tau_threshold
        lvl = cut_level(decomp, pos, star_f)
        if lvl > bound + 1e-12:
            violations.append({"client": c, "cut_level": int(lvl),
                               "bound": float(bound)})

    return StructuredReport(
        mode=inst.objective,
        k=k,
        size_star=len(star),
        admissible=len(star) <= k,
        cost_opt=float(opt.meta.get("exact_cost", opt.cost)),
        cost_l=float(guide.cost),
        cost_step1=float(cost_step1),
        cost_star=float(cost_star),
        badly_cut_facilities=sorted(badly),
        step1_exact=step1_exact,
        step1_removed=sorted(removed),
        removal_cost_sum=float(removal_cost_sum),
        cut_level_violations=violations,
        forced_outliers=sorted(forced_outliers),
    )
