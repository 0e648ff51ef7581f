"""Constant-factor guide solutions.

The approximation schemes only need *some* constant-factor solution L to
steer the instance surgery and the DP's cost range, so the baselines here
favor simplicity: randomized online facility location for FL, farthest-first
traversal for k-center, and single-swap local search for k-median/k-means
(which also seeds the k-means bootstrap loop).
"""
from __future__ import annotations

import math

import numpy as np

from .instance import ClusteringInstance, Solution, evaluate_facilities
from .metric import ParameterError
from .rng import substream

__all__ = ["meyerson_fl", "greedy_kcenter", "local_search_kmedian",
           "bootstrap_kmeans"]


def meyerson_fl(inst: ClusteringInstance, seed: int = 0) -> Solution:
    """Online facility location: clients arrive in random order and open
    their nearest candidate with probability min(1, demand * d0 / w)."""
    if inst.objective != "fl":
        raise ParameterError("meyerson_fl needs an fl instance")
    rng = substream(seed, "baseline.meyerson")
    order = rng.permutation(len(inst.clients))
    open_fac: list[int] = []
    open_set: set[int] = set()
    wf = inst.opening_cost_of()
    for i in order:
        c = int(inst.clients[i])
        chi = int(inst.demands[i])
        dd = inst.space.dist_row(c, inst.facilities)
        f_near = int(inst.facilities[int(np.argmin(dd))])
        if open_fac:
            d0 = float(inst.space.dist_row(
                c, np.asarray(open_fac, dtype=np.int64)).min())
        else:
            d0 = math.inf
        w = wf[f_near]
        prob = 1.0 if (w <= 0 or not math.isfinite(d0)) else min(1.0, chi * d0 / w)
        if f_near not in open_set and rng.uniform() < prob:
            open_fac.append(f_near)
            open_set.add(f_near)
    if not open_fac:
        open_fac = [int(inst.facilities[0])]
    return evaluate_facilities(inst, open_fac)


def greedy_kcenter(inst: ClusteringInstance, k: int) -> Solution:
    """Farthest-first traversal; 2-approximate when facilities = points."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    k = min(k, len(inst.facilities))
    centers = [int(inst.facilities[0])]
    fac_d = inst.space.dist_row(centers[0], inst.facilities)
    while len(centers) < k:
        j = int(np.argmax(fac_d))
        if fac_d[j] <= 0:
            break
        centers.append(int(inst.facilities[j]))
        fac_d = np.minimum(fac_d, inst.space.dist_row(centers[-1],
                                                      inst.facilities))
    return evaluate_facilities(inst, centers)


def local_search_kmedian(inst: ClusteringInstance, k: int,
                         swap_budget: int = 2000, seed: int = 0,
                         p: int | None = None) -> Solution:
    """Single-swap local search on the sum-of-distances^p objective.

    Starts from a farthest-first seeding, tries swaps in a seeded random
    order, takes the first improvement, and stops at a local optimum or when
    the swap budget runs out.  The returned Solution is evaluated under the
    instance's own objective (penalties and outlier budgets included).
    """
    if k > len(inst.facilities):
        k = len(inst.facilities)
    p = inst.p if p is None else p
    rng = substream(seed, "baseline.localsearch")
    dmat = inst.client_facility_distances() ** p
    weights = inst.demands.astype(float)
    fac_ids = list(range(len(inst.facilities)))

    def set_cost(cols: list[int]) -> float:
        return float(dmat[:, cols].min(axis=1) @ weights)

    # greedy-addition start: repeatedly add the facility that helps most
    start = [min(fac_ids, key=lambda f: float(dmat[:, f] @ weights))]
    while len(start) < k:
        col_min = dmat[:, start].min(axis=1)
        nxt = min((f for f in fac_ids if f not in start),
                  key=lambda f: float(np.minimum(col_min, dmat[:, f]) @ weights))
        start.append(nxt)

    current = sorted(start)
    best_cost = set_cost(current)
    evals = 0
    improved = True
    while improved and evals < swap_budget:
        improved = False
        outs = list(current)
        ins = [f for f in fac_ids if f not in current]
        rng.shuffle(outs)
        rng.shuffle(ins)
        for f_out in outs:
            for f_in in ins:
                evals += 1
                trial = sorted(set(current) - {f_out} | {f_in})
                cost = set_cost(trial)
                if cost < best_cost - 1e-12:
                    current, best_cost = trial, cost
                    improved = True
                    break
                if evals >= swap_budget:
                    break
            if improved or evals >= swap_budget:
                break
    open_fac = [int(inst.facilities[j]) for j in current]
    return evaluate_facilities(inst, open_fac)


def bootstrap_kmeans(inst: ClusteringInstance, k: int, epsilon: float,
                     rounds: int | None = None, seed: int = 0) -> Solution:
    """Iterate the k-means scheme, feeding each round's output as the next
    guide; a constant-factor k-median solution is an O(n)-factor k-means
    start, and O(log n) rounds shrink that to 1 + O(eps)."""
    from .pipeline import approximate

    if inst.objective != "kmeans":
        raise ParameterError("bootstrap_kmeans needs a kmeans instance")
    n = max(2, len(inst.clients))
    if rounds is None:
        rounds = max(1, int(math.ceil(math.log(n))))
    guide = local_search_kmedian(inst, k=k, seed=seed, p=2)
    best = guide
    trace = [float(guide.cost)]
    for r in range(rounds):
        if best.cost <= 0:
            break
        result = approximate(inst, epsilon=epsilon, seed=seed * 10_007 + r,
                             guide=best)
        trace.append(float(result.solution.cost))
        if result.solution.cost < best.cost:
            best = result.solution
    best.meta["round_costs"] = trace
    return best
