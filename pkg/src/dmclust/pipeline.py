"""End-to-end approximation schemes.

For each objective: compute a constant-factor guide solution, split the
instance into polynomial-aspect-ratio sub-instances (sum objectives only),
draw a random decomposition per sub-instance, perform the badly-cut surgery,
run the portal-respecting DP, lift the result back, and keep the better of
the lifted solution and the guide.  Center budgets across sub-instances are
allocated by combining the per-sub cost/center frontiers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import greedy_kcenter, local_search_kmedian, meyerson_fl
from .dp import (DpResult, solve_fl_dp, solve_k_dp, solve_kcenter_dp,
                 solve_outliers_dp, solve_pc_dp)
from .instance import ClusteringInstance, Solution, evaluate_facilities
from .metric import ParameterError
from .preprocess import (InfeasibleError, SubInstance,
                         build_kcenter_instance, build_modified_instance,
                         combine_subinstance_solutions, lift_solution,
                         reduce_aspect_ratio)
from .rng import substream
from .split_tree import BadlyCutParams, build_decomposition, default_rho

__all__ = ["PipelineResult", "approximate", "baseline_for"]

SUM_OBJECTIVES = ("fl", "kmedian", "kmeans")


@dataclass
class PipelineResult:
    solution: Solution          # on the original instance
    baseline: Solution
    used_guide: bool
    info: dict = field(default_factory=dict)
    dp_results: list = field(default_factory=list)


def baseline_for(inst: ClusteringInstance, seed: int = 0) -> Solution:
    """Constant-factor guide per objective."""
    if inst.objective == "fl":
        return meyerson_fl(inst, seed=seed)
    if inst.objective == "kcenter":
        return greedy_kcenter(inst, inst.k)
    p = 2 if inst.objective == "kmeans" else 1
    return local_search_kmedian(inst, inst.k, seed=seed, p=p)


def _identity_sub(inst: ClusteringInstance) -> SubInstance:
    n = inst.space.n
    return SubInstance(instance=inst, orig_points=np.arange(n),
                       groups={i: [i] for i in range(n)},
                       facility_pick={int(f): int(f) for f in inst.facilities})


def _sub_guide(sub: SubInstance, guide: Solution) -> Solution:
    rep_fac = set()
    local_fac = {sub.facility_pick[int(f)]: int(f)
                 for f in sub.instance.facilities}
    for f in guide.facilities:
        if int(f) in local_fac:
            rep_fac.add(local_fac[int(f)])
        else:
            # the facility was merged away; use its group representative
            for loc, orig in local_fac.items():
                if int(f) in sub.groups.get(loc, []):
                    rep_fac.add(loc)
                    break
    if not rep_fac:
        rep_fac = {int(sub.instance.facilities[0])}
    if sub.instance.objective != "fl" and sub.instance.k is not None:
        rep_fac = set(sorted(rep_fac)[: sub.instance.k])
    return evaluate_facilities(sub.instance, sorted(rep_fac))


def approximate(inst: ClusteringInstance, epsilon: float, seed: int = 0,
                guide: Solution | None = None, rho: float | None = None,
                max_cells: int = 30_000, dp_caps: dict | None = None,
                skip_reduction: bool = False) -> PipelineResult:
    """Run the full scheme for the instance's objective."""
    if len(inst.clients) == 0:
        raise ParameterError("instance has no clients")
    p = inst.p if inst.p in (1, 2) else 1
    params = BadlyCutParams(epsilon=epsilon, p=p, d=inst.space.d)
    if guide is None:
        guide = baseline_for(inst, seed=seed)
    if guide.cost <= 0:
        return PipelineResult(solution=guide, baseline=guide, used_guide=True,
                              info={"reason": "guide already optimal"})
    gamma = float(guide.cost)
    rho_val = rho if rho is not None else \
        default_rho(params, kcenter=inst.objective == "kcenter")

    info: dict = {"guide_cost": gamma, "rho": rho_val,
                  "kappa": params.kappa, "tau": params.tau_threshold}
    if inst.objective in SUM_OBJECTIVES and not skip_reduction:
        subs, red = reduce_aspect_ratio(inst, epsilon, gamma)
        info["reduction"] = {
            "components": red.n_components,
            "aspect_ratios": red.aspect_ratios,
            "contracted_groups": red.contracted_groups,
        }
    else:
        subs = [_identity_sub(inst)]

    dp_results: list[DpResult | None] = []
    sub_solutions: list[Solution | None] = []
    relocations = 0
    for i, sub in enumerate(subs):
        if len(sub.instance.clients) == 0:
            dp_results.append(None)
            sub_solutions.append(None)
            continue
        sguide = guide if len(subs) == 1 and not sub_needs_remap(sub) \
            else _sub_guide(sub, guide)
        dseed = int(substream(seed, f"pipeline.decomp.{i}").integers(2 ** 31))
        dec = build_decomposition(sub.instance.space, rho=rho_val, seed=dseed)
        res, mod = _solve_sub(sub.instance, sguide, dec, params, epsilon,
                              gamma, max_cells, dp_caps)
        if res is None:
            dp_results.append(None)
            sub_solutions.append(sguide)
            continue
        relocations += len(mod.relocations)
        dp_results.append(res)
        sub_solutions.append(lift_solution(mod, res.solution))

    lifted = _combine_and_lift(inst, subs, dp_results, sub_solutions, guide)
    info["relocations"] = relocations
    used_guide = lifted is None or guide.cost <= lifted.cost + 1e-12
    solution = guide if used_guide else lifted
    if lifted is not None and not used_guide:
        solution.meta.setdefault("lifted", True)
    return PipelineResult(solution=solution, baseline=guide,
                          used_guide=used_guide, info=info,
                          dp_results=[r for r in dp_results if r is not None])


def sub_needs_remap(sub: SubInstance) -> bool:
    return not np.array_equal(sub.orig_points, np.arange(len(sub.orig_points)))


def _solve_sub(inst, sguide, dec, params, epsilon, gamma, max_cells,
               dp_caps=None):
    """Surgery + DP for one sub-instance; None when the guide is degenerate."""
    if sguide.cost <= 0 and inst.objective != "fl":
        return None, None
    try:
        if inst.objective == "kcenter":
            mod = build_kcenter_instance(inst, sguide, dec, params, gamma)
            res = solve_kcenter_dp(mod, dec, epsilon, inst.k, gamma,
                                   max_cells=max_cells, caps=dp_caps)
        else:
            mod = build_modified_instance(inst, sguide, dec, params)
            if inst.objective == "fl":
                res = solve_fl_dp(mod, dec, epsilon, max_cells=max_cells,
                                  guide_cost=sguide.cost, caps=dp_caps)
            elif inst.objective == "pc":
                res = solve_pc_dp(mod, dec, epsilon, inst.k, sguide.cost,
                                  max_cells=max_cells, caps=dp_caps)
            elif inst.objective == "outliers":
                res = solve_outliers_dp(mod, dec, epsilon, inst.k, inst.z,
                                        sguide.cost, max_cells=max_cells,
                                        caps=dp_caps)
            else:
                res = solve_k_dp(mod, dec, epsilon, inst.k, sguide.cost,
                                 inst.p, max_cells=max_cells, caps=dp_caps)
    except InfeasibleError:
        return None, None
    return res, mod


def _combine_and_lift(inst, subs, dp_results, sub_solutions, guide):
    """Merge per-sub solutions into one solution on the original instance."""
    live = [(sub, res, sol) for sub, res, sol in
            zip(subs, dp_results, sub_solutions) if sol is not None]
    if not live:
        return None
    if inst.objective in ("kmedian", "kmeans") and len(live) > 1:
        tables = []
        for sub, res, _ in live:
            tables.append(res.frontier if res is not None else [(0.0, 0)])
        try:
            _, choice = combine_subinstance_solutions(tables, inst.k)
        except InfeasibleError:
            return None
        open_orig: list[int] = []
        for (sub, res, _), ci in zip(live, choice):
            if res is None:
                continue
            bucket_cost, _ = res.frontier[ci]
            opened, _ = res.reconstruct_frontier(bucket_cost)
            open_orig.extend(sub.facility_pick[int(f)] for f in opened)
        if not open_orig:
            return None
        return evaluate_facilities(inst, sorted(set(open_orig))[: inst.k]
                                   if inst.k else sorted(set(open_orig)))
    # single sub (or fl): union the opened facilities
    open_orig = []
    budget = 0
    for sub, res, sol in live:
        for f in sol.facilities:
            open_orig.append(sub.facility_pick[int(f)])
        if inst.objective == "outliers":
            budget += sol.outlier_demand(sub.instance)
    if not open_orig:
        return None
    if inst.objective != "fl" and inst.k is not None:
        open_orig = sorted(set(open_orig))
        if len(open_orig) > inst.k and inst.objective != "kcenter":
            open_orig = open_orig[: inst.k]
    kw = {}
    if inst.objective == "outliers":
        kw["outlier_budget"] = budget
    return evaluate_facilities(inst, sorted(set(open_orig)), **kw)
