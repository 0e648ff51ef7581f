"""Aspect-ratio reduction, instance surgery, and solution lifting.

`reduce_aspect_ratio` splits an instance into independent sub-instances of
polynomial aspect ratio: distances beyond twice the guide-cost scale are
treated as infinite, connected components are extracted via the spanner,
and edges far below the guide scale are contracted with demand aggregation.
For p = 2 both thresholds live on the distance scale gamma^(1/p), since
gamma is a cost.

`build_modified_instance` relocates every badly-cut client to its guide
facility (the client keeps its identity, demand, and penalty; only its
position changes), and `build_kcenter_instance` instead force-opens a small
ball cover around each badly-cut center and removes the clients it serves.
`lift_solution` maps any solution of the modified instance back to the
original one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instance import ClusteringInstance, Solution, evaluate_facilities
from .metric import MetricSpace, ParameterError, build_spanner
from .split_tree import (BadlyCutParams, Decomposition, is_badly_cut_client,
                         is_badly_cut_kcenter)

__all__ = [
    "ClientEntry",
    "ModifiedInstance",
    "SubInstance",
    "ReductionInfo",
    "InfeasibleError",
    "reduce_aspect_ratio",
    "combine_subinstance_solutions",
    "build_modified_instance",
    "build_kcenter_instance",
    "lift_solution",
    "lift_reduction",
]

CLOSURE_MAX_COMPONENT = 400


class InfeasibleError(RuntimeError):
    """No allocation meets the center budget."""


# ---------------------------------------------------------------------------
# Aspect-ratio reduction
# ---------------------------------------------------------------------------

@dataclass
class SubInstance:
    instance: ClusteringInstance
    orig_points: np.ndarray              # local id -> original representative
    groups: dict[int, list[int]]         # local id -> merged original points
    facility_pick: dict[int, int]        # local facility id -> original facility


@dataclass
class ReductionInfo:
    gamma: float
    long_cutoff: float
    short_cutoff: float
    n_components: int
    aspect_ratios: list[float]
    contracted_groups: int


def _union_find(n):
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return int(x)

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    return find, union


def reduce_aspect_ratio(inst: ClusteringInstance, epsilon: float,
                        gamma: float) -> tuple[list[SubInstance], ReductionInfo]:
    """Split into polynomial-aspect-ratio sub-instances (see module doc)."""
    if gamma <= 0:
        raise ParameterError("gamma must be the positive cost of a baseline")
    n = inst.space.n
    dist_scale = gamma ** (1.0 / inst.p)
    long_cutoff = 2.0 * dist_scale
    short_cutoff = epsilon * dist_scale / n ** 3

    spanner = build_spanner(inst.space)
    find_c, union_c = _union_find(n)   # contraction groups
    find_k, union_k = _union_find(n)   # connected components
    for u, v, w in spanner.edges:
        if w < short_cutoff:
            union_c(u, v)
        if w <= long_cutoff:
            union_k(u, v)

    rep = np.asarray([find_c(i) for i in range(n)])
    comp = np.asarray([find_k(find_c(i)) for i in range(n)])
    contracted = int(np.sum(rep != np.arange(n)))

    demand_of = inst.demand_of()
    penalty_of = inst.penalty_of()
    opening_of = inst.opening_cost_of()
    client_set = set(int(c) for c in inst.clients)
    fac_set = set(int(f) for f in inst.facilities)

    groups_by_rep: dict[int, list[int]] = {}
    for i in range(n):
        groups_by_rep.setdefault(int(rep[i]), []).append(i)

    subs: list[SubInstance] = []
    ratios: list[float] = []
    for comp_id in sorted(set(int(c) for c in np.unique(comp))):
        reps = sorted(r for r in groups_by_rep if comp[r] == comp_id)
        local_of = {r: j for j, r in enumerate(reps)}
        space = _component_space(inst.space, reps, long_cutoff)

        loc_clients, loc_dem, loc_pen = [], [], []
        loc_fac, loc_open, fac_pick = [], [], {}
        for r in reps:
            members = groups_by_rep[r]
            chi = sum(demand_of.get(m, 0) for m in members if m in client_set)
            if chi > 0:
                loc_clients.append(local_of[r])
                loc_dem.append(chi)
                if inst.objective == "pc":
                    agg = sum(demand_of[m] * penalty_of[m]
                              for m in members if m in client_set)
                    loc_pen.append(agg / chi)
            facs = [m for m in members if m in fac_set]
            if facs:
                best = min(facs, key=lambda m: opening_of.get(m, 0.0))
                loc_fac.append(local_of[r])
                loc_open.append(opening_of.get(best, 0.0))
                fac_pick[local_of[r]] = best
        if not loc_clients and not loc_fac:
            continue
        if not loc_fac:
            raise ParameterError(
                "component without candidate facilities; gamma is not the "
                "cost of a feasible constant-factor solution")
        kw: dict = {}
        if inst.objective == "fl":
            kw["opening_costs"] = np.asarray(loc_open)
        else:
            kw["k"] = min(inst.k, len(loc_fac))
        if inst.objective == "pc":
            kw["penalties"] = np.asarray(loc_pen)
        if inst.objective == "outliers":
            kw["z"] = inst.z
        sub_inst = ClusteringInstance(
            space=space, clients=np.asarray(loc_clients, dtype=np.int64),
            facilities=np.asarray(loc_fac, dtype=np.int64),
            objective=inst.objective,
            demands=np.asarray(loc_dem, dtype=np.int64), **kw)
        subs.append(SubInstance(
            instance=sub_inst, orig_points=np.asarray(reps, dtype=np.int64),
            groups={local_of[r]: groups_by_rep[r] for r in reps},
            facility_pick=fac_pick))
        if len(reps) >= 2:
            from .metric import aspect_ratio
            ratios.append(aspect_ratio(space))

    info = ReductionInfo(gamma=gamma, long_cutoff=long_cutoff,
                         short_cutoff=short_cutoff, n_components=len(subs),
                         aspect_ratios=ratios, contracted_groups=contracted)
    return subs, info


def _component_space(space: MetricSpace, reps: list[int],
                     long_cutoff: float) -> MetricSpace:
    """Metric for one component's representatives.

    Coordinate spaces keep the induced Euclidean metric (already a metric,
    never longer than the truncation closure).  Matrix spaces truncate at
    the long cutoff and take the metric closure of the complete truncated
    graph, which restores the triangle inequality exactly.
    """
    idx = np.asarray(reps, dtype=np.int64)
    if space.coords is not None:
        return MetricSpace.from_coords(space.coords[idx], d=space.d)
    if len(reps) > CLOSURE_MAX_COMPONENT:
        raise ParameterError("matrix-mode component exceeds the closure cap")
    m = space.pdist_block(idx, idx).copy()
    m[m > long_cutoff] = np.inf
    s = len(reps)
    for mid in range(s):
        m = np.minimum(m, m[:, [mid]] + m[[mid], :])
    if np.isinf(m).any():
        raise AssertionError("component not connected under the cutoff")
    return MetricSpace.from_matrix(m, d=2 * space.d)


def lift_reduction(inst: ClusteringInstance, subs: list[SubInstance],
                   solutions: list[Solution],
                   outlier_budget: int | None = None) -> Solution:
    """Union of per-sub solutions, re-evaluated on the original instance."""
    open_fac: list[int] = []
    for sub, sol in zip(subs, solutions):
        for f in sol.facilities:
            open_fac.append(sub.facility_pick[int(f)])
    if inst.objective == "outliers" and outlier_budget is None:
        outlier_budget = sum(s.outlier_demand(sub.instance)
                             for sub, s in zip(subs, solutions))
    return evaluate_facilities(inst, open_fac, outlier_budget=outlier_budget)


# ---------------------------------------------------------------------------
# Combining per-sub cost/center tables
# ---------------------------------------------------------------------------

def combine_subinstance_solutions(tables: list[list[tuple[float, int]]],
                                  k: int, epsilon: float | None = None
                                  ) -> tuple[float, list[int]]:
    """Minimal achievable cost with at most k centers across sub-instances.

    Each table lists (cost, centers) alternatives for one sub-instance (the
    root frontier of its DP, already rounded to the cost grid).  A suffix
    Pareto DP picks one entry per table minimizing total cost subject to the
    global center budget; returns (cost, chosen index per table).  With
    `epsilon` set, table costs are first rounded up to powers of (1+epsilon).
    """
    if not tables:
        raise ParameterError("no tables to combine")
    if epsilon is not None:
        tables = [[(_round_up_power(c, 1.0 + epsilon), kk) for c, kk in tab]
                  for tab in tables]

    # suffix[i]: pareto list of (cost, centers, choice_idx, next_ptr)
    suffix: list[list[tuple[float, int, int, int]]] = [[] for _ in tables]
    suffix.append([(0.0, 0, -1, -1)])
    for i in range(len(tables) - 1, -1, -1):
        cand = []
        for ci, (cost, cent) in enumerate(tables[i]):
            for ni, (scost, scent, _, _) in enumerate(suffix[i + 1]):
                cand.append((cost + scost, cent + scent, ci, ni))
        cand.sort(key=lambda t: (t[1], t[0]))
        pareto: list[tuple[float, int, int, int]] = []
        best = math.inf
        for cost, cent, ci, ni in cand:
            if cost < best - 1e-15:
                pareto.append((cost, cent, ci, ni))
                best = cost
        suffix[i] = pareto

    feasible = [row for row in suffix[0] if row[1] <= k]
    if not feasible:
        raise InfeasibleError(f"no allocation fits k = {k}")
    best = min(feasible, key=lambda t: t[0])
    choice: list[int] = []
    row = best
    for i in range(len(tables)):
        choice.append(row[2])
        row = suffix[i + 1][row[3]] if row[3] >= 0 else (0.0, 0, -1, -1)
    return float(best[0]), choice


def _round_up_power(x: float, base: float) -> float:
    if x <= 0:
        return 0.0
    j = math.ceil(math.log(x, base) - 1e-12)
    return base ** j


# ---------------------------------------------------------------------------
# Instance surgery (badly-cut relocation; k-center covering)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientEntry:
    """One client of the modified instance; identity survives relocation."""
    orig: int          # original client point id
    position: int      # point id where the demand now sits
    chi: int
    penalty: float = math.inf


@dataclass
class ModifiedInstance:
    base: ClusteringInstance
    decomp: Decomposition
    guide: Solution
    entries: list[ClientEntry]
    relocations: dict[int, int] = field(default_factory=dict)
    forced_centers: tuple[int, ...] = ()
    removed_clients: frozenset = frozenset()

    def total_demand(self) -> int:
        return sum(e.chi for e in self.entries)

    def to_json_dict(self) -> dict:
        return {
            "relocations": {str(k): v for k, v in sorted(self.relocations.items())},
            "forced_centers": list(self.forced_centers),
            "removed_clients": sorted(self.removed_clients),
            "entries": [[e.orig, e.position, e.chi,
                         None if math.isinf(e.penalty) else e.penalty]
                        for e in self.entries],
        }


def _guide_distances(inst: ClusteringInstance, guide: Solution):
    gfac = np.asarray(sorted(set(guide.facilities)), dtype=np.int64)
    dmat = inst.space.pdist_block(inst.clients, gfac)
    nearest = np.argmin(dmat, axis=1)
    l_dist = dmat[np.arange(len(inst.clients)), nearest]
    l_target = gfac[nearest]
    return l_dist, l_target


def build_modified_instance(inst: ClusteringInstance, guide: Solution,
                            decomp: Decomposition,
                            params: BadlyCutParams) -> ModifiedInstance:
    """Relocate every badly-cut client to its guide facility."""
    l_dist, l_target = _guide_distances(inst, guide)
    penalties = inst.penalty_of()
    entries: list[ClientEntry] = []
    relocations: dict[int, int] = {}
    for i, c in enumerate(inst.clients):
        c = int(c)
        pos = c
        if is_badly_cut_client(decomp, c, float(l_dist[i]), params):
            pos = int(l_target[i])
            relocations[c] = pos
        entries.append(ClientEntry(orig=c, position=pos,
                                   chi=int(inst.demands[i]),
                                   penalty=penalties.get(c, math.inf)))
    mod = ModifiedInstance(base=inst, decomp=decomp, guide=guide,
                           entries=entries, relocations=relocations)
    assert mod.total_demand() == inst.total_demand()
    return mod


def cover_ball(inst: ClusteringInstance, f: int, gamma: float,
               already_removed=frozenset()) -> tuple[list[int], set[int]]:
    """Greedy facility cover of the clients in beta(f, gamma) by balls of
    radius gamma/2; clients no facility can cover stay in the instance."""
    forced: list[int] = []
    removed: set[int] = set()
    fac_arr = inst.facilities
    ball_clients = [int(c) for c in inst.clients
                    if inst.space.dist(int(c), int(f)) <= gamma]
    uncovered = [c for c in ball_clients if c not in already_removed]
    while uncovered:
        u = uncovered[0]
        fd = inst.space.dist_row(u, fac_arr)
        ok = fac_arr[fd <= gamma / 2.0]
        if len(ok) == 0:
            uncovered = uncovered[1:]  # no facility can cover u
            continue
        center = int(ok[int(np.argmin(inst.space.dist_row(u, ok)))])
        if center not in forced:
            forced.append(center)
        removed.update(c for c in uncovered
                       if inst.space.dist(c, center) <= gamma / 2.0)
        uncovered = [c for c in uncovered if c not in removed]
    return forced, removed


def build_kcenter_instance(inst: ClusteringInstance, guide: Solution,
                           decomp: Decomposition, params: BadlyCutParams,
                           gamma: float) -> ModifiedInstance:
    """Force-open a gamma/2 ball cover around badly-cut centers and drop the
    clients those balls serve."""
    forced: list[int] = []
    removed: set[int] = set()
    for f in sorted(set(guide.facilities)):
        if not is_badly_cut_kcenter(decomp, int(f), gamma, params):
            continue
        new_forced, new_removed = cover_ball(inst, int(f), gamma,
                                             frozenset(removed))
        forced.extend(c for c in new_forced if c not in forced)
        removed.update(new_removed)

    entries = [ClientEntry(orig=int(c), position=int(c),
                           chi=int(inst.demands[i]))
               for i, c in enumerate(inst.clients) if int(c) not in removed]
    mod = ModifiedInstance(base=inst, decomp=decomp, guide=guide,
                           entries=entries, forced_centers=tuple(sorted(forced)),
                           removed_clients=frozenset(removed))
    return mod


def lift_solution(mod: ModifiedInstance, sol: Solution) -> Solution:
    """Serve every original client from its original position.

    Relocated clients are re-served by their nearest open facility; k-center
    solutions additionally open the forced covering centers; outlier budgets
    carry over by count.
    """
    inst = mod.base
    open_fac = set(int(f) for f in sol.facilities) | set(mod.forced_centers)
    budget = None
    if inst.objective == "outliers":
        dropped = {e.orig: e.chi for e in mod.entries}
        budget = sum(dropped.get(int(c), 0) for c in sol.outliers)
    lifted = evaluate_facilities(inst, sorted(open_fac), outlier_budget=budget)
    lifted.meta["modified_cost"] = float(sol.cost)
    lifted.meta["relocations"] = len(mod.relocations)
    return lifted
