"""Clustering instances and solutions.

An instance couples a metric space with a demand-weighted client set, a
candidate facility set, and exactly one active objective mode:

    fl        opening costs, no center budget
    kmedian   k centers, cost = sum of distances
    kmeans    k centers, cost = sum of squared distances
    pc        k centers, per-client penalty may be paid instead of serving
    outliers  k centers, up to z demand units may be dropped for free
    kcenter   k centers, cost = max distance

Solutions record the open facilities, the per-client assignment (or the
OUTLIER marker), and a per-client cost decomposition, and can be re-evaluated
against any instance over the same point set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metric import MetricSpace, ParameterError

__all__ = ["ClusteringInstance", "Solution", "OUTLIER", "OBJECTIVES",
           "evaluate_facilities"]

OUTLIER = -1
OBJECTIVES = ("fl", "kmedian", "kmeans", "pc", "outliers", "kcenter")


@dataclass
class ClusteringInstance:
    space: MetricSpace
    clients: np.ndarray                 # point ids
    facilities: np.ndarray              # point ids
    objective: str
    demands: np.ndarray | None = None   # aligned with clients; default all-1
    p: int = 1
    opening_costs: np.ndarray | None = None  # aligned with facilities (fl)
    penalties: np.ndarray | None = None      # aligned with clients (pc)
    k: int | None = None
    z: int | None = None

    def __post_init__(self):
        self.clients = np.asarray(self.clients, dtype=np.int64)
        self.facilities = np.asarray(self.facilities, dtype=np.int64)
        if self.demands is None:
            self.demands = np.ones(len(self.clients), dtype=np.int64)
        self.demands = np.asarray(self.demands, dtype=np.int64)
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.objective == "fl":
            if self.opening_costs is None or self.k is not None:
                raise ParameterError("fl mode needs opening costs and no k")
            self.opening_costs = np.asarray(self.opening_costs, dtype=float)
            self.p = 1
        else:
            if self.k is None or self.k < 1:
                raise ParameterError(f"{self.objective} mode needs k >= 1")
            if self.opening_costs is not None:
                raise ParameterError("opening costs only valid in fl mode")
        if self.objective == "kmeans":
            self.p = 2
        elif self.objective in ("kmedian", "kcenter"):
            self.p = 1
        if self.objective == "pc":
            if self.penalties is None:
                raise ParameterError("pc mode needs penalties")
            self.penalties = np.asarray(self.penalties, dtype=float)
        elif self.penalties is not None:
            raise ParameterError("penalties only valid in pc mode")
        if self.objective == "outliers":
            if self.z is None or self.z < 0:
                raise ParameterError("outliers mode needs z >= 0")
        elif self.z is not None:
            raise ParameterError("z only valid in outliers mode")
        if np.any(self.demands < 1):
            raise ParameterError("live clients need demand >= 1")
        if len(self.facilities) == 0:
            raise ParameterError("need at least one candidate facility")

    # -- convenience --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.space.n

    def total_demand(self) -> int:
        return int(self.demands.sum())

    def demand_of(self) -> dict[int, int]:
        return {int(c): int(x) for c, x in zip(self.clients, self.demands)}

    def penalty_of(self) -> dict[int, float]:
        if self.penalties is None:
            return {}
        return {int(c): float(x) for c, x in zip(self.clients, self.penalties)}

    def opening_cost_of(self) -> dict[int, float]:
        if self.opening_costs is None:
            return {}
        return {int(f): float(w) for f, w in zip(self.facilities, self.opening_costs)}

    def client_facility_distances(self) -> np.ndarray:
        """|clients| x |facilities| distance matrix."""
        return self.space.pdist_block(self.clients, self.facilities)

    def replace(self, **kw) -> "ClusteringInstance":
        base = dict(space=self.space, clients=self.clients,
                    facilities=self.facilities, objective=self.objective,
                    demands=self.demands, p=self.p,
                    opening_costs=self.opening_costs, penalties=self.penalties,
                    k=self.k, z=self.z)
        base.update(kw)
        return ClusteringInstance(**base)


@dataclass
class Solution:
    facilities: tuple[int, ...]
    assignment: dict[int, int]          # client point id -> facility id / OUTLIER
    outliers: frozenset[int] = frozenset()
    per_client_cost: dict[int, float] = field(default_factory=dict)
    penalty_paid: dict[int, float] = field(default_factory=dict)
    cost: float = 0.0
    meta: dict = field(default_factory=dict)

    def num_centers(self) -> int:
        return len(self.facilities)

    def outlier_demand(self, inst: ClusteringInstance) -> int:
        dem = inst.demand_of()
        return sum(dem.get(c, 0) for c in self.outliers)

    def check(self, inst: ClusteringInstance, tol: float = 1e-9) -> None:
        """Assert the structural Solution invariants against `inst`."""
        open_set = set(self.facilities)
        fac_set = set(int(f) for f in inst.facilities)
        assert open_set <= fac_set, "opened a non-candidate facility"
        total = 0.0
        for c in inst.clients:
            c = int(c)
            a = self.assignment[c]
            if a == OUTLIER:
                assert c in self.outliers
                total += self.penalty_paid.get(c, 0.0)
                continue
            assert a in open_set, "client assigned to closed facility"
            total += self.per_client_cost[c]
        if inst.objective == "fl":
            wf = inst.opening_cost_of()
            total += sum(wf[f] for f in self.facilities)
        if inst.objective == "kcenter":
            served = [self.per_client_cost[int(c)] for c in inst.clients
                      if self.assignment[int(c)] != OUTLIER]
            total = max(served) if served else 0.0
        assert abs(total - self.cost) <= tol * max(1.0, abs(self.cost)), \
            f"recorded cost {self.cost} != recomputed {total}"


def evaluate_facilities(inst: ClusteringInstance, open_facilities,
                        outlier_budget: int | None = None) -> Solution:
    """Best solution with the given open set: nearest assignment, then the
    objective's outlier rule (penalty comparison for pc, drop the most
    expensive `outlier_budget` demand units for outliers mode)."""
    open_list = sorted(set(int(f) for f in open_facilities))
    if not open_list:
        raise ParameterError("cannot evaluate an empty facility set")
    open_arr = np.asarray(open_list, dtype=np.int64)
    dmat = inst.space.pdist_block(inst.clients, open_arr)
    nearest = np.argmin(dmat, axis=1)
    ndist = dmat[np.arange(len(inst.clients)), nearest]

    assignment: dict[int, int] = {}
    per_cost: dict[int, float] = {}
    penalty_paid: dict[int, float] = {}
    outliers: set[int] = set()
    p = inst.p

    base = (ndist ** p) * inst.demands
    for i, c in enumerate(inst.clients):
        assignment[int(c)] = int(open_arr[nearest[i]])
        per_cost[int(c)] = float(base[i])

    if inst.objective == "pc":
        for i, c in enumerate(inst.clients):
            pen = float(inst.penalties[i]) * int(inst.demands[i])
            if pen < per_cost[int(c)]:
                assignment[int(c)] = OUTLIER
                outliers.add(int(c))
                penalty_paid[int(c)] = pen
                per_cost[int(c)] = 0.0
        cost = sum(per_cost.values()) + sum(penalty_paid.values())
    elif inst.objective == "outliers":
        budget = inst.z if outlier_budget is None else int(outlier_budget)
        per_unit = ndist ** p
        order = np.argsort(-per_unit, kind="stable")
        remaining = budget
        for i in order:
            if remaining <= 0:
                break
            c = int(inst.clients[i])
            chi = int(inst.demands[i])
            if chi <= remaining:
                remaining -= chi
                assignment[c] = OUTLIER
                outliers.add(c)
                per_cost[c] = 0.0
        cost = sum(per_cost.values())
    elif inst.objective == "kcenter":
        cost = float(ndist.max()) if len(ndist) else 0.0
        for i, c in enumerate(inst.clients):
            per_cost[int(c)] = float(ndist[i])
    elif inst.objective == "fl":
        wf = inst.opening_cost_of()
        cost = sum(per_cost.values()) + sum(wf[f] for f in open_list)
    else:
        cost = sum(per_cost.values())

    return Solution(facilities=tuple(open_list), assignment=assignment,
                    outliers=frozenset(outliers), per_client_cost=per_cost,
                    penalty_paid=penalty_paid, cost=float(cost))
