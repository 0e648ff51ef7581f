"""Portal-respecting dynamic programs over the decomposition.

One engine serves all five objectives.  Client-to-facility connections are
restricted to canonical portal chains: a point climbs from its leaf through
the nearest portal of each part on its root path, and a connection between a
client and a facility is completed at their lowest common part through that
part's portals.  Bottom-up, every part keeps a table of cells:

  * exports: for each portal anchoring an open facility below, the rounded
    chain distance down to the nearest such facility (the "inside" portal
    parameters; portals with no facility are implicitly at the FAR value);
  * pendings: demand that has not connected yet, grouped per portal (with
    accumulated climb distance for squared and max objectives); a cell's
    value as a function of the "outside" portal parameters is linear (or
    quadratic / max-shaped) in them with the pendings as coefficients, so
    storing the pendings is an exact, compact encoding of that dependence;
  * the centers opened and the money spent below (money is rounded onto the
    cost grid for the k-constrained objectives), plus the outlier units
    dropped below when a drop budget exists.

Merging children walks them in a fixed order (the auxiliary accumulation
table), re-anchoring exports and pendings onto the parent's portals, letting
each pending group either connect now to the best export on the other side
or keep climbing, and rounding distances up onto the part's grid: multiples
of eps*D in [0, D/eps + D] for part diameter bound D.  Rounding always goes
up, so a cell's declared value dominates the true cost of the solution it
reconstructs.  When a part has more pending groups than the configured cap,
they are contracted into a single weighted super-client at one portal (the
far-flag regime) at a rounded-up cost.

Per-part work is bounded by the configured cell cap; at desk scale the caps
are never hit and the tables are exact over all realizable cells.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .instance import OUTLIER, Solution
from .metric import ParameterError
from .preprocess import ClientEntry, InfeasibleError, ModifiedInstance
from .split_tree import Decomposition, Part

__all__ = [
    "DpConfig", "DpResult", "PortalParams", "DpCell", "Budget",
    "solve_fl_dp", "solve_k_dp", "solve_pc_dp", "solve_outliers_dp",
    "solve_kcenter_dp", "compute_budget",
]

FAR = math.inf


# ---------------------------------------------------------------------------
# Exposed record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortalParams:
    part: int
    inside: tuple            # ((portal, rounded distance), ...); FAR omitted
    outside: tuple | None    # realized on completion; None while parametric
    far_flag: bool


@dataclass(frozen=True)
class DpCell:
    part: int
    params: PortalParams
    cost_index: int | None
    outlier_index: int | None
    value: float


@dataclass
class Budget:
    per_client: dict[int, float]

    @property
    def total(self) -> float:
        return sum(self.per_client.values())


@dataclass
class DpConfig:
    objective: str
    epsilon: float
    p: int
    quantize: bool = True
    cost_grid: tuple | None = None      # ascending c0 values (k modes)
    money_cap: float | None = None      # drop cells beyond this spend (fl)
    z_budgets: tuple | None = None      # allowed outlier unit budgets
    level_cap: int | None = None        # k-center: cap for the grid level
    max_centers: int | None = None      # cells above this can never be used
    max_cells: int = 30_000
    max_pending_groups: int = 6
    max_exports: int = 16
    variant_cap: int = 32               # pending connect/stay combinations
    pair_budget: int = 300_000          # |acc| x |child| ceiling per combine


@dataclass
class DpResult:
    solution: Solution
    dp_value: float
    opened: tuple
    outlier_clients: tuple
    frontier: list[tuple[float, int]] = field(default_factory=list)
    bucket_reconstructions: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    cells: list[DpCell] | None = None

    def reconstruct_frontier(self, cost_value: float) -> tuple[tuple, tuple]:
        """(opened, outlier clients) for one frontier cost value."""
        return self.bucket_reconstructions[float(cost_value)]


# ---------------------------------------------------------------------------
# Internal cell representation
# ---------------------------------------------------------------------------
# key = (exports, pendings, bucket, outl)
#   exports: tuple of (portal, dval) sorted by portal
#   pendings: p=1: ((portal, chi), ...)   p=2: ((portal, reach, chi), ...)
#             kcenter: ((portal, reach_max), ...)
# val = (centers, money, far, back)

def _round_up(x: float, step: float) -> float:
    if step <= 0 or x <= 0:
        return max(x, 0.0)
    return math.ceil(x / step - 1e-9) * step


class _Engine:
    def __init__(self, mod: ModifiedInstance, decomp: Decomposition,
                 cfg: DpConfig):
        self.mod = mod
        self.decomp = decomp
        self.cfg = cfg
        self.space = decomp.space
        self.fac_set = set(int(f) for f in mod.base.facilities)
        self.open_cost = mod.base.opening_cost_of()
        self.entries_at: dict[int, list[ClientEntry]] = {}
        for e in mod.entries:
            self.entries_at.setdefault(e.position, []).append(e)
        self.final: dict[int, dict] = {}          # pid -> key -> val
        self.max_cells_seen = 0
        self._dist_memo: dict[tuple[int, int], float] = {}
        # distance floor: no path from a point to any facility can undercut
        # the direct distance to the nearest candidate
        self.min_fac: np.ndarray | None = None
        nf = len(mod.base.facilities)
        if self.space.n * nf <= 4_000_000:
            block = self.space.pdist_block(self.space.points,
                                           mod.base.facilities)
            self.min_fac = block.min(axis=1)

    def _future_floor(self, group) -> float:
        """Lower bound on ever completing this pending group."""
        if self.min_fac is None:
            return 0.0
        obj, p = self.cfg.objective, self.cfg.p
        if obj == "kcenter":
            q, reach = group
            return reach + float(self.min_fac[q])
        if p == 2:
            q, reach, chi = group
            return chi * (reach + float(self.min_fac[q])) ** 2
        q, chi = group
        return chi * float(self.min_fac[q])

    def dist(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        key = (a, b) if a < b else (b, a)
        got = self._dist_memo.get(key)
        if got is None:
            got = self.space.dist(*key)
            self._dist_memo[key] = got
        return got

    # -- grids ---------------------------------------------------------------

    def grid_step(self, part: Part) -> tuple[float, float]:
        """(step, cap) of the distance grid for this part."""
        lvl = part.level_lo
        if self.cfg.level_cap is not None:
            lvl = min(lvl, self.cfg.level_cap)
        d_part = self.decomp.to_original(2.0 ** (lvl + 1))
        if not self.cfg.quantize:
            return 0.0, math.inf
        return self.cfg.epsilon * d_part, d_part / self.cfg.epsilon + d_part

    def bucket(self, money: float) -> int | None:
        grid = self.cfg.cost_grid
        if grid is None:
            return 0
        i = bisect.bisect_left(grid, money - 1e-12)
        return None if i >= len(grid) else i

    def settle(self, money: float) -> tuple[int | None, float]:
        """Bucket the money; max objectives also round it onto the grid so
        sibling cells collapse (rounding up keeps declared >= true)."""
        b = self.bucket(money)
        if b is None:
            return None, money
        if self.cfg.objective == "kcenter":
            return b, float(self.cfg.cost_grid[b])
        return b, money

    def _beyond_grid(self, money: float, pendings: tuple) -> bool:
        """Committed money plus the unavoidable part of pending completions
        already exceeds the top of the cost grid (or the money cap)."""
        lb = money
        if self.cfg.objective == "kcenter":
            for g in pendings:
                lb = max(lb, self._future_floor(g))
        else:
            for g in pendings:
                lb += self._future_floor(g)
        if self.cfg.cost_grid is None:
            return self.cfg.money_cap is not None and \
                lb > self.cfg.money_cap
        return self.bucket(lb) is None

    # -- leaves ----------------------------------------------------------------

    def leaf_cells(self, part: Part) -> dict:
        v = int(part.members[0])
        entries = self.entries_at.get(v, [])
        obj = self.cfg.objective
        cells: dict = {}
        open_choices = [False, True] if v in self.fac_set else [False]
        for open_f in open_choices:
            centers = 1 if open_f else 0
            money0 = self.open_cost.get(v, 0.0) if (open_f and obj == "fl") else 0.0
            # per-entry choices; an open facility serves its own point free
            per_entry: list[list[tuple[str, float, int]]] = []
            for e in entries:
                opts = []
                if open_f:
                    opts.append(("serve0", 0.0, 0))
                else:
                    opts.append(("pend", 0.0, 0))
                    if obj == "pc" and math.isfinite(e.penalty):
                        opts.append(("pay", e.chi * e.penalty, 0))
                    if obj == "outliers":
                        opts.append(("drop", 0.0, e.chi))
                per_entry.append(opts)
            for combo in _product(per_entry):
                money = money0
                outl = 0
                pend_entries = []
                outlier_origs = []
                for e, (kind, cost, units) in zip(entries, combo):
                    money += cost
                    outl += units
                    if kind == "pend":
                        pend_entries.append(e)
                    elif kind in ("pay", "drop"):
                        outlier_origs.append(e.orig)
                if self.cfg.z_budgets is not None and \
                        outl > max(self.cfg.z_budgets):
                    continue
                bucket, money = self.settle(money)
                if bucket is None or self._beyond_grid(money, ()):
                    continue
                pend = self._leaf_pendings(v, pend_entries)
                exports = ((v, 0.0),) if open_f else ()
                key = (exports, pend, bucket, outl)
                val = (centers, money, False,
                       ("leaf", part.pid, open_f, tuple(outlier_origs)))
                old = cells.get(key)
                if old is None or (val[0], val[1]) < (old[0], old[1]):
                    cells[key] = val
        return cells

    def _leaf_pendings(self, v: int, entries: list[ClientEntry]) -> tuple:
        if not entries:
            return ()
        chi = sum(e.chi for e in entries)
        if self.cfg.objective == "kcenter":
            return ((v, 0.0),)
        if self.cfg.p == 2:
            return ((v, 0.0, chi),)
        return ((v, chi),)

    # -- promotion into a parent part ------------------------------------------

    def promote(self, part: Part, child: Part, cells: dict) -> dict:
        step, cap = self.grid_step(part)
        anchor_cache: dict[int, tuple[int, float]] = {}

        def anchor(q: int) -> tuple[int, float]:
            got = anchor_cache.get(q)
            if got is None:
                if q in part.portal_set:
                    got = (q, 0.0)
                else:
                    dd = self.space.dist_row(q, part.portals)
                    j = int(np.argmin(dd))
                    got = (int(part.portals[j]), float(dd[j]))
                anchor_cache[q] = got
            return got

        out: dict = {}
        for key, val in cells.items():
            exports, pendings, _, outl = key
            centers, money, far, back = val
            new_exp: dict[int, float] = {}
            for q, dval in exports:
                q2, hop = anchor(q)
                d2 = _round_up(dval + hop, step)
                if d2 > cap:
                    continue
                if q2 not in new_exp or d2 < new_exp[q2]:
                    new_exp[q2] = d2
            exp2 = tuple(sorted(new_exp.items()))
            if len(exp2) > self.cfg.max_exports:
                exp2 = tuple(sorted(sorted(exp2, key=lambda t: t[1])
                                    [:self.cfg.max_exports]))
            pend2, dmoney, far2 = self._promote_pendings(pendings, anchor, step)
            bucket, money2 = self.settle(money + dmoney)
            if bucket is None or self._beyond_grid(money2, pend2):
                continue
            key2 = (exp2, pend2, bucket, outl)
            val2 = (centers, money2, far or far2,
                    ("promoted", child.pid, key))
            old = out.get(key2)
            if old is None or (val2[0], val2[1]) < (old[0], old[1]):
                out[key2] = val2
        return out

    def _promote_pendings(self, pendings, anchor, step):
        obj, p = self.cfg.objective, self.cfg.p
        far = False
        money = 0.0
        if obj == "kcenter":
            agg: dict[int, float] = {}
            for q, reach in pendings:
                q2, hop = anchor(q)
                r2 = _round_up(reach + hop, step)
                agg[q2] = max(agg.get(q2, 0.0), r2)
            groups = sorted(agg.items())
        elif p == 2:
            agg2: dict[tuple[int, float], int] = {}
            for q, reach, chi in pendings:
                q2, hop = anchor(q)
                r2 = _round_up(reach + hop, step)
                kk = (q2, r2)
                agg2[kk] = agg2.get(kk, 0) + chi
            groups = sorted((q, r, c) for (q, r), c in agg2.items())
        else:
            agg1: dict[int, int] = {}
            for q, chi in pendings:
                q2, hop = anchor(q)
                money += chi * hop
                agg1[q2] = agg1.get(q2, 0) + chi
            groups = sorted(agg1.items())
        if len(groups) > self.cfg.max_pending_groups:
            groups, extra, became_far = self._contract(groups)
            money += extra
            far = far or became_far
        return tuple(groups), money, far

    def _contract(self, groups):
        """Merge all pending groups into one weighted super-client."""
        obj, p = self.cfg.objective, self.cfg.p
        if obj == "kcenter":
            qs = [q for q, _ in groups]
            q0 = qs[0]
            reach = max(r + self.dist(q, q0) for q, r in groups)
            return [(q0, reach)], 0.0, True
        if p == 2:
            q0 = max(groups, key=lambda g: g[2])[0]
            reach = max(r + self.dist(q, q0) for q, r, _ in groups)
            chi = sum(c for _, _, c in groups)
            return [(q0, reach, chi)], 0.0, True
        q0 = max(groups, key=lambda g: g[1])[0]
        extra = sum(c * self.dist(q, q0) for q, c in groups)
        chi = sum(c for _, c in groups)
        return [(q0, chi)], extra, True

    # -- combining two sibling tables -------------------------------------------

    def combine(self, acc: dict, nxt: dict, stage_arena: list) -> dict:
        obj, p = self.cfg.objective, self.cfg.p
        z_cap = max(self.cfg.z_budgets) if self.cfg.z_budgets else 0
        out: dict = {}
        overflow_check = 0
        for key_a, val_a in acc.items():
            overflow_check += 1
            if overflow_check % 64 == 0 and len(out) > 2 * self.cfg.max_cells:
                out = self._cap_cells(out, self.cfg.max_cells)
            for key_b, val_b in nxt.items():
                outl = key_a[3] + key_b[3]
                if self.cfg.z_budgets is not None and outl > z_cap:
                    continue
                centers = val_a[0] + val_b[0]
                if self.cfg.max_centers is not None and \
                        centers > self.cfg.max_centers:
                    continue
                exports = _merge_exports(key_a[0], key_b[0],
                                         self.cfg.max_exports)
                if obj == "kcenter":
                    money0 = max(val_a[1], val_b[1])
                else:
                    money0 = val_a[1] + val_b[1]
                far = val_a[2] or val_b[2]
                back = ("comb", len(stage_arena), key_a, key_b)
                # each pending group: keep climbing, or connect now to the
                # best export contributed by the other side; for the max
                # objective a connection below the current max is free and
                # therefore always taken
                sides = [(key_a[1], key_b[0]), (key_b[1], key_a[0])]
                choices: list[tuple] = []   # (group, best_completion or None)
                forced = 0.0
                for pend, other_exp in sides:
                    for g in pend:
                        best = _best_completion(self.dist, g, other_exp, obj, p)
                        if best is None:
                            choices.append((g, best))
                            continue
                        if obj == "kcenter":
                            if best <= money0:
                                continue  # free against the current max
                            choices.append((g, best))
                            continue
                        if best <= self._future_floor(g) + 1e-12:
                            forced += best  # staying can never beat this
                            continue
                        choices.append((g, best))
                money0 += forced
                if obj == "kcenter":
                    variants = _threshold_variants(choices, money0)
                else:
                    variants = _masked_variants(choices, money0,
                                                self.cfg.variant_cap)
                for money, pend_new in variants:
                    cell_far = far
                    pend_t = _canonical_pendings(pend_new, obj, p)
                    if len(pend_t) > self.cfg.max_pending_groups:
                        groups, extra, _ = self._contract(list(pend_t))
                        pend_t = tuple(groups)
                        money += extra
                        cell_far = True
                    bucket, money = self.settle(money)
                    if bucket is None or self._beyond_grid(money, pend_t):
                        continue
                    key = (exports, pend_t, bucket, outl)
                    val = (centers, money, cell_far, back)
                    old = out.get(key)
                    if old is None or (val[0], val[1]) < (old[0], old[1]):
                        out[key] = val
        stage_arena.append((acc, nxt))
        return out

    # -- per-node driver ---------------------------------------------------------

    def process(self, part: Part) -> dict:
        if part.is_leaf:
            cells = self.leaf_cells(part)
        else:
            stage_arena: list = []
            tables = []
            for cpid in part.children:
                child = self.decomp.parts[cpid]
                tables.append(self.promote(part, child, self.final[cpid]))
            acc = tables[0]
            for t in tables[1:]:
                if len(acc) * len(t) > self.cfg.pair_budget:
                    side = max(64, int(math.sqrt(self.cfg.pair_budget)))
                    acc = self._cap_cells(acc, side)
                    t = self._cap_cells(t, side)
                acc = self.combine(acc, t, stage_arena)
                acc = self._prune(acc, part)
            cells = self._rewrite_backrefs(acc, part, stage_arena)
        cells = self._prune(cells, part)
        self.max_cells_seen = max(self.max_cells_seen, len(cells))
        self.final[part.pid] = cells
        return cells

    def _rewrite_backrefs(self, acc: dict, part: Part, stage_arena) -> dict:
        """Flatten fold-stage chains into per-child cell references."""
        out = {}
        for key, (centers, money, far, back) in acc.items():
            refs: list[tuple[int, tuple]] = []
            node = (key, back)
            while True:
                k, b = node
                if b[0] == "comb":
                    _, stage, key_a, key_b = b
                    acc_tab, nxt_tab = stage_arena[stage]
                    refs.append(_resolve_promoted(nxt_tab, key_b))
                    node = (key_a, acc_tab[key_a][3])
                elif b[0] == "promoted":
                    refs.append((b[1], b[2]))
                    break
                else:
                    break
            out[key] = (centers, money, far, ("node", part.pid,
                                              tuple(reversed(refs))))
        return out

    def _prune(self, cells: dict, part: Part) -> dict:
        cells = self._dominance_prune(cells)
        return self._cap_cells(cells, self.cfg.max_cells)

    @staticmethod
    def _cap_cells(cells: dict, cap: int) -> dict:
        if len(cells) <= cap:
            return cells
        scored = sorted(cells.items(), key=lambda kv: (kv[1][0], kv[1][1],
                                                       kv[0]))
        return dict(scored[:cap])

    _DOM_SCAN = 64  # survivors compared per candidate (bounds the quadratic)

    def _dominance_prune(self, cells: dict) -> dict:
        """Drop cells beaten on centers, money, and exports simultaneously."""
        groups: dict[tuple, list] = {}
        for key, val in cells.items():
            groups.setdefault((key[1], key[3]), []).append((key, val))
        out: dict = {}
        for group in groups.values():
            group.sort(key=lambda kv: (kv[1][0], kv[1][1], kv[0]))
            survivors: list[tuple[int, float, dict]] = []
            for key, val in group:
                exp_map = dict(key[0])
                dominated = False
                for cent, money, s_exp in survivors[: self._DOM_SCAN]:
                    if cent <= val[0] and money <= val[1] + 1e-15 and \
                            all(q in s_exp and s_exp[q] <= d + 1e-15
                                for q, d in exp_map.items()):
                        dominated = True
                        break
                if not dominated:
                    survivors.append((val[0], val[1], exp_map))
                    out[key] = val
        return out

    # -- root resolution -----------------------------------------------------------

    def resolve_root(self, cells: dict) -> dict:
        """Force every pending group to connect inside the root."""
        obj, p = self.cfg.objective, self.cfg.p
        out: dict = {}
        for key, (centers, money, far, back) in cells.items():
            exports, pendings, _, outl = key
            ok = True
            for g in pendings:
                best = _best_completion(self.dist, g, exports, obj, p)
                if best is None:
                    ok = False
                    break
                if obj == "kcenter":
                    money = max(money, best)
                else:
                    money += best
            if not ok:
                continue
            bucket, money = self.settle(money)
            if bucket is None:
                continue
            key2 = (exports, (), bucket, outl)
            val2 = (centers, money, far, back)
            old = out.get(key2)
            if old is None or (val2[0], val2[1]) < (old[0], old[1]):
                out[key2] = val2
        return out

    # -- reconstruction ---------------------------------------------------------

    def reconstruct(self, pid: int, key: tuple) -> tuple[list[int], list[int]]:
        opened: list[int] = []
        outliers: list[int] = []
        stack = [(pid, key)]
        while stack:
            p_id, k = stack.pop()
            back = self.final[p_id][k][3]
            if back[0] == "leaf":
                _, lp, open_f, outs = back
                part = self.decomp.parts[lp]
                if open_f:
                    opened.append(int(part.members[0]))
                outliers.extend(outs)
            else:
                _, _, refs = back
                stack.extend(refs)
        return sorted(opened), sorted(outliers)

    # -- cell dump ----------------------------------------------------------------

    def dump_cells(self) -> list[DpCell]:
        grid = self.cfg.cost_grid
        out: list[DpCell] = []
        for pid, cells in self.final.items():
            # value(c0) = min centers among cells of money <= c0 (per params)
            for key, (centers, money, far, _) in cells.items():
                params = PortalParams(part=pid, inside=key[0], outside=None,
                                      far_flag=far)
                if grid is None:
                    out.append(DpCell(part=pid, params=params, cost_index=None,
                                      outlier_index=None, value=money))
                else:
                    ci = self.bucket(money)
                    if ci is None:
                        continue
                    out.append(DpCell(part=pid, params=params, cost_index=ci,
                                      outlier_index=key[3], value=centers))
        return out


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def _product(options: list[list]):
    if not options:
        yield ()
        return
    head, *rest = options
    for h in head:
        for r in _product(rest):
            yield (h,) + r


def _merge_exports(a: tuple, b: tuple, cap: int) -> tuple:
    merged = dict(a)
    for q, d in b:
        if q not in merged or d < merged[q]:
            merged[q] = d
    items = sorted(merged.items())
    if len(items) > cap:
        items = sorted(sorted(items, key=lambda t: t[1])[:cap])
    return tuple(items)


def _resolve_promoted(table: dict, key: tuple) -> tuple[int, tuple]:
    back = table[key][3]
    assert back[0] == "promoted"
    return back[1], back[2]


def _canonical_pendings(groups, obj: str, p: int) -> tuple:
    """Aggregate groups sharing a portal so equal states share one key."""
    if obj == "kcenter":
        agg: dict[int, float] = {}
        for q, reach in groups:
            agg[q] = max(agg.get(q, 0.0), reach)
        return tuple(sorted(agg.items()))
    if p == 2:
        agg2: dict[tuple[int, float], int] = {}
        for q, reach, chi in groups:
            agg2[(q, reach)] = agg2.get((q, reach), 0) + chi
        return tuple(sorted((q, r, c) for (q, r), c in agg2.items()))
    agg1: dict[int, int] = {}
    for q, chi in groups:
        agg1[q] = agg1.get(q, 0) + chi
    return tuple(sorted(agg1.items()))


def _best_completion(dist, group, exports, obj, p):
    """Cheapest way to finish one pending group via the given exports."""
    if not exports:
        return None
    if obj == "kcenter":
        q, reach = group
        return min(reach + dist(q, q2) + d for q2, d in exports)
    if p == 2:
        q, reach, chi = group
        return chi * min((reach + dist(q, q2) + d) ** 2
                         for q2, d in exports)
    q, chi = group
    return chi * min(dist(q, q2) + d for q2, d in exports)


def _masked_variants(choices, money0, cap):
    """(money, kept groups) for each stay/connect combination (sum modes)."""
    free = [i for i, (_, best) in enumerate(choices) if best is not None]
    k = len(free)
    if 2 ** k > cap:
        k_enum = max(0, int(math.log2(cap)))
        enum, fixed = free[:k_enum], free[k_enum:]
    else:
        enum, fixed = free, []
    n = len(choices)
    masks = []
    for bits in range(2 ** len(enum)):
        mask = [True] * n
        for j, i in enumerate(enum):
            mask[i] = not (bits >> j & 1)
        for i in fixed:
            mask[i] = False  # over-cap groups connect now
        masks.append(mask)
    if fixed:
        masks.append([True] * n)
    for mask in masks:
        money = money0
        kept = []
        for (g, best), stay in zip(choices, mask):
            if stay or best is None:
                kept.append(g)
            else:
                money += best
        yield money, kept


def _threshold_variants(choices, money0):
    """Max objective: for each threshold, connect every group at or below it
    (connecting more below the paid max is free and strictly reduces the
    pending obligations, so these variants dominate all masks)."""
    must_stay = [g for g, best in choices if best is None]
    ranked = sorted(((best, g) for g, best in choices if best is not None))
    yield money0, must_stay + [g for _, g in ranked]
    for t in range(len(ranked)):
        money = max(money0, ranked[t][0])
        kept = must_stay + [g for _, g in ranked[t + 1:]]
        yield money, kept


# ---------------------------------------------------------------------------
# Cost accounting on the modified instance
# ---------------------------------------------------------------------------

def _materialize(mod: ModifiedInstance, opened: list[int],
                 outlier_origs: list[int], cfg: DpConfig) -> Solution:
    """Solution over the modified positions: nearest-open assignment for the
    served entries, recorded at its true (unquantized) cost."""
    space = mod.base.space
    outlier_set = set(outlier_origs)
    if not opened:
        if any(e.orig not in outlier_set for e in mod.entries):
            raise InfeasibleError("dynamic program opened no facility")
        open_arr = np.empty(0, dtype=np.int64)
    else:
        open_arr = np.asarray(sorted(set(opened)), dtype=np.int64)
    assignment: dict[int, int] = {}
    per_cost: dict[int, float] = {}
    penalty_paid: dict[int, float] = {}
    total = 0.0
    worst = 0.0
    for e in mod.entries:
        if e.orig in outlier_set:
            assignment[e.orig] = OUTLIER
            if cfg.objective == "pc":
                penalty_paid[e.orig] = e.chi * e.penalty
                total += penalty_paid[e.orig]
            continue
        dd = space.dist_row(e.position, open_arr)
        j = int(np.argmin(dd))
        assignment[e.orig] = int(open_arr[j])
        cost = e.chi * float(dd[j]) ** cfg.p
        per_cost[e.orig] = cost
        total += cost
        worst = max(worst, float(dd[j]))
    cost = worst if cfg.objective == "kcenter" else total
    if cfg.objective == "fl":
        wf = mod.base.opening_cost_of()
        cost += sum(wf.get(int(f), 0.0) for f in open_arr)
    return Solution(facilities=tuple(int(f) for f in open_arr),
                    assignment=assignment,
                    outliers=frozenset(outlier_set),
                    per_client_cost=per_cost, penalty_paid=penalty_paid,
                    cost=float(cost))


def _run(mod: ModifiedInstance, decomp: Decomposition,
         cfg: DpConfig) -> tuple[_Engine, dict]:
    eng = _Engine(mod, decomp, cfg)
    order: list[int] = []
    stack = [decomp.root]
    while stack:
        pid = stack.pop()
        order.append(pid)
        stack.extend(decomp.parts[pid].children)
    for pid in reversed(order):
        eng.process(decomp.parts[pid])
    root_cells = eng.resolve_root(eng.final[decomp.root])
    eng.final[decomp.root] = {**eng.final[decomp.root], **root_cells}
    return eng, root_cells


# ---------------------------------------------------------------------------
# Public solvers
# ---------------------------------------------------------------------------

def solve_fl_dp(mod: ModifiedInstance, decomp: Decomposition, epsilon: float,
                *, quantize: bool = True, dump_cells: bool = False,
                max_cells: int = 30_000, guide_cost: float | None = None,
                caps: dict | None = None) -> DpResult:
    """Optimal (within the cell caps) quantized portal-respecting solution.

    `guide_cost`, when given, prunes cells whose committed spend already
    exceeds four times the guide: no portal-respecting optimum lies there.
    """
    if mod.base.objective != "fl":
        raise ParameterError("solve_fl_dp needs an fl instance")
    cap = None if guide_cost is None or guide_cost <= 0 else 4.0 * guide_cost
    overrides = dict(caps or {})
    if not quantize:
        # the exact variant must explore every realizable cell
        overrides.setdefault("max_pending_groups", 10 ** 9)
        overrides.setdefault("variant_cap", 2 ** 62)
        overrides.setdefault("max_exports", 10 ** 9)
        overrides.setdefault("pair_budget", 10 ** 12)
        max_cells = max(max_cells, 10 ** 9)
    cfg = DpConfig(objective="fl", epsilon=epsilon, p=1, quantize=quantize,
                   money_cap=cap, max_cells=max_cells, **overrides)
    eng, root = _run(mod, decomp, cfg)
    if not root:
        raise InfeasibleError("portal DP found no consistent root cell")
    best_key = min(root, key=lambda k: (root[k][1], k))
    dp_value = root[best_key][1]
    opened, outs = eng.reconstruct(decomp.root, best_key)
    sol = _materialize(mod, opened, outs, cfg)
    sol.meta["dp_value"] = float(dp_value)
    res = DpResult(solution=sol, dp_value=float(dp_value),
                   opened=tuple(opened), outlier_clients=tuple(outs),
                   stats={"max_cells": eng.max_cells_seen})
    if dump_cells:
        res.cells = eng.dump_cells()
    return res


def _cost_grid(l_cost: float, epsilon: float, n: int) -> tuple:
    """Powers of (1 + eps/log2 n) covering [l_cost/n, (1+eps) l_cost]."""
    n = max(int(n), 4)
    base = 1.0 + epsilon / math.log2(n)
    lo = l_cost / n
    hi = (1.0 + epsilon) * l_cost
    j0 = math.floor(math.log(lo, base))
    j1 = math.ceil(math.log(hi, base) + 1e-12)
    vals = [0.0] + [base ** j for j in range(j0, j1 + 1)]
    return tuple(vals)


def _solve_k_like(mod, decomp, epsilon, k, l_cost, p, objective, *,
                  z_budgets=None, level_cap=None, quantize=True,
                  dump_cells=False, max_cells=30_000,
                  grid=None, caps: dict | None = None) -> DpResult:
    if l_cost <= 0:
        raise ParameterError("the guide cost must be positive")
    n = max(mod.total_demand(), len(mod.entries), 2)
    grid = _cost_grid(l_cost, epsilon, n) if grid is None else grid
    cfg = DpConfig(objective=objective, epsilon=epsilon, p=p,
                   quantize=quantize, cost_grid=tuple(grid),
                   z_budgets=z_budgets, level_cap=level_cap,
                   max_centers=int(k), max_cells=max_cells, **(caps or {}))
    eng, root = _run(mod, decomp, cfg)
    if not root:
        raise InfeasibleError("no root cell within the cost grid")

    # frontier: for each c0, the fewest centers achieving money <= c0
    frontier: dict[int, int] = {}
    witness: dict[int, tuple] = {}
    for key, (centers, money, far, _) in root.items():
        b = key[2]
        if b not in frontier or centers < frontier[b] or \
                (centers == frontier[b] and money < root[witness[b]][1]):
            frontier[b] = centers
            witness[b] = key
    # cumulative min: money under a small budget also fits any larger one
    buckets = sorted(frontier)
    best_key_by_bucket: dict[int, tuple] = {}
    carry = math.inf
    carry_key = None
    for b in buckets:
        if frontier[b] < carry:
            carry = frontier[b]
            carry_key = witness[b]
        frontier[b] = int(carry)
        best_key_by_bucket[b] = carry_key

    feasible = [b for b in buckets if frontier[b] <= k]
    if not feasible:
        raise InfeasibleError(f"no cost index achievable with k = {k}")
    b_star = min(feasible)
    key_star = best_key_by_bucket[b_star]
    opened, outs = eng.reconstruct(decomp.root, key_star)
    sol = _materialize(mod, opened, outs, cfg)
    sol.meta["dp_value"] = float(root[key_star][1])
    sol.meta["c0"] = float(cfg.cost_grid[b_star])
    recon = {}
    for b in buckets:
        ob, xb = eng.reconstruct(decomp.root, best_key_by_bucket[b])
        recon[float(cfg.cost_grid[b])] = (tuple(ob), tuple(xb))
    res = DpResult(solution=sol, dp_value=float(root[key_star][1]),
                   opened=tuple(opened), outlier_clients=tuple(outs),
                   frontier=[(float(cfg.cost_grid[b]), int(frontier[b]))
                             for b in buckets],
                   bucket_reconstructions=recon,
                   stats={"max_cells": eng.max_cells_seen,
                          "grid_size": len(cfg.cost_grid)})
    if dump_cells:
        res.cells = eng.dump_cells()
    return res


def solve_k_dp(mod: ModifiedInstance, decomp: Decomposition, epsilon: float,
               k: int, l_cost: float, p: int, **kw) -> DpResult:
    """k-median (p=1) / k-means (p=2): minimum cost index whose root cell
    needs at most k centers."""
    objective = "kmedian" if p == 1 else "kmeans"
    return _solve_k_like(mod, decomp, epsilon, k, l_cost, p, objective, **kw)


def solve_pc_dp(mod: ModifiedInstance, decomp: Decomposition, epsilon: float,
                k: int, l_cost: float, **kw) -> DpResult:
    """Prize-collecting: leaves may pay the penalty instead of serving."""
    return _solve_k_like(mod, decomp, epsilon, k, l_cost, 1, "pc", **kw)


def solve_outliers_dp(mod: ModifiedInstance, decomp: Decomposition,
                      epsilon: float, k: int, z: int, l_cost: float,
                      **kw) -> DpResult:
    """Bicriteria outliers: drop budgets tracked exactly for small z, on a
    geometric grid capped at ceil((1+eps) z) otherwise."""
    if z <= 16:
        budgets = tuple(range(z + 1))
    else:
        n = max(mod.total_demand(), 2)
        base = 1.0 + epsilon / math.log2(max(n / epsilon, 4.0))
        cap = math.ceil((1.0 + epsilon) * z)
        vals = {0, cap}
        x = 1.0
        while x < cap:
            vals.add(int(math.floor(x)))
            x *= base
        budgets = tuple(sorted(vals))
    return _solve_k_like(mod, decomp, epsilon, k, l_cost, mod.base.p,
                         "outliers", z_budgets=budgets, **kw)


def solve_kcenter_dp(mod: ModifiedInstance, decomp: Decomposition,
                     epsilon: float, k: int, gamma: float, **kw) -> DpResult:
    """k-center: minimize the max connection; levels above the gamma scale
    share one grid (connections never need to be longer)."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    cap_level = int(math.ceil(math.log2(decomp.to_scaled(2.0 * gamma)))) + 1
    step = epsilon * gamma / 4.0
    top = 2.5 * gamma
    grid = tuple(step * i for i in range(int(math.ceil(top / step)) + 2))
    return _solve_k_like(mod, decomp, epsilon, k, gamma, 1, "kcenter",
                         level_cap=cap_level, grid=grid, **kw)


# ---------------------------------------------------------------------------
# Budget
# ---------------------------------------------------------------------------

def compute_budget(sol: Solution, decomp: Decomposition, epsilon: float,
                   demands: dict[int, int] | None = None) -> Budget:
    """b(S): eps * 2^(cut level) per served client-facility pair, in original
    distance units (levels live on the rescaled metric)."""
    per: dict[int, float] = {}
    for c, f in sol.assignment.items():
        if f == OUTLIER:
            continue
        chi = 1 if demands is None else demands.get(c, 1)
        if c == f:
            per[c] = 0.0
            continue
        lvl = decomp.cut_level(c, f)
        per[c] = chi * epsilon * decomp.to_original(2.0 ** lvl)
    return Budget(per_client=per)
