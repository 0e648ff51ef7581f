"""Randomized hierarchical decomposition with portals.

Construction, for a space rescaled so the minimum distance is 1 (handled
internally): draw one random order on the points and one radius multiplier
tau in [1/2, 1).  Level i is carved by visiting the net points y of Y_i in
the random order and letting y claim every still-unclaimed point within
tau * 2^i; a part of level i is the set of points sharing both their level-i
claimant and their level-(i+1) part, which makes every level a refinement of
the next.  Level 0 uses radius tau < 1, so its parts are singletons, and the
top level is the trivial partition.

Because Y_i covers every point within 2^(i-1) - 1/2 < tau * 2^i, the carving
never leaves a point unclaimed, and each level-i part sits inside a ball of
radius tau * 2^i, giving diameter < 2^(i+1) exactly.

Empty parts are pruned and single-child chains are compressed, so the stored
tree has at most 2n - 1 parts; a compressed part spans a contiguous level
range [level_lo, level_hi] over which its member set is constant.  Each part
carries one portal set: a net of its members at radius rho * 2^(level_lo+1),
seeded with the parent's portals that fall inside it (nestedness).  The same
set serves every level the part spans; it is finer than required at the
upper levels of the span.

All structures are immutable after construction and safe for concurrent
reads; builds with distinct seeds are independent.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .metric import GridIndex, MetricSpace, Net, ParameterError, build_net

__all__ = [
    "Part",
    "Decomposition",
    "BadlyCutParams",
    "build_decomposition",
    "cut_level",
    "ball_cut_level",
    "is_badly_cut_client",
    "is_badly_cut_facility",
    "is_badly_cut_kcenter",
    "portal_respecting_path",
    "default_rho",
]

NEVER_CUT = -math.inf  # sentinel for single-point balls


@dataclass
class Part:
    pid: int
    level_lo: int
    level_hi: int
    members: np.ndarray
    center: int            # carve center at level_lo (-1 for a forced root)
    radius: float          # carve radius at level_lo, in scaled units
    parent: int | None
    children: list[int]
    portals: np.ndarray
    portal_set: frozenset = frozenset()

    def __post_init__(self):
        self.portal_set = frozenset(int(p) for p in self.portals)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class Decomposition:
    """Leveled partition hierarchy with per-part portals and cut queries."""

    def __init__(self, space: MetricSpace, parts: list[Part], root: int,
                 pid_matrix: np.ndarray, scale: float, levels: int,
                 tau: float, rho: float, seed: int):
        self.space = space
        self.parts = parts
        self.root = root
        self._pid = pid_matrix          # (levels+1, n): part id per (level, point)
        self.scale = scale              # one scaled unit = `scale` original units
        self.levels = levels            # top level index; B_levels == {V}
        self.tau = tau
        self.rho = rho
        self.rng_seed = seed

    # -- basic queries -------------------------------------------------------

    def part_at(self, point: int, level: int) -> Part:
        return self.parts[self._pid[level, point]]

    def leaf_of(self, point: int) -> Part:
        return self.parts[self._pid[0, point]]

    def to_scaled(self, x: float) -> float:
        return x / self.scale

    def to_original(self, x: float) -> float:
        return x * self.scale

    def cut_level(self, u: int, v: int) -> int:
        if u == v:
            raise ValueError("cut level is undefined for u == v")
        col = self._pid[:, u] != self._pid[:, v]
        # level 0 parts are singletons, so distinct points always differ there
        return int(np.nonzero(col)[0][-1])

    def cut_levels_against(self, v: int, targets: np.ndarray) -> np.ndarray:
        """Vectorized cut_level(v, t) for each t (t != v)."""
        diff = self._pid[:, targets] != self._pid[:, [v]].reshape(-1, 1)
        rev = diff[::-1]
        return (self._pid.shape[0] - 1) - np.argmax(rev, axis=0)

    def ball_members(self, v: int, r: float) -> np.ndarray:
        row = self.space.dist_row(v)
        out = np.nonzero(row <= r)[0]
        return out[out != v]

    # -- validation ----------------------------------------------------------

    def validate(self, exact_diameter: bool = False) -> dict:
        """Assert the structural invariants; return logged statistics.

        Diameter is certified through the carve-ball radius (an exact proof
        by the triangle inequality); `exact_diameter` additionally recomputes
        pairwise diameters, which is quadratic per part.
        """
        n = self.space.n
        stats = {"parts": len(self.parts), "max_children": 0, "max_portals": 0}
        root = self.parts[self.root]
        assert len(root.members) == n and root.level_hi == self.levels
        seen_leaves = 0
        self._check_carve_radii()
        for part in self.parts:
            members = part.members
            if part.is_leaf:
                assert part.level_lo == 0 and len(members) == 1
                seen_leaves += 1
            else:
                stats["max_children"] = max(stats["max_children"], len(part.children))
                child_members = np.concatenate(
                    [self.parts[c].members for c in part.children])
                assert np.array_equal(np.sort(child_members), members), \
                    "children must partition the parent"
                assert len(part.children) >= 2, "single-child chains must compress"
            if part.center < 0:
                bound = self.to_original(2.0 ** (part.level_lo + 1))
                if len(members) > 1:
                    sub = self.space.pdist_block(members, members)
                    assert float(sub.max()) <= bound + 1e-9
            if exact_diameter and len(members) > 1:
                sub = self.space.pdist_block(members, members)
                assert float(sub.max()) < self.to_original(2.0 ** (part.level_lo + 1))
            # portal invariants: preciseness, separation, nestedness
            stats["max_portals"] = max(stats["max_portals"], len(part.portals))
            delta = self.to_original(self.rho * 2.0 ** (part.level_lo + 1))
            if len(part.portals) < len(members):
                blk = self.space.pdist_block(members, part.portals)
                assert float(blk.min(axis=1).max()) <= delta + 1e-9, "preciseness"
                psep = self.space.pdist_block(part.portals, part.portals)
                np.fill_diagonal(psep, np.inf)
                assert float(psep.min()) > delta - 1e-9, "separation"
            else:
                assert set(int(m) for m in members) == part.portal_set
            if part.parent is not None:
                parent = self.parts[part.parent]
                inherited = parent.portal_set & set(int(m) for m in members)
                assert inherited <= part.portal_set, "nestedness"
        assert seen_leaves == n
        assert len(self.parts) <= 2 * n, "part count must stay <= 2n"
        return stats

    def _check_carve_radii(self) -> None:
        """Exact diameter certificate: every member of a carved part lies
        within the carve radius of its center, so diameter < 2^(level_lo+1).
        One vectorized pass for coordinate spaces."""
        carved = [p for p in self.parts if p.center >= 0]
        for p in carved:
            assert p.radius < 2.0 ** p.level_lo or len(p.members) == 1
        if self.space.coords is not None:
            coords = self.space.coords
            member_idx = np.concatenate([p.members for p in carved])
            center_idx = np.concatenate(
                [np.full(len(p.members), p.center) for p in carved])
            diff = coords[member_idx] - coords[center_idx]
            dd = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            starts = np.cumsum([0] + [len(p.members) for p in carved])[:-1]
            maxima = np.maximum.reduceat(dd, starts)
            for p, mx in zip(carved, maxima):
                assert mx <= p.radius * self.scale + 1e-9
        else:
            for p in carved:
                dd = self.space.dist_row(int(p.center), p.members)
                assert float(dd.max(initial=0.0)) <= p.radius * self.scale + 1e-9

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "seed": self.rng_seed,
            "tau": self.tau,
            "rho": self.rho,
            "scale": self.scale,
            "levels": self.levels,
            "root": self.root,
            "parts": [
                {
                    "pid": p.pid,
                    "level_lo": p.level_lo,
                    "level_hi": p.level_hi,
                    "members": [int(x) for x in p.members],
                    "center": int(p.center),
                    "radius": p.radius,
                    "parent": p.parent,
                    "children": list(p.children),
                    "portals": [int(x) for x in p.portals],
                }
                for p in self.parts
            ],
        }
        return json.dumps(payload, sort_keys=True)


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

def build_decomposition(space: MetricSpace, rho: float, seed: int,
                        hierarchy: list[Net] | None = None) -> Decomposition:
    """Sample one decomposition: one point order, one tau, carve every level."""
    if not (0.0 < rho < 1.0):
        raise ParameterError("rho must lie in (0, 1)")
    n = space.n
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[perm] = np.arange(n)
    tau = float(rng.uniform(0.5, 1.0))

    if n == 1:
        parts = [Part(pid=0, level_lo=0, level_hi=0,
                      members=np.array([0], dtype=np.int64), center=0,
                      radius=0.0, parent=None, children=[],
                      portals=np.array([0], dtype=np.int64))]
        pid_matrix = np.zeros((1, 1), dtype=np.int32)
        return Decomposition(space, parts, 0, pid_matrix, 1.0, 0, tau, rho, seed)

    scale = space.min_positive_distance()
    diam_scaled = space.diameter_upper() / scale
    levels = max(1, int(math.ceil(math.log2(diam_scaled * (1 + 1e-12)))))

    if hierarchy is None:
        # the hierarchy is deterministic per space; repeated seeded builds
        # (Monte-Carlo harnesses) share it
        cache = getattr(space, "_hierarchy_cache", None)
        if cache is None:
            cache = {}
            space._hierarchy_cache = cache
        key = (scale, levels - 1)
        hierarchy = cache.get(key)
        if hierarchy is None:
            hierarchy = _scaled_hierarchy(space, scale, levels - 1)
            cache[key] = hierarchy

    # claimant per (level, point); level 0 = self, top = single part
    claim = np.empty((levels + 1, n), dtype=np.int64)
    claim[0] = np.arange(n)
    claim[levels] = 0
    for j in range(1, levels):
        claim[j] = _carve_level(space, hierarchy[j].centers, rank,
                                tau * (2.0 ** j) * scale)

    # dense part ids per level, refined by pairing with the parent id
    raw_ids = np.zeros((levels + 1, n), dtype=np.int64)
    for j in range(levels - 1, -1, -1):
        pair = raw_ids[j + 1] * n + claim[j]
        _, raw_ids[j] = np.unique(pair, return_inverse=True)

    return _assemble(space, raw_ids, claim, scale, levels, tau, rho, seed)


def _scaled_hierarchy(space: MetricSpace, scale: float, top: int) -> list[Net]:
    """Nets Y_0..Y_top with Y_i a (2^(i-2) * scale)-net of Y_(i-1)."""
    nets = [Net(centers=space.points.copy(), delta=0.0,
                coverer=np.arange(space.n))]
    for i in range(1, top + 1):
        prev = nets[-1].centers
        delta = (2.0 ** (i - 2)) * scale
        if len(prev) == 1:
            nets.append(Net(centers=prev.copy(), delta=delta,
                            coverer=np.zeros(1, dtype=np.int64)))
            continue
        if delta < scale:
            # below the minimum distance every point is its own net center
            nets.append(Net(centers=prev.copy(), delta=delta,
                            coverer=np.arange(len(prev))))
            continue
        nets.append(build_net(space, prev, delta))
    return nets


def _carve_level(space: MetricSpace, centers: np.ndarray, rank: np.ndarray,
                 radius: float) -> np.ndarray:
    """First-in-random-order ball claiming; returns claimant per point."""
    n = space.n
    out = np.full(n, -1, dtype=np.int64)
    order = centers[np.argsort(rank[centers], kind="stable")]
    if space.coords is not None:
        grid = GridIndex(space.coords, radius)
        for y in order:
            cand = grid.neighborhood(space.coords[y], radius)
            cand = cand[out[cand] < 0]
            if cand.size == 0:
                continue
            dd = space.dist_row(int(y), cand)
            out[cand[dd <= radius]] = y
    else:
        for y in order:
            free = np.nonzero(out < 0)[0]
            if free.size == 0:
                break
            dd = space.dist_row(int(y), free)
            out[free[dd <= radius]] = y
    if np.any(out < 0):
        raise AssertionError("net coverage failed to claim every point")
    return out


def _assemble(space, raw_ids, claim, scale, levels, tau, rho, seed) -> Decomposition:
    n = space.n
    # group members per (level, raw id), and the raw children per raw part
    level_groups: list[dict[int, np.ndarray]] = []
    for j in range(levels + 1):
        order = np.argsort(raw_ids[j], kind="stable")
        ids_sorted = raw_ids[j][order]
        starts = np.concatenate([[0], np.nonzero(np.diff(ids_sorted))[0] + 1])
        ends = np.concatenate([starts[1:], [n]])
        level_groups.append({int(ids_sorted[s]): order[s:e]
                             for s, e in zip(starts, ends)})
    raw_children: list[dict[int, np.ndarray]] = [{}]
    for j in range(1, levels + 1):
        pairs = np.unique(np.stack([raw_ids[j], raw_ids[j - 1]]), axis=1)
        split = np.concatenate([[0], np.nonzero(np.diff(pairs[0]))[0] + 1,
                                [pairs.shape[1]]])
        raw_children.append({int(pairs[0, split[i]]):
                             pairs[1, split[i]:split[i + 1]]
                             for i in range(len(split) - 1)})

    parts: list[Part] = []
    pid_matrix = np.zeros((levels + 1, n), dtype=np.int32)

    def build_node(level: int, raw: int, parent_pid: int | None) -> int:
        members = level_groups[level][raw]
        # extend the span downward while the set does not split
        lo = level
        raw_lo = raw
        while lo > 0:
            child_raws = raw_children[lo][raw_lo]
            if len(child_raws) > 1:
                break
            lo -= 1
            raw_lo = int(child_raws[0])
        pid = len(parts)
        if level == levels and lo == level:
            center, radius = -1, 0.0
        else:
            anchor = int(members[0])
            center = int(claim[lo][anchor]) if lo > 0 else anchor
            radius = tau * (2.0 ** lo) if lo > 0 else 0.0
        part = Part(pid=pid, level_lo=lo, level_hi=level,
                    members=np.sort(members), center=center, radius=radius,
                    parent=parent_pid, children=[],
                    portals=np.empty(0, dtype=np.int64))
        parts.append(part)
        pid_matrix[lo:level + 1, members] = pid
        if lo > 0:
            for child_raw in raw_children[lo][raw_lo]:
                part.children.append(build_node(lo - 1, int(child_raw), pid))
        return pid

    root = build_node(levels, 0, None)

    decomp = Decomposition(space, parts, root, pid_matrix, scale, levels,
                           tau, rho, seed)
    _attach_portals(decomp)
    return decomp


def _attach_portals(decomp: Decomposition) -> None:
    """Top-down portal nets, seeded with inherited parent portals."""
    space = decomp.space
    order = [decomp.root]
    i = 0
    while i < len(order):
        part = decomp.parts[order[i]]
        order.extend(part.children)
        i += 1
    for pid in order:
        part = decomp.parts[pid]
        delta = decomp.to_original(decomp.rho * 2.0 ** (part.level_lo + 1))
        if delta < decomp.scale or len(part.members) == 1:
            # finer than the minimum distance: every member is a portal
            part.portals = part.members.copy()
            part.portal_set = frozenset(int(p) for p in part.portals)
            continue
        if part.parent is None:
            seeds = np.empty(0, dtype=np.int64)
        else:
            parent = decomp.parts[part.parent]
            mask = np.isin(parent.portals, part.members)
            seeds = parent.portals[mask]
        net = build_net(space, part.members, delta,
                        seeds=seeds if len(seeds) else None)
        part.portals = np.sort(net.centers)
        part.portal_set = frozenset(int(p) for p in part.portals)


# ---------------------------------------------------------------------------
# Cut queries
# ---------------------------------------------------------------------------

def cut_level(decomp: Decomposition, u: int, v: int) -> int:
    return decomp.cut_level(u, v)


def ball_cut_level(decomp: Decomposition, v: int, r: float) -> float:
    """Max level at which some point of beta(v, r) is cut from v."""
    if r < 0:
        raise ParameterError("radius must be nonnegative")
    targets = decomp.ball_members(v, r)
    if targets.size == 0:
        return NEVER_CUT
    return float(decomp.cut_levels_against(v, targets).max())


# ---------------------------------------------------------------------------
# Badly-cut predicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BadlyCutParams:
    """Derived thresholds shared by all badly-cut tests."""
    epsilon: float
    p: int
    d: int

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0 / 3.0):
            raise ParameterError("epsilon must lie in (0, 1/3)")
        if self.p not in (1, 2):
            raise ParameterError("objective exponent p must be 1 or 2")

    @property
    def kappa(self) -> float:
        e, p = self.epsilon, self.p
        return e * e * (p / (p + e)) ** p

    @property
    def tau_threshold(self) -> float:
        return 2 * self.d + 2 + math.log2(1.0 / self.kappa)


def default_rho(params: BadlyCutParams, kcenter: bool = False) -> float:
    """Portal net parameter: eps^2 * 2^-tau (eps * 2^-tau for k-center)."""
    lead = params.epsilon if kcenter else params.epsilon ** 2
    return lead * 2.0 ** (-params.tau_threshold)


def _cut_above(decomp: Decomposition, v: int, radius_orig: float,
               level_threshold: float) -> bool:
    if radius_orig <= 0:
        return False
    lvl = ball_cut_level(decomp, v, radius_orig)
    return lvl > level_threshold


def is_badly_cut_client(decomp: Decomposition, c: int, l_c: float,
                        params: BadlyCutParams) -> bool:
    """Ball of radius 3*l_c/eps cut more than tau levels above its size."""
    if l_c <= 0:
        return False
    r = 3.0 * l_c / params.epsilon
    thr = math.log2(decomp.to_scaled(r)) + params.tau_threshold
    return _cut_above(decomp, c, r, thr)


def is_badly_cut_facility(decomp: Decomposition, f: int, opt_f: float,
                          params: BadlyCutParams) -> bool:
    if opt_f <= 0:
        return False
    r = 3.0 * opt_f
    thr = math.log2(decomp.to_scaled(r)) + params.tau_threshold
    return _cut_above(decomp, f, r, thr)


def is_badly_cut_kcenter(decomp: Decomposition, f: int, gamma: float,
                         params: BadlyCutParams) -> bool:
    """Ball beta(f, 2^i) with 2^(i-1) <= 2*gamma < 2^i, cut above i + tau."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    g = decomp.to_scaled(2.0 * gamma)
    i = math.floor(math.log2(g)) + 1
    r = decomp.to_original(2.0 ** i)
    return _cut_above(decomp, f, r, i + params.tau_threshold)


# ---------------------------------------------------------------------------
# Portal-respecting paths
# ---------------------------------------------------------------------------

def node_path(decomp: Decomposition, x: int, stop_pid: int) -> list[Part]:
    """Parts on x's root path from the leaf up to (excluding) stop_pid."""
    nodes = []
    part = decomp.leaf_of(x)
    while part.pid != stop_pid:
        nodes.append(part)
        if part.parent is None:
            break
        part = decomp.parts[part.parent]
    return nodes


def _chain_up(decomp: Decomposition, x: int, stop_pid: int) -> list[int]:
    """Anchor sequence from x, snapping to the nearest portal per part."""
    anchors = [x]
    for part in node_path(decomp, x, stop_pid):
        prev = anchors[-1]
        if prev not in part.portal_set:
            dd = decomp.space.dist_row(prev, part.portals)
            anchors.append(int(part.portals[int(np.argmin(dd))]))
    return anchors


def portal_respecting_path(decomp: Decomposition, u: int,
                           v: int) -> tuple[list[int], float]:
    """Canonical portal-respecting path and its length.

    Both endpoints climb through the nearest portal of each part on their
    root path, meeting at the two children of the lowest common part; the
    length is at most dist(u, v) + 16 * rho * 2^cut_level in scaled units.
    """
    if u == v:
        raise ValueError("path endpoints must differ")
    cut = decomp.cut_level(u, v)
    lca = decomp.part_at(u, cut + 1)
    up_u = _chain_up(decomp, u, lca.pid)
    up_v = _chain_up(decomp, v, lca.pid)
    path = up_u + up_v[::-1]
    dedup = [path[0]]
    for x in path[1:]:
        if x != dedup[-1]:
            dedup.append(x)
    length = sum(decomp.space.dist(a, b) for a, b in zip(dedup, dedup[1:]))
    return dedup, float(length)
