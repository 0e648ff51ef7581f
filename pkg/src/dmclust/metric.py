"""Finite metric spaces, nets, net hierarchies, and spanners.

A `MetricSpace` is a finite point set 0..n-1 with a constant-time distance
oracle and a caller-declared doubling dimension `d`.  Two backends exist:

  * coordinate-backed (Euclidean): scales to thousands of points; distance
    rows are computed on demand and a uniform grid accelerates ball queries;
  * matrix-backed: an explicit symmetric distance matrix, used for small
    instances and for surgically modified metrics (truncation closures).

On top of the space this module builds delta-nets (greedy, in index order,
so construction is deterministic), the net hierarchy Y_0 ⊇ Y_1 ⊇ ... used by
the hierarchical decomposition, and a net-tree spanner with a linear number
of edges and constant stretch.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricSpace",
    "Net",
    "Spanner",
    "ParameterError",
    "UndefinedRatioError",
    "build_net",
    "build_net_hierarchy",
    "build_spanner",
    "aspect_ratio",
    "load_points_csv",
    "load_distance_matrix_csv",
]

# Below this size a coordinate space also precomputes the full distance
# matrix; oracle-scale tests hammer dist() hard enough to justify it.
MATRIX_CACHE_THRESHOLD = 600


class ParameterError(ValueError):
    """A structural parameter (delta, rho, gamma, ...) is out of range."""


class UndefinedRatioError(ValueError):
    """Aspect ratio requested for a space with fewer than two distinct points."""


# ---------------------------------------------------------------------------
# Metric space
# ---------------------------------------------------------------------------

class MetricSpace:
    """Finite metric with constant-time distances and declared doubling dim.

    `d` is declared by the caller, not inferred; every guarantee downstream is
    parameterized by it.  Instances are immutable after construction and safe
    for concurrent reads.
    """

    def __init__(self, *, coords: np.ndarray | None = None,
                 matrix: np.ndarray | None = None, d: int = 2):
        if (coords is None) == (matrix is None):
            raise ParameterError("exactly one of coords/matrix must be given")
        if d < 0:
            raise ParameterError("doubling dimension must be nonnegative")
        self.d = int(d)
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        if matrix is not None:
            m = np.asarray(matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ParameterError("distance matrix must be square")
            self._matrix = m
            self.n = m.shape[0]
        else:
            self.n = self.coords.shape[0]
            self._matrix = None
            if self.n <= MATRIX_CACHE_THRESHOLD:
                self._matrix = self._pairwise(self.coords, self.coords)
        self.points = np.arange(self.n)

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_coords(cls, coords: np.ndarray, d: int = 2) -> "MetricSpace":
        return cls(coords=np.atleast_2d(np.asarray(coords, dtype=float)), d=d)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, d: int = 2) -> "MetricSpace":
        return cls(matrix=matrix, d=d)

    @staticmethod
    def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    # -- distance oracle ----------------------------------------------------

    def dist(self, u: int, v: int) -> float:
        if self._matrix is not None:
            return float(self._matrix[u, v])
        diff = self.coords[u] - self.coords[v]
        return float(math.sqrt(float(diff @ diff)))

    def dist_row(self, u: int, targets: np.ndarray | None = None) -> np.ndarray:
        """Distances from u to `targets` (all points when None)."""
        if self._matrix is not None:
            row = self._matrix[u]
            return row.copy() if targets is None else row[targets]
        pts = self.coords if targets is None else self.coords[targets]
        diff = pts - self.coords[u]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def pdist_block(self, idx_a: np.ndarray, idx_b: np.ndarray) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix[np.ix_(idx_a, idx_b)]
        return self._pairwise(self.coords[idx_a], self.coords[idx_b])

    # -- global quantities --------------------------------------------------

    def min_positive_distance(self) -> float:
        if self.n < 2:
            raise UndefinedRatioError("need at least 2 points")
        cached = getattr(self, "_min_dist", None)
        if cached is not None:
            return cached
        if self._matrix is not None:
            m = self._matrix.copy()
            np.fill_diagonal(m, np.inf)
            val = float(m.min())
        else:
            val = self._min_dist_grid()
        if val <= 0.0:
            raise ParameterError("duplicate points: minimum distance is 0")
        self._min_dist = val
        return val

    def _min_dist_grid(self) -> float:
        # Exact nearest-neighbor distance via a uniform grid sized by a
        # density heuristic, shrinking the cell until neighbors are local.
        best = np.inf
        coords = self.coords
        span = float(np.max(coords.max(axis=0) - coords.min(axis=0)))
        if span == 0.0:
            return 0.0
        cell = span / max(2, int(self.n ** (1.0 / coords.shape[1])))
        while True:
            grid = GridIndex(coords, cell)
            best = np.inf
            for i in range(self.n):
                cand = grid.neighborhood(coords[i])
                cand = cand[cand != i]
                if cand.size:
                    dmin = float(np.min(self.dist_row(i, cand)))
                    best = min(best, dmin)
            if best <= cell or best is np.inf:
                return best
            cell = best  # tighten and re-check: guarantees exactness
        return best

    def diameter_upper(self) -> float:
        """Cheap upper bound on the diameter (exact for matrix spaces)."""
        if self._matrix is not None:
            return float(self._matrix.max())
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def diameter(self) -> float:
        if self._matrix is not None:
            return float(self._matrix.max())
        best = 0.0
        for i in range(self.n):
            best = max(best, float(self.dist_row(i).max()))
        return best

    def __len__(self) -> int:
        return self.n


# ---------------------------------------------------------------------------
# Grid index for coordinate spaces
# ---------------------------------------------------------------------------

class GridIndex:
    """Uniform bucket grid over a coordinate array, for ball queries."""

    def __init__(self, coords: np.ndarray, cell: float,
                 subset: np.ndarray | None = None):
        self.coords = coords
        self.cell = float(cell)
        idx = np.arange(coords.shape[0]) if subset is None else np.asarray(subset)
        keys = np.floor(coords[idx] / self.cell).astype(np.int64)
        self.buckets: dict[tuple, np.ndarray] = {}
        order = np.lexsort(keys.T)
        keys_sorted = keys[order]
        idx_sorted = idx[order]
        if len(idx_sorted):
            change = np.any(np.diff(keys_sorted, axis=0) != 0, axis=1)
            starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
            ends = np.concatenate([starts[1:], [len(idx_sorted)]])
            for s, e in zip(starts, ends):
                self.buckets[tuple(keys_sorted[s])] = idx_sorted[s:e]
        self.dim = coords.shape[1]

    def neighborhood(self, point: np.ndarray, radius: float | None = None) -> np.ndarray:
        """Candidate indices whose cells intersect the ball (superset)."""
        r = self.cell if radius is None else radius
        lo = np.floor((point - r) / self.cell).astype(np.int64)
        hi = np.floor((point + r) / self.cell).astype(np.int64)
        buckets = self.buckets
        if self.dim == 2:
            chunks = []
            for x in range(lo[0], hi[0] + 1):
                for y in range(lo[1], hi[1] + 1):
                    got = buckets.get((x, y))
                    if got is not None:
                        chunks.append(got)
        else:
            ranges = [range(lo[j], hi[j] + 1) for j in range(self.dim)]
            chunks = [buckets[key] for key in itertools.product(*ranges)
                      if key in buckets]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        if len(chunks) == 1:
            return chunks[0]
        return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# Nets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Net:
    """A delta-net: centers pairwise > delta apart, covering within delta."""
    centers: np.ndarray
    delta: float
    # index into `centers` of the center covering each ground point,
    # aligned with the ground array passed to build_net
    coverer: np.ndarray = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.centers)


def build_net(space: MetricSpace, ground: np.ndarray | None, delta: float,
              seeds: np.ndarray | None = None) -> Net:
    """Greedy delta-net of `ground`, scanned in index order.

    `seeds` (optional) are forced members, inserted before the scan; they must
    themselves be > delta separated.  Used to make portal nets nested.
    """
    if delta <= 0:
        raise ParameterError("delta must be positive")
    ground = space.points if ground is None else np.asarray(ground, dtype=np.int64)
    if ground.size == 0:
        raise ParameterError("ground set must be nonempty")

    centers: list[int] = []
    coverer = np.full(ground.size, -1, dtype=np.int64)

    if space.coords is not None and space.coords.shape[1] == 2:
        xs = space.coords[:, 0].tolist()
        ys = space.coords[:, 1].tolist()
        grid_keys: dict[tuple[int, int], list[int]] = {}
        delta2 = delta * delta
        inv = 1.0 / delta

        def nearest_center(px: float, py: float) -> tuple[int, float]:
            kx = math.floor(px * inv)
            ky = math.floor(py * inv)
            best, bd = -1, math.inf
            for cx in (kx - 1, kx, kx + 1):
                for cy in (ky - 1, ky, ky + 1):
                    bucket = grid_keys.get((cx, cy))
                    if not bucket:
                        continue
                    for ci in bucket:
                        c = centers[ci]
                        dx = xs[c] - px
                        dy = ys[c] - py
                        dd = dx * dx + dy * dy
                        if dd < bd:
                            best, bd = ci, dd
            return best, bd

        def add_center(g: int):
            centers.append(int(g))
            key = (math.floor(xs[g] * inv), math.floor(ys[g] * inv))
            grid_keys.setdefault(key, []).append(len(centers) - 1)

        if seeds is not None:
            for s in seeds:
                add_center(int(s))
        seed_set = set() if seeds is None else set(int(s) for s in seeds)
        for pos, g in enumerate(ground):
            g = int(g)
            ci, dd = nearest_center(xs[g], ys[g])
            if g in seed_set:
                coverer[pos] = ci
            elif dd <= delta2:
                coverer[pos] = ci
            else:
                add_center(g)
                coverer[pos] = len(centers) - 1
    elif space.coords is not None:
        coords = space.coords
        grid_keys2: dict[tuple, list[int]] = {}
        offsets = [np.asarray(off) for off in
                   itertools.product((-1, 0, 1), repeat=coords.shape[1])]

        def nearest_center_nd(p) -> tuple[int, float]:
            kp = np.floor(p / delta).astype(np.int64)
            cand: list[int] = []
            for off in offsets:
                bucket = grid_keys2.get(tuple(kp + off))
                if bucket:
                    cand.extend(bucket)
            if not cand:
                return -1, np.inf
            pts = coords[[centers[ci] for ci in cand]]
            diff = pts - p
            dd = np.einsum("ij,ij->i", diff, diff)
            j = int(np.argmin(dd))
            return cand[j], float(math.sqrt(float(dd[j])))

        def add_center_nd(g):
            centers.append(int(g))
            key = tuple(np.floor(coords[g] / delta).astype(np.int64))
            grid_keys2.setdefault(key, []).append(len(centers) - 1)

        if seeds is not None:
            for s in seeds:
                add_center_nd(s)
        seed_set = set() if seeds is None else set(int(s) for s in seeds)
        for pos, g in enumerate(ground):
            ci, dd = nearest_center_nd(coords[g])
            if int(g) in seed_set:
                coverer[pos] = ci
            elif dd <= delta:
                coverer[pos] = ci
            else:
                add_center_nd(g)
                coverer[pos] = len(centers) - 1
    else:
        center_arr: list[int] = []
        if seeds is not None:
            center_arr.extend(int(s) for s in seeds)
        seed_set = set(center_arr)
        for pos, g in enumerate(ground):
            if center_arr:
                drow = space.dist_row(int(g), np.asarray(center_arr))
                j = int(np.argmin(drow))
                if int(g) in seed_set or drow[j] <= delta:
                    coverer[pos] = j
                    continue
            center_arr.append(int(g))
            coverer[pos] = len(center_arr) - 1
        centers = center_arr

    return Net(centers=np.asarray(centers, dtype=np.int64), delta=float(delta),
               coverer=coverer)


def build_net_hierarchy(space: MetricSpace, levels: int | None = None) -> list[Net]:
    """Nets Y_0 .. Y_L with Y_0 = all points and Y_i a 2^(i-2)-net of Y_(i-1).

    Precondition: the minimum pairwise distance is 1 (callers rescale), so the
    number of levels defaults to ceil(log2(diameter)).
    """
    if levels is None:
        diam = space.diameter_upper()
        levels = max(1, int(math.ceil(math.log2(max(diam, 1.0 + 1e-12)))))
    nets = [Net(centers=space.points.copy(), delta=0.0,
                coverer=np.arange(space.n))]
    for i in range(1, levels + 1):
        prev = nets[-1].centers
        nets.append(build_net(space, prev, 2.0 ** (i - 2)))
    return nets


# ---------------------------------------------------------------------------
# Spanner
# ---------------------------------------------------------------------------

@dataclass
class Spanner:
    """Weighted graph whose shortest paths approximate the metric."""
    n: int
    edges: list[tuple[int, int, float]]
    stretch: float

    def adjacency(self) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for u, v, w in self.edges:
            adj[u].append((v, w))
            adj[v].append((u, w))
        return adj

    def shortest_paths_from(self, source: int,
                            max_weight: float = math.inf) -> np.ndarray:
        """Dijkstra over edges of weight <= max_weight."""
        import heapq
        dist = np.full(self.n, np.inf)
        dist[source] = 0.0
        heap = [(0.0, source)]
        adj = self._adj_cache()
        while heap:
            dd, u = heapq.heappop(heap)
            if dd > dist[u]:
                continue
            for v, w in adj[u]:
                if w > max_weight:
                    continue
                nd = dd + w
                if nd < dist[v] - 1e-15:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def _adj_cache(self):
        if not hasattr(self, "_adj"):
            self._adj = self.adjacency()
        return self._adj

    def components(self, max_weight: float = math.inf) -> np.ndarray:
        """Component label per point using edges of weight <= max_weight."""
        parent = np.arange(self.n)

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v, w in self.edges:
            if w <= max_weight:
                ru, rv = find(u), find(v)
                if ru != rv:
                    parent[ru] = rv
        return np.asarray([find(i) for i in range(self.n)])


def build_spanner(space: MetricSpace, stretch: float = 4.0) -> Spanner:
    """Net-tree spanner: parent edges plus same-level cross edges.

    Cross edges at level i connect net points within C * 2^i where
    C = max(2, 1 + 4/(stretch-1)); the resulting graph has stretch at most
    `stretch` and O(n) edges on doubling inputs (constant logged by tests).
    """
    if stretch < 1.5:
        raise ParameterError("stretch must be at least 1.5")
    scale = 1.0
    if space.n >= 2:
        scale = space.min_positive_distance()
    cross_c = max(2.0, 1.0 + 4.0 / (stretch - 1.0))

    # Work in units of the minimum distance so the hierarchy applies as-is.
    diam = space.diameter_upper() / scale
    levels = max(1, int(math.ceil(math.log2(max(diam, 1.0 + 1e-12)))))

    edge_set: dict[tuple[int, int], float] = {}

    def add_edge(u: int, v: int):
        if u == v:
            return
        key = (min(u, v), max(u, v))
        if key not in edge_set:
            edge_set[key] = space.dist(*key)

    prev = space.points
    for i in range(1, levels + 1):
        delta = (2.0 ** (i - 2)) * scale
        net = build_net(space, prev, delta) if len(prev) > 1 else Net(
            centers=prev.copy(), delta=delta, coverer=np.zeros(1, dtype=np.int64))
        # parent edges: each lower-level net point to its coverer
        for pos, g in enumerate(prev):
            add_edge(int(g), int(net.centers[net.coverer[pos]]))
        # cross edges within C * 2^i
        radius = cross_c * (2.0 ** i) * scale
        pts = net.centers
        if space.coords is not None and len(pts) > 1:
            grid = GridIndex(space.coords, radius, subset=pts)
            for g in pts:
                cand = grid.neighborhood(space.coords[g], radius)
                dd = space.dist_row(int(g), cand)
                for v in cand[dd <= radius]:
                    add_edge(int(g), int(v))
        else:
            for a in range(len(pts)):
                for b in range(a + 1, len(pts)):
                    if space.dist(int(pts[a]), int(pts[b])) <= radius:
                        add_edge(int(pts[a]), int(pts[b]))
        prev = net.centers
        if len(prev) == 1:
            break

    edges = [(u, v, w) for (u, v), w in sorted(edge_set.items())]
    return Spanner(n=space.n, edges=edges, stretch=float(stretch))


# ---------------------------------------------------------------------------
# Aspect ratio
# ---------------------------------------------------------------------------

def aspect_ratio(space: MetricSpace) -> float:
    """Max pairwise distance over min positive pairwise distance."""
    if space.n < 2:
        raise UndefinedRatioError("aspect ratio needs at least 2 points")
    return space.diameter() / space.min_positive_distance()


# ---------------------------------------------------------------------------
# CSV ingestion (documented formats)
# ---------------------------------------------------------------------------

def load_points_csv(path: str, d: int = 2) -> MetricSpace:
    """Coordinate CSV: one point per row, columns are coordinates in order.

    No header.  The Euclidean metric is induced; `d` is the declared doubling
    dimension of the family the points come from.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError as exc:
                raise ParameterError(f"{path}:{lineno}: bad coordinate row") from exc
    if not rows:
        raise ParameterError(f"{path}: no points")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParameterError(f"{path}: inconsistent column count")
    return MetricSpace.from_coords(np.asarray(rows), d=d)


def load_distance_matrix_csv(path: str, d: int = 2,
                             check_triangle: bool = True) -> MetricSpace:
    """Lower-triangular distance CSV: line i holds d(i,0),...,d(i,i).

    The diagonal entries must be 0.  Symmetry is implied; the triangle
    inequality is validated exhaustively for small inputs.
    """
    tri = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                tri.append([float(x) for x in line.split(",")])
            except ValueError as exc:
                raise ParameterError(f"{path}:{lineno}: bad distance row") from exc
    n = len(tri)
    m = np.zeros((n, n))
    for i, row in enumerate(tri):
        if len(row) != i + 1:
            raise ParameterError(f"{path}: line {i + 1} must hold {i + 1} values")
        if row[-1] != 0.0:
            raise ParameterError(f"{path}: diagonal entry on line {i + 1} must be 0")
        for j, val in enumerate(row[:-1]):
            if val <= 0:
                raise ParameterError(f"{path}: nonpositive off-diagonal distance")
            m[i, j] = m[j, i] = val
    if check_triangle and n <= 200:
        validate_triangle(m)
    return MetricSpace.from_matrix(m, d=d)


def validate_triangle(m: np.ndarray, tol: float = 1e-9) -> None:
    n = m.shape[0]
    for k in range(n):
        viol = m > m[:, [k]] + m[[k], :] + tol
        if viol.any():
            i, j = np.argwhere(viol)[0]
            raise ParameterError(
                f"triangle inequality violated: d({i},{j}) > d({i},{k}) + d({k},{j})")
