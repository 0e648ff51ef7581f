"""Shared generators for test instances."""
from __future__ import annotations

import numpy as np
import pytest

from dmclust.instance import ClusteringInstance
from dmclust.metric import MetricSpace


def planar_points(n: int, seed: int, box: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, box, size=(n, 2))


def planar_space(n: int, seed: int, box: float = 1.0) -> MetricSpace:
    return MetricSpace.from_coords(planar_points(n, seed, box), d=2)


def grid_space(side: int, spacing: float = 1.0) -> MetricSpace:
    xs, ys = np.meshgrid(np.arange(side), np.arange(side))
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float) * spacing
    return MetricSpace.from_coords(pts, d=2)


def line_space(positions) -> MetricSpace:
    pts = np.column_stack([np.asarray(positions, dtype=float),
                           np.zeros(len(positions))])
    return MetricSpace.from_coords(pts, d=2)


def random_instance(objective: str, n: int, seed: int, *, n_fac: int | None = None,
                    k: int | None = None, z: int | None = None,
                    demand_max: int = 1, box: float = 1.0) -> ClusteringInstance:
    """Random planar instance: all points are clients, a subset facilities."""
    rng = np.random.default_rng(seed)
    space = planar_space(n, seed + 77_000, box=box)
    clients = np.arange(n)
    n_fac = n if n_fac is None else min(n_fac, n)
    facilities = np.sort(rng.choice(n, size=n_fac, replace=False))
    demands = rng.integers(1, demand_max + 1, size=n) if demand_max > 1 \
        else np.ones(n, dtype=np.int64)
    kw: dict = {}
    if objective == "fl":
        kw["opening_costs"] = rng.uniform(0.05, 0.6, size=n_fac)
    else:
        kw["k"] = k if k is not None else max(1, min(3, n_fac))
    if objective == "pc":
        kw["penalties"] = rng.uniform(0.05, 0.8, size=n)
    if objective == "outliers":
        kw["z"] = z if z is not None else 1
    return ClusteringInstance(space=space, clients=clients,
                              facilities=facilities, objective=objective,
                              demands=demands, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
