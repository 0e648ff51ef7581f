"""Clustering approximation schemes on metrics of bounded doubling dimension.

Library layout:

  metric       finite metric spaces, nets, net hierarchies, spanners
  split_tree   randomized hierarchical decomposition with portals
  instance     clustering instances and solutions
  baselines    constant-factor guide solutions
  preprocess   aspect-ratio reduction and instance surgery
  dp           portal-respecting dynamic programs for all objectives
  pipeline     end-to-end approximation schemes
  oracle       brute-force exact solvers and the structured-solution validator
  cli          dataset ingestion and experiment orchestration
"""
from .metric import (MetricSpace, Net, Spanner, aspect_ratio, build_net,
                     build_net_hierarchy, build_spanner)
from .instance import OUTLIER, ClusteringInstance, Solution, evaluate_facilities
from .split_tree import (BadlyCutParams, Decomposition, build_decomposition,
                         ball_cut_level, cut_level, default_rho,
                         is_badly_cut_client, is_badly_cut_facility,
                         is_badly_cut_kcenter, portal_respecting_path)

__all__ = [
    "MetricSpace", "Net", "Spanner", "aspect_ratio", "build_net",
    "build_net_hierarchy", "build_spanner",
    "OUTLIER", "ClusteringInstance", "Solution", "evaluate_facilities",
    "BadlyCutParams", "Decomposition", "build_decomposition",
    "ball_cut_level", "cut_level", "default_rho", "is_badly_cut_client",
    "is_badly_cut_facility", "is_badly_cut_kcenter", "portal_respecting_path",
]

__version__ = "0.1.0"
