"""Minimal-work terrain regrading: transport planning, mapping and simulation."""

__version__ = "0.1.0"

from ._accel import BACKEND
from .gridmap import (CellState, FitPlane, GeometryMismatchError, HeightMap,
                      HeightMapParseError, RankError, SiteMetrics, compute_metrics,
                      diff_to_design, fit_plane, inject_disturbance_noise, kalman_update,
                      load_heightmap, save_heightmap)
from .kinem import LatticeState, PlanningError, Trajectory, annotate, generate_primitives, plan_path
from .lp import LPSolution, StandardFormLP, solve, verify_bruteforce
from .nodes import Node, NodeSet, decimate_sources, extract_nodes
from .transport import (TransportPlan, assemble_bigm_milp, assemble_case_lp, distance_matrix,
                        solve_bigm, solve_transport)
from .triplets import TransportTriplet, build_triplets, order_radially

__all__ = [
    "BACKEND", "CellState", "FitPlane", "GeometryMismatchError", "HeightMap",
    "HeightMapParseError", "LPSolution", "LatticeState", "Node", "NodeSet", "PlanningError",
    "RankError", "SiteMetrics", "StandardFormLP", "Trajectory", "TransportPlan",
    "TransportTriplet", "annotate", "assemble_bigm_milp", "assemble_case_lp",
    "build_triplets", "compute_metrics", "decimate_sources", "diff_to_design",
    "distance_matrix", "extract_nodes", "fit_plane", "generate_primitives",
    "inject_disturbance_noise", "kalman_update", "load_heightmap", "order_radially",
    "plan_path", "save_heightmap", "solve", "solve_bigm", "solve_transport",
    "verify_bruteforce",
]
