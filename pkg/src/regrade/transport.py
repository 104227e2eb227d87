"""Unbalanced earth-mover transport between source and sink nodes.

The plan minimises the Frobenius product of the transport matrix and the
planar distance matrix. When total source and sink volume differ, the larger
side keeps the excess: with more sink volume every source is emptied, with
more (or equal) source volume every sink is filled.

Three equivalent constructions are provided:

* the two-case LP assembled in the block-matrix standard form,
* the single big-M MILP with one binary case variable,
* a balanced min-cost flow (the compiled kernel) for large instances.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .lp import INFEASIBLE, OPTIMAL, LPSolution, StandardFormLP, solve
from .nodes import NodeSet

log = logging.getLogger(__name__)

CASE1 = "Case1_sink_excess"
CASE2 = "Case2_source_excess_or_equal"
VOLUME_EPSILON = 1e-9
DENSE_LIMIT = 400  # n*m above this goes to the flow kernel under solver="auto"


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class VolumeCase:
    case: str
    b: int
    M: float
    source_total: float
    sink_total: float


@dataclass(frozen=True)
class Move:
    source: int
    sink: int
    volume: float


@dataclass
class TransportPlan:
    moves: list
    objective: float
    case: Optional[VolumeCase]
    nodes: NodeSet
    solver: str = ""
    solve_time: float = 0.0
    pi: Optional[np.ndarray] = field(default=None, repr=False)

    def matrix(self) -> np.ndarray:
        """Full transport matrix (n x m)."""
        if self.pi is not None:
            return self.pi
        out = np.zeros((self.nodes.n, self.nodes.m))
        for mv in self.moves:
            out[mv.source, mv.sink] += mv.volume
        return out

    @property
    def moved_volume(self) -> float:
        return float(sum(mv.volume for mv in self.moves))

    def to_json(self) -> dict:
        src, snk = self.nodes.sources, self.nodes.sinks
        return {
            "case": self.case.case if self.case else None,
            "objective": self.objective,
            "moves": [{"src": [src[mv.source].px, src[mv.source].py],
                       "dst": [snk[mv.sink].px, snk[mv.sink].py],
                       "volume": mv.volume} for mv in self.moves],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def load_plan_json(data) -> list[dict]:
    """Moves of a serialized plan (``src``, ``dst``, ``volume`` records)."""
    if isinstance(data, str):
        data = json.loads(data)
    moves = data.get("moves") if isinstance(data, dict) else data
    if moves is None:
        raise ValueError("plan JSON has no 'moves'")
    return moves


def distance_matrix(nodes: NodeSet) -> np.ndarray:
    """Planar Euclidean distance from each source (rows) to each sink (cols)."""
    P, Q = nodes.source_xy(), nodes.sink_xy()
    if len(P) == 0 or len(Q) == 0:
        return np.zeros((len(P), len(Q)))
    d = P[:, None, :] - Q[None, :, :]
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


def select_case(nodes: NodeSet) -> VolumeCase:
    sy = float(nodes.source_volumes().sum())
    sx = float(nodes.sink_volumes().sum())
    b = 0 if sy < sx else 1
    return VolumeCase(CASE1 if b == 0 else CASE2, b, max(sy, sx), sy, sx)


def _ones_blocks(n, m):
    # row sums of the row-major flattened matrix, then column sums
    B1m = np.kron(np.eye(n), np.ones((1, m)))
    B1n = np.kron(np.ones((1, n)), np.eye(m))
    return B1m, B1n


def assemble_case_lp(nodes: NodeSet, D: np.ndarray, case: VolumeCase) -> StandardFormLP:
    """Block-matrix standard form for the selected volume case."""
    n, m = nodes.n, nodes.m
    D = np.asarray(D, dtype=float)
    if D.shape != (n, m):
        raise ValueError(f"distance matrix shape {D.shape} does not match ({n}, {m})")
    vy, vx = nodes.source_volumes(), nodes.sink_volumes()
    B1m, B1n = _ones_blocks(n, m)
    negI = -np.eye(n * m)
    if case.case == CASE1:
        G = np.vstack([negI, B1n])
        h = np.concatenate([np.zeros(n * m), vx])
        A, b = B1m, vy
    else:
        G = np.vstack([negI, B1m])
        h = np.concatenate([np.zeros(n * m), vy])
        A, b = B1n, vx
    return StandardFormLP(D.ravel(), G, h, A, b)


@dataclass(frozen=True)
class BigMMILP:
    """LP data over ``[vec(Pi), b]`` plus the index of the binary variable."""

    lp: StandardFormLP
    binary_index: int
    M: float
    n: int
    m: int

    def fix_binary(self, value: int) -> StandardFormLP:
        N = self.lp.n_vars
        row = np.zeros((1, N))
        row[0, self.binary_index] = 1.0
        return StandardFormLP(self.lp.c, self.lp.G, self.lp.h,
                              np.vstack([self.lp.A, row]),
                              np.concatenate([self.lp.b_eq, [float(value)]]))


def assemble_bigm_milp(nodes: NodeSet, D: np.ndarray) -> BigMMILP:
    """Single MILP with a binary case selector and big-M lower bounds."""
    n, m = nodes.n, nodes.m
    if n == 0 or m == 0:
        raise ValueError("big-M formulation needs nonempty source and sink sets")
    D = np.asarray(D, dtype=float)
    if D.shape != (n, m):
        raise ValueError(f"distance matrix shape {D.shape} does not match ({n}, {m})")
    vy, vx = nodes.source_volumes(), nodes.sink_volumes()
    M = max(vy.sum(), vx.sum())
    nm = n * m
    B1m, B1n = _ones_blocks(n, m)
    zc_m = np.zeros((m, 1))
    zc_n = np.zeros((n, 1))
    ones_m = np.ones((m, 1))
    ones_n = np.ones((n, 1))
    G = np.vstack([
        np.hstack([-np.eye(nm), np.zeros((nm, 1))]),   # -Pi <= 0
        np.hstack([B1n, zc_m]),                         # Pi'1 - vx <= 0
        np.hstack([B1m, zc_n]),                         # Pi 1 - vy <= 0
        np.hstack([-B1n, M * ones_m]),                  # -Pi'1 + vx - M(1 - b) 1 <= 0
        np.hstack([-B1m, -M * ones_n]),                 # -Pi 1 + vy - M b 1 <= 0
        np.hstack([np.zeros((2, nm)), [[-1.0], [1.0]]]),  # 0 <= b <= 1
    ])
    h = np.concatenate([np.zeros(nm), vx, vy, M - vx, -vy, [0.0, 1.0]])
    c = np.concatenate([D.ravel(), [0.0]])
    return BigMMILP(StandardFormLP(c, G, h, np.zeros((0, nm + 1)), np.zeros(0)),
                    nm, float(M), n, m)


def solve_bigm(milp: BigMMILP, branch: str = "preselect", nodes: NodeSet | None = None,
               tol: float = 1e-9) -> tuple[LPSolution, int]:
    """Solve the big-M MILP by fixing the binary.

    ``branch="preselect"`` fixes b from the volume totals (one LP);
    ``branch="both"`` solves b=0 and b=1 and keeps the better feasible one.
    """
    if branch == "preselect":
        if nodes is None:
            raise ValueError("preselect branching needs the node set")
        b = select_case(nodes).b
        return solve(milp.fix_binary(b), tol=tol), b
    if branch != "both":
        raise ValueError(f"unknown branch strategy {branch!r}")
    best, best_b = None, -1
    for b in (0, 1):
        sol = solve(milp.fix_binary(b), tol=tol)
        if sol.status == OPTIMAL and (best is None or sol.objective < best.objective - 1e-12):
            best, best_b = sol, b
    if best is None:
        return LPSolution(None, math.nan, INFEASIBLE), -1
    return best, best_b


def _flow_solve(D, vy, vx):
    eps = 1e-13 * max(1.0, float(vy.sum()), float(vx.sum()))
    flow, _ = _accel.ssp_transport(np.ascontiguousarray(D, dtype=np.float64),
                                   np.ascontiguousarray(vy, dtype=np.float64),
                                   np.ascontiguousarray(vx, dtype=np.float64), eps)
    return flow


def _polish_equalities(pi, case, vy, vx):
    # push round-off on the exhausted side onto the largest entry of each line
    if case.case == CASE2:
        err = vx - pi.sum(axis=0)
        cols = np.arange(pi.shape[1])
        rows = np.argmax(pi, axis=0)
        pi[rows, cols] = np.maximum(pi[rows, cols] + err, 0.0)
    else:
        err = vy - pi.sum(axis=1)
        rows = np.arange(pi.shape[0])
        cols = np.argmax(pi, axis=1)
        pi[rows, cols] = np.maximum(pi[rows, cols] + err, 0.0)
    return pi


def solve_transport(nodes: NodeSet, solver: str = "auto",
                    volume_epsilon: float = VOLUME_EPSILON, tol: float = 1e-9,
                    trace=None) -> TransportPlan:
    """Minimal-work transport plan for a node set.

    ``solver`` is ``"simplex"`` (dense two-phase simplex on the standard
    form), ``"flow"`` (successive-shortest-path kernel) or ``"auto"``.
    ``trace`` is handed to the simplex for per-pivot inspection.
    """
    n, m = nodes.n, nodes.m
    if n == 0 or m == 0:
        return TransportPlan([], 0.0, None, nodes, solver="empty",
                             pi=np.zeros((n, m)))
    t0 = time.perf_counter()
    D = distance_matrix(nodes)
    case = select_case(nodes)
    vy, vx = nodes.source_volumes(), nodes.sink_volumes()
    if solver == "auto":
        solver = "simplex" if n * m <= DENSE_LIMIT else "flow"
    if solver == "simplex":
        lp = assemble_case_lp(nodes, D, case)
        sol = solve(lp, tol=tol, trace=trace)
        if sol.status != OPTIMAL:
            raise TransportError(f"case LP reported {sol.status}; volume cases are always feasible")
        pi = sol.x.reshape(n, m).copy()
    elif solver == "flow":
        pi = _flow_solve(D, vy, vx)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    pi = _polish_equalities(np.maximum(pi, 0.0), case, vy, vx)
    elapsed = time.perf_counter() - t0
    objective = float(np.sum(pi * D))
    ii, jj = np.nonzero(pi > volume_epsilon)
    moves = [Move(int(i), int(j), float(pi[i, j])) for i, j in zip(ii, jj)]
    log.debug("transport %dx%d %s via %s: objective %.6g in %.3fs",
              n, m, case.case, solver, objective, elapsed)
    return TransportPlan(moves, objective, case, nodes, solver, elapsed, pi)
