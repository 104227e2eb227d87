"""Lattice A* over (x, y, heading) with an ascent-weighted cost.

Primitives are circular arcs (or straight segments) whose end heading lies
exactly on the discrete heading lattice. Positions stay continuous; the
closed set is keyed on positions snapped to a grid, so every returned
waypoint pair replays exactly as one primitive.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .gridmap import HeightMap

log = logging.getLogger(__name__)

FORWARD = 1
REVERSE = -1

N_HEADINGS = 32
MIN_TURN_RADIUS = 0.5
ARC_LENGTH = 0.25
POS_THRESHOLD = 0.1
HEADING_THRESHOLD = math.radians(10.0)
ESCALATION = (1.0, 1.5, 2.5, 4.0)
EXPANSION_BUDGET = 20000
V_FWD = 0.25
V_REV = 0.25
RAISED_OFFSET = 0.05


class PlanningError(RuntimeError):
    """No path found within the expansion budget of any attempt."""


def wrap_angle(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


@dataclass(frozen=True)
class LatticeState:
    x: float
    y: float
    heading: int
    direction: int = FORWARD

    def theta(self, n_headings: int = N_HEADINGS) -> float:
        return wrap_angle(self.heading * 2 * math.pi / n_headings)


def heading_index(theta: float, n_headings: int = N_HEADINGS) -> int:
    return int(round(theta / (2 * math.pi / n_headings))) % n_headings


@dataclass(frozen=True)
class Primitive:
    start_heading: int
    end_heading: int
    direction: int
    curvature: float      # signed, 1/m; 0 for straight
    length: float         # path length, m
    dx: float
    dy: float
    samples: np.ndarray = field(repr=False, compare=False)   # (S, 2) offsets, start excluded


def _arc_pose(theta0, direction, curvature, s):
    """Offset and heading after travelling path length ``s``."""
    if curvature == 0.0:
        return direction * s * np.cos(theta0), direction * s * np.sin(theta0), theta0 + 0 * s
    th = theta0 + direction * curvature * s
    return ((np.sin(th) - math.sin(theta0)) / curvature,
            (math.cos(theta0) - np.cos(th)) / curvature, th)


def generate_primitives(turn_radii: Sequence[float] = (MIN_TURN_RADIUS, 2 * MIN_TURN_RADIUS),
                        arc_length: float = ARC_LENGTH, n_headings: int = N_HEADINGS,
                        min_radius: float = MIN_TURN_RADIUS, sample_step: float = 0.025,
                        directions=(FORWARD, REVERSE)) -> dict:
    """Primitive set keyed by (start heading index, direction).

    Each finite radius gives a left and a right arc whose turn angle is
    ``arc_length / R`` rounded to a whole number of heading steps (at least
    one). A straight segment of ``arc_length`` is always included.
    """
    if not arc_length > 0:
        raise ValueError("arc_length must be positive")
    if n_headings < 4:
        raise ValueError("need at least 4 headings")
    radii = [float(r) for r in turn_radii]
    for r in radii:
        if r < min_radius:
            raise ValueError(f"turn radius {r} below minimum {min_radius}")
    dtheta = 2 * math.pi / n_headings
    shapes = [(0.0, 0, arc_length)]
    for R in radii:
        if math.isinf(R):
            continue
        steps = max(1, int(round(arc_length / R / dtheta)))
        for side in (1, -1):
            shapes.append((side / R, side * steps, steps * dtheta * R))

    out = {}
    for h in range(n_headings):
        th0 = h * dtheta
        for d in directions:
            prims = []
            for kappa, dsteps, length in shapes:
                ns = max(2, int(math.ceil(length / sample_step)))
                s = np.linspace(0.0, length, ns + 1)[1:]
                px, py, _ = _arc_pose(th0, d, kappa, s)
                dx, dy, _ = _arc_pose(th0, d, kappa, np.array([length]))
                end = (h + d * dsteps) % n_headings
                prims.append(Primitive(h, end, d, kappa, length, float(dx[0]), float(dy[0]),
                                       np.column_stack([px, py])))
            out[(h, d)] = prims
    return out


@dataclass(frozen=True)
class TrajWaypoint:
    x: float
    y: float
    heading: float
    direction: int = FORWARD
    target_velocity: float = 0.0
    blade_height: float = 0.0


@dataclass
class Trajectory:
    waypoints: list = field(default_factory=list)
    cost: float = 0.0
    expansions: int = 0
    w_heuristic: float = 1.0

    def __len__(self):
        return len(self.waypoints)

    @property
    def length(self) -> float:
        return sum(_segment_length(a, b) for a, b in zip(self.waypoints, self.waypoints[1:]))

    def to_json(self) -> list:
        return [dict(x=w.x, y=w.y, heading=w.heading,
                     direction="forward" if w.direction == FORWARD else "reverse",
                     target_velocity=w.target_velocity, blade_height=w.blade_height)
                for w in self.waypoints]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def sample(self, step: float | None = None, dt: float | None = None):
        """Dense (x, y, heading, direction, velocity, blade) rows along the path.

        Give either a fixed ``step`` in meters or a time step ``dt``, in which
        case each segment advances ``target_velocity * dt`` per row. Segments
        are rebuilt from their endpoint poses as constant-curvature arcs, the
        same shape the planner generated.
        """
        if (step is None) == (dt is None):
            raise ValueError("give exactly one of step or dt")
        rows = []
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            kappa, length = _segment_shape(a, b)
            ds = step if step is not None else b.target_velocity * dt
            if not ds > 0:
                raise ValueError("sampling step must be positive")
            n = max(1, int(math.ceil(length / ds - 1e-9)))
            s = np.linspace(0.0, length, n + 1)[1:]
            px, py, th = _arc_pose(a.heading, b.direction, kappa, s)
            for x, y, t in zip(a.x + px, a.y + py, np.broadcast_to(th, s.shape)):
                rows.append((float(x), float(y), float(wrap_angle(t)), b.direction,
                             b.target_velocity, b.blade_height))
        return rows


def _segment_shape(a: TrajWaypoint, b: TrajWaypoint):
    dth = wrap_angle(b.heading - a.heading)
    chord = math.hypot(b.x - a.x, b.y - a.y)
    if abs(dth) < 1e-12:
        return 0.0, chord
    R = chord / (2 * abs(math.sin(dth / 2)))
    length = R * abs(dth)
    return b.direction * dth / length, length


def _segment_length(a, b):
    return _segment_shape(a, b)[1]


def path_ascent(hmap: HeightMap, xy: np.ndarray) -> float:
    """Summed positive height steps along a polyline sampled on the map."""
    z = _heights_at(hmap, xy)
    return float(np.maximum(np.diff(z), 0.0).sum())


def _heights_at(hmap: HeightMap, xy):
    r, c = hmap.world_to_cell(xy[..., 0], xy[..., 1])
    r = np.clip(r, 0, hmap.height_cells - 1)
    c = np.clip(c, 0, hmap.width_cells - 1)
    return hmap.heights[r, c]


def _goal_reached(x, y, theta, goal, pos_tol, head_tol):
    return (math.hypot(x - goal[0], y - goal[1]) <= pos_tol
            and abs(wrap_angle(theta - goal[2])) <= head_tol)


def _search(hmap, start, goal, prims, n_headings, w_topo, w_h, pos_tol, head_tol,
            budget, key_res, allow_reverse):
    x0, x1, y0, y1 = hmap.extent
    Z = hmap.heights
    res, ox, oy = hmap.resolution, hmap.origin[0], hmap.origin[1]
    rows, cols = hmap.shape
    dtheta = 2 * math.pi / n_headings
    gx, gy = goal[0], goal[1]

    def key(x, y, h):
        return (int(round(x / key_res)), int(round(y / key_res)), h)

    def heur(x, y):
        return max(0.0, math.hypot(x - gx, y - gy) - pos_tol)

    # stack the per-heading primitive samples once: (P, S, 2) with padding
    by_head = {}
    for h in range(n_headings):
        plist = prims[(h, FORWARD)] + (prims[(h, REVERSE)] if allow_reverse else [])
        S = max(p.samples.shape[0] for p in plist)
        pts = np.empty((len(plist), S + 1, 2))
        for i, p in enumerate(plist):
            k = p.samples.shape[0]
            pts[i, 0] = 0.0
            pts[i, 1:k + 1] = p.samples
            pts[i, k + 1:] = p.samples[-1]
        by_head[h] = (plist, pts)

    counter = itertools.count()
    sx, sy, sh = start.x, start.y, start.heading
    g0 = 0.0
    open_ = [(w_h * heur(sx, sy), next(counter), g0, sx, sy, sh, None)]
    best_g = {key(sx, sy, sh): 0.0}
    closed = set()
    parents = {}
    expansions = 0
    while open_:
        f, _, g, x, y, h, parent = heapq.heappop(open_)
        k = key(x, y, h)
        if k in closed:
            continue
        closed.add(k)
        node = (x, y, h, parent)
        if _goal_reached(x, y, h * dtheta, goal, pos_tol, head_tol):
            return node, g, expansions
        expansions += 1
        if expansions > budget:
            return None, math.inf, expansions
        plist, pts = by_head[h]
        P = pts + (x, y)
        inside = ((P[..., 0] >= x0) & (P[..., 0] <= x1) &
                  (P[..., 1] >= y0) & (P[..., 1] <= y1)).all(axis=1)
        if w_topo:
            c = np.clip(np.floor((P[..., 0] - ox) / res + 0.5).astype(int), 0, cols - 1)
            r = np.clip(np.floor((P[..., 1] - oy) / res + 0.5).astype(int), 0, rows - 1)
            climb = np.maximum(np.diff(Z[r, c], axis=1), 0.0).sum(axis=1)
        else:
            climb = np.zeros(len(plist))
        for i, p in enumerate(plist):
            if not inside[i]:
                continue
            nx, ny, nh = x + p.dx, y + p.dy, p.end_heading
            nk = key(nx, ny, nh)
            if nk in closed:
                continue
            ng = g + p.length + w_topo * climb[i]
            if ng < best_g.get(nk, math.inf):
                best_g[nk] = ng
                heapq.heappush(open_, (ng + w_h * heur(nx, ny), next(counter), ng,
                                       nx, ny, nh, (node, p)))
    return None, math.inf, expansions


def plan_path(hmap: HeightMap, start, goal, weights=(0.0, 1.0),
              thresholds=(POS_THRESHOLD, HEADING_THRESHOLD), primitives=None,
              n_headings: int = N_HEADINGS, budget: int = EXPANSION_BUDGET,
              key_resolution: Optional[float] = None, allow_reverse: bool = True,
              schedule=ESCALATION) -> Trajectory:
    """Weighted A* from ``start`` to a goal pose ``(x, y, heading)``.

    ``weights`` is ``(w_topo, w_heuristic)``. Edge cost is the primitive
    length plus ``w_topo`` times the ascent sampled along it. When an
    attempt runs out of expansions the heuristic weight steps up through
    ``schedule``.
    """
    w_topo, w_h = float(weights[0]), float(weights[1])
    if w_h < 1:
        raise ValueError("w_heuristic must be >= 1")
    if w_topo < 0:
        raise ValueError("w_topo must be non-negative")
    pos_tol, head_tol = thresholds
    if not isinstance(start, LatticeState):
        sx, sy, sth = start[:3]
        start = LatticeState(float(sx), float(sy), heading_index(sth, n_headings))
    goal = (float(goal[0]), float(goal[1]), float(goal[2]))
    if not (hmap.in_bounds(start.x, start.y) and hmap.in_bounds(goal[0], goal[1])):
        raise ValueError("start and goal must lie inside the map")
    dtheta = 2 * math.pi / n_headings
    start_wp = TrajWaypoint(start.x, start.y, wrap_angle(start.heading * dtheta), start.direction)
    if _goal_reached(start.x, start.y, start.heading * dtheta, goal, pos_tol, head_tol):
        return Trajectory([start_wp], 0.0, 0, w_h)
    prims = primitives or generate_primitives(n_headings=n_headings)
    key_res = key_resolution or hmap.resolution

    weights_to_try = [w_h] + [w for w in schedule if w > w_h]
    total = 0
    for w in weights_to_try:
        node, cost, n = _search(hmap, start, goal, prims, n_headings, w_topo, w,
                                pos_tol, head_tol, budget, key_res, allow_reverse)
        total += n
        if node is not None:
            return Trajectory(_unwind(node, start_wp, dtheta), cost, total, w)
        log.debug("plan_path: no path with w=%.2f after %d expansions", w, n)
    raise PlanningError(f"no path to {goal} within {budget} expansions per attempt")


def _unwind(node, start_wp, dtheta):
    out = []
    while node[3] is not None:
        (x, y, h, link) = node
        parent, prim = link
        out.append(TrajWaypoint(x, y, wrap_angle(h * dtheta), prim.direction))
        node = parent
    out.append(start_wp)
    out.reverse()
    if len(out) > 1:
        out[0] = replace(out[0], direction=out[1].direction)
    return out


def annotate(traj: Trajectory, design_height: float, raised_height: float,
             v_fwd: float = V_FWD, v_rev: float = V_REV) -> Trajectory:
    """Forward waypoints cut at the design height, reverse ones carry the blade raised."""
    if not raised_height > design_height:
        raise ValueError("raised_height must exceed design_height")
    wps = [replace(w, target_velocity=v_fwd if w.direction == FORWARD else v_rev,
                   blade_height=design_height if w.direction == FORWARD else raised_height)
           for w in traj.waypoints]
    return Trajectory(wps, traj.cost, traj.expansions, traj.w_heuristic)
