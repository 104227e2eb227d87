"""Desk-scale grading simulator and behavior executive.

The terrain model is deliberately simple: a blade that cuts to a commanded
height with finite capacity and drops its load into low cells, slope
limiting at the angle of repose, and a towed mat that averages heights
behind the robot. Every terrain operation moves material between cells or
the blade; none creates or destroys it.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import kinem
from .gridmap import (HeightMap, SiteMetrics, compute_metrics, diff_to_design,
                      inject_disturbance_noise, kalman_update, measurement_variance,
                      save_heightmap)
from .nodes import assign_gradient_headings, decimate_sources, extract_nodes
from .transport import solve_transport
from .triplets import build_triplets, order_radially, sink_centroid

log = logging.getLogger(__name__)

REPOSE_DEG = 31.0
DEPTH_RATIO = 0.2
BLADE_WIDTH = 0.25
BLADE_HEIGHT = 0.05
FILL_FACTOR = 0.8
BLADE_CAPACITY = BLADE_WIDTH * BLADE_HEIGHT * FILL_FACTOR
MAT_OFFSET = 0.6      # blade to mat leading edge
MAT_LENGTH = 0.1
MAT_WIDTH = 0.5
FOOTPRINT_NEAR = 0.3
FOOTPRINT_FAR = 1.5
FOOTPRINT_NEAR_WIDTH = 0.6
FOOTPRINT_FAR_WIDTH = 1.0
DISTURBANCE_VARIANCE = 2.5e-3
RELAX_ITERATIONS = 50

EXPLORE = "Explore"
PLAN = "PlanTransport"
TRANSPORT = "Transport"
DONE = "Done"
TRANSITIONS = {EXPLORE: {PLAN}, PLAN: {TRANSPORT}, TRANSPORT: {PLAN, DONE}, DONE: set()}


@dataclass(frozen=True)
class Robot:
    """Pose of the blade center plus blade state."""
    x: float
    y: float
    heading: float
    blade_height: float = 0.0
    carried_volume: float = 0.0


@dataclass(frozen=True, eq=False)
class Worksite:
    truth: HeightMap
    belief: HeightMap
    design: HeightMap
    robot: Robot
    rng_seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (self.truth.same_geometry(self.belief) and self.truth.same_geometry(self.design)):
            raise ValueError("truth, belief and design must share geometry")
        if self.robot.carried_volume < 0:
            raise ValueError("carried volume must be non-negative")
        if self.rng is None:
            object.__setattr__(self, "rng", np.random.default_rng(self.rng_seed))

    def replace(self, **changes) -> "Worksite":
        return replace(self, **changes)

    def material(self) -> float:
        """Truth volume plus whatever the blade carries."""
        return float(self.truth.heights.sum() * self.truth.cell_area + self.robot.carried_volume)


class ExecState:
    """Behavior executive mode with the legal transition table enforced."""

    def __init__(self):
        self.mode = EXPLORE
        self.pending = []
        self.trajectory = None
        self.history = [EXPLORE]

    def transition(self, mode: str):
        if mode not in TRANSITIONS[self.mode]:
            raise RuntimeError(f"illegal transition {self.mode} -> {mode}")
        self.mode = mode
        self.history.append(mode)


# --- site construction ------------------------------------------------------

def _cap_depth(r, a, d):
    Rs = (a * a + d * d) / (2 * d)
    depth = d - (Rs - np.sqrt(np.maximum(Rs * Rs - r * r, 0.0)))
    return np.where(r < a, np.maximum(depth, 0.0), 0.0)


def _rim_unit(r, a, w):
    s = (r - a) / w
    return np.where((s > 0) & (s < 1), np.sin(np.pi * np.clip(s, 0, 1)), 0.0)


def _max_slope(z, mask, res):
    sx = np.abs(np.diff(z, axis=1)) / res
    sy = np.abs(np.diff(z, axis=0)) / res
    mx = mask[:, 1:] & mask[:, :-1]
    my = mask[1:, :] & mask[:-1, :]
    return max(sx[mx].max(initial=0.0), sy[my].max(initial=0.0))


def crater_field(X, Y, cx, cy, diameter, res, depth_ratio=DEPTH_RATIO, repose_deg=REPOSE_DEG):
    """Height field of one crater and its outer rim radius.

    The bowl is a spherical cap; the rim is a half-sine annulus scaled so
    the discrete rim volume equals the discrete bowl volume exactly.
    """
    a = diameter / 2.0
    d = depth_ratio * diameter
    r = np.hypot(X - cx, Y - cy)
    depth = _cap_depth(r, a, d)
    V = depth.sum()
    if V == 0:
        raise ValueError(f"crater at ({cx}, {cy}) is smaller than one cell")
    slope = math.tan(math.radians(repose_deg))
    # continuous rim volume 2 H w (2a + w) with peak slope H pi / w = 0.8 tan(repose)
    s = 0.8 * slope
    Vc = V * res * res
    w = float(max(np.roots([1.0, 2 * a, 0.0, -Vc * math.pi / (2 * s)]).real))
    for _ in range(50):
        unit = _rim_unit(r, a, w)
        H = V / unit.sum()
        z = H * unit - depth
        outside = r >= a
        if _max_slope(z, outside, res) <= slope:
            return z, a + w
        w *= 1.1
    raise ValueError("could not build a rim within the angle of repose")


def make_crater_site(width=5.0, height=5.0, resolution=0.05, craters=(), seed=0,
                     depth_ratio=DEPTH_RATIO, repose_deg=REPOSE_DEG) -> Worksite:
    """Flat site with bowl-and-rim craters ``(cx, cy, diameter)``."""
    cols = int(round(width / resolution))
    rows = int(round(height / resolution))
    if cols < 1 or rows < 1:
        raise ValueError("site must span at least one cell")
    base = HeightMap.flat(cols, rows, resolution)
    X, Y = base.centers()
    x0, x1, y0, y1 = base.extent
    z = np.zeros(base.shape)
    placed = []
    for cx, cy, D in craters:
        if not D > 0:
            raise ValueError("crater diameter must be positive")
        field_, R = crater_field(X, Y, cx, cy, D, resolution, depth_ratio, repose_deg)
        if cx - R < x0 or cx + R > x1 or cy - R < y0 or cy + R > y1:
            raise ValueError(f"crater at ({cx}, {cy}) with rim radius {R:.3f} leaves the site")
        for (px, py, pR) in placed:
            if math.hypot(cx - px, cy - py) < R + pR:
                raise ValueError(f"craters at ({px}, {py}) and ({cx}, {cy}) overlap")
        placed.append((cx, cy, R))
        z += field_
    truth = HeightMap.from_array(z, resolution)
    belief = HeightMap.unobserved(cols, rows, resolution)
    design = HeightMap.flat(cols, rows, resolution)
    inset = min(0.5, width / 4, height / 4)
    robot = Robot(x0 + inset, y0 + inset, 0.0)
    return Worksite(truth, belief, design, robot, seed)


# --- geometry helpers -------------------------------------------------------

def _window(hmap, x, y, radius):
    r, c = hmap.world_to_cell(x, y)
    k = int(math.ceil(radius / hmap.resolution)) + 1
    r0, r1 = max(0, int(r) - k), min(hmap.height_cells, int(r) + k + 1)
    c0, c1 = max(0, int(c) - k), min(hmap.width_cells, int(c) + k + 1)
    return r0, r1, c0, c1


def _frame_cells(hmap, x, y, heading, t_min, t_max, half_width):
    """Flat indices of cells whose centers satisfy t_min <= t <= t_max and
    |lateral| <= half_width(t) in the frame at (x, y, heading).

    ``half_width`` is a number or a callable of the along-track distance.
    """
    hw_max = half_width if not callable(half_width) else max(half_width(t_min), half_width(t_max))
    radius = math.hypot(max(abs(t_min), abs(t_max)), hw_max) + hmap.resolution
    r0, r1, c0, c1 = _window(hmap, x, y, radius)
    if r0 >= r1 or c0 >= c1:
        return np.zeros(0, np.intp), np.zeros(0)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    px = hmap.origin[0] + cc * hmap.resolution - x
    py = hmap.origin[1] + rr * hmap.resolution - y
    ch, sh = math.cos(heading), math.sin(heading)
    t = px * ch + py * sh
    lat = -px * sh + py * ch
    hw = half_width(t) if callable(half_width) else half_width
    eps = 1e-9
    sel = (t >= t_min - eps) & (t <= t_max + eps) & (np.abs(lat) <= hw + eps)
    return (rr[sel] * hmap.width_cells + cc[sel]).astype(np.intp), np.hypot(px[sel], py[sel])


def footprint_cells(hmap: HeightMap, x, y, heading):
    """Cells in the forward sensor trapezoid and their range from the sensor."""
    def hw(t):
        f = (np.clip(t, FOOTPRINT_NEAR, FOOTPRINT_FAR) - FOOTPRINT_NEAR) / (FOOTPRINT_FAR - FOOTPRINT_NEAR)
        return 0.5 * (FOOTPRINT_NEAR_WIDTH + f * (FOOTPRINT_FAR_WIDTH - FOOTPRINT_NEAR_WIDTH))
    return _frame_cells(hmap, x, y, heading, FOOTPRINT_NEAR, FOOTPRINT_FAR, hw)


# --- exploration ------------------------------------------------------------

def _densify(corners, step):
    out = []
    for (ax, ay), (bx, by) in zip(corners, corners[1:]):
        L = math.hypot(bx - ax, by - ay)
        if L == 0:
            continue
        th = math.atan2(by - ay, bx - ax)
        n = max(1, int(math.ceil(L / step)))
        for k in range(n + 1):
            if k == 0 and out and math.hypot(out[-1][0] - ax, out[-1][1] - ay) < 1e-12:
                out[-1] = (ax, ay, th)
                continue
            f = k / n
            out.append((ax + f * (bx - ax), ay + f * (by - ay), th))
    return out


def coverage_mask(site: Worksite, waypoints) -> np.ndarray:
    seen = np.zeros(site.truth.heights.size, bool)
    for x, y, th in waypoints:
        idx, _ = footprint_cells(site.truth, x, y, th)
        seen[idx] = True
    return seen.reshape(site.truth.shape)


def _exploration_route(site, spacing, inset, step):
    x0, x1, y0, y1 = site.truth.extent
    xa, xb, ya, yb = x0 + inset, x1 - inset, y0 + inset, y1 - inset
    loop = [(xa, ya), (xb, ya), (xb, yb), (xa, yb), (xa, ya)]
    span = yb - ya
    n_rows = max(1, int(round(span / spacing)))
    pitch = span / n_rows
    rows = []
    for k in range(n_rows):
        y = ya + (k + 0.5) * pitch
        rows += [(xa, y), (xb, y)] if k % 2 == 0 else [(xb, y), (xa, y)]
    return _densify(loop + rows, step), n_rows


def _viewpoint(site, cell, inset):
    """Pose inside the inset rectangle that looks straight at ``cell``."""
    x0, x1, y0, y1 = site.truth.extent
    W = site.truth.width_cells
    r, c = divmod(int(cell), W)
    px = site.truth.origin[0] + c * site.truth.resolution
    py = site.truth.origin[1] + r * site.truth.resolution
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    th = math.atan2(py - cy, px - cx)
    reach = 0.5 * (FOOTPRINT_NEAR + FOOTPRINT_FAR)
    vx = float(np.clip(px - reach * math.cos(th), x0 + inset, x1 - inset))
    vy = float(np.clip(py - reach * math.sin(th), y0 + inset, y1 - inset))
    return vx, vy, math.atan2(py - vy, px - vx)


def plan_exploration(site: Worksite, spacing: float = 1.0, inset: float = 0.5,
                     step: float = 0.1):
    """Perimeter loop then serpentine rows, as (x, y, heading) waypoints.

    The route is audited against the sensor footprint. Rows are added while
    gaps remain between them; cells still unseen after that (corners the
    narrow near edge of the footprint misses) get a dedicated viewpoint.
    """
    x0, x1, y0, y1 = site.truth.extent
    if not 0 < spacing < min(x1 - x0, y1 - y0):
        raise ValueError("spacing must be positive and smaller than the site")
    inset = min(inset, (x1 - x0) / 4, (y1 - y0) / 4)
    route, n_rows = _exploration_route(site, spacing, inset, step)
    _, ycells = site.truth.centers()
    interior = (ycells > y0 + inset) & (ycells < y1 - inset)
    for _ in range(20):
        seen = coverage_mask(site, route)
        if seen[interior].all():
            break
        log.info("exploration rows at %.3f m leave gaps; adding a row", spacing)
        spacing = (y1 - y0 - 2 * inset) / (n_rows + 1)
        route, n_rows = _exploration_route(site, spacing, inset, step)
    seen = coverage_mask(site, route).ravel()
    for cell in np.flatnonzero(~seen):
        if seen[cell]:
            continue
        vx, vy, th = _viewpoint(site, cell, inset)
        lx, ly, _ = route[-1]
        leg = _densify([(lx, ly), (vx, vy)], step)[1:] if math.hypot(vx - lx, vy - ly) > 0 else []
        leg.append((vx, vy, th))
        for x, y, h in leg:
            idx, _ = footprint_cells(site.truth, x, y, h)
            seen[idx] = True
        route.extend(leg)
    if not seen.all():
        log.warning("exploration route leaves %d cells unobserved", int((~seen).sum()))
    return route


# --- sensing ----------------------------------------------------------------

def observe(site: Worksite, footprint=None, noise: bool = True) -> Worksite:
    """Measure the truth over ``footprint`` (cells, ranges) and fuse into the belief.

    Without a footprint the forward trapezoid at the robot pose is used.
    """
    if footprint is None:
        rb = site.robot
        footprint = footprint_cells(site.truth, rb.x, rb.y, rb.heading)
    idx, rng_ = footprint
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size == 0:
        return site
    var = measurement_variance(np.asarray(rng_, dtype=float))
    z = site.truth.heights.ravel()[idx]
    if noise:
        z = z + site.rng.normal(0.0, np.sqrt(var))
    return site.replace(belief=kalman_update(site.belief, idx, z, var))


# --- terrain model ----------------------------------------------------------

def relax_repose(z: np.ndarray, res: float, repose_deg: float = REPOSE_DEG,
                 max_iter: int = RELAX_ITERATIONS) -> np.ndarray:
    """Pairwise slope limiting between 4-neighbors; conserves the sum exactly."""
    z = np.array(z, dtype=float, copy=True)
    lim = res * math.tan(math.radians(repose_deg))
    for _ in range(max_iter):
        dx = np.diff(z, axis=1)
        dy = np.diff(z, axis=0)
        ex = np.maximum(np.abs(dx) - lim, 0.0)
        ey = np.maximum(np.abs(dy) - lim, 0.0)
        if ex.max(initial=0.0) <= 1e-12 and ey.max(initial=0.0) <= 1e-12:
            break
        qx = 0.25 * np.sign(dx) * ex
        qy = 0.25 * np.sign(dy) * ey
        z[:, 1:] -= qx
        z[:, :-1] += qx
        z[1:, :] -= qy
        z[:-1, :] += qy
    return z


def drag_mat_smooth(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """One conservative 3x3 averaging pass over the masked patch.

    Each pair of 8-neighbors inside the patch exchanges a ninth of their
    height difference, which is the uniform 3x3 mean on interior cells.
    """
    z = np.array(z, dtype=float, copy=True)
    out = z.copy()
    m = np.asarray(mask, bool)
    R, C = z.shape
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ca, cb = (slice(0, C - dc), slice(dc, C)) if dc >= 0 else (slice(-dc, C), slice(0, C + dc))
        a = (slice(0, R - dr), ca)
        b = (slice(dr, R), cb)
        q = np.where(m[a] & m[b], (z[b] - z[a]) / 9.0, 0.0)
        out[a] += q
        out[b] -= q
    return out


def _relax_around(truth: HeightMap, idx, margin_cells=3, repose_deg=REPOSE_DEG):
    if idx.size == 0:
        return truth
    W = truth.width_cells
    r, c = idx // W, idx % W
    r0, r1 = max(0, r.min() - margin_cells), min(truth.height_cells, r.max() + margin_cells + 1)
    c0, c1 = max(0, c.min() - margin_cells), min(W, c.max() + margin_cells + 1)
    z = truth.heights.copy()
    z[r0:r1, c0:c1] = relax_repose(z[r0:r1, c0:c1], truth.resolution, repose_deg)
    return truth.replace(heights=z)


def blade_cut(site: Worksite, swath, blade_height: float,
              capacity: float = BLADE_CAPACITY, relax: bool = True) -> Worksite:
    """Cut cells above the blade into the load, then fill cells below it.

    When the swath holds more excess than the blade has room for, every cell
    gives up the same fraction of its excess and the rest flows over the
    blade. Deposits are shared in proportion to each cell's deficit.
    """
    idx = np.unique(site.truth._flat_indices(swath))
    if idx.size == 0:
        return site
    area = site.truth.cell_area
    z = site.truth.heights.ravel().copy()
    carried = site.robot.carried_volume
    zs = z[idx]

    excess = np.maximum(zs - blade_height, 0.0)
    total = excess.sum() * area
    room = max(capacity - carried, 0.0)
    if total > 0 and room > 0:
        frac = min(1.0, room / total)
        new = np.where(excess > 0, zs - frac * excess, zs)
        if frac == 1.0:
            new = np.where(excess > 0, blade_height, zs)
        carried += float((zs - new).sum() * area)
        zs = new

    deficit = np.maximum(blade_height - zs, 0.0)
    need = deficit.sum() * area
    if need > 0 and carried > 0:
        frac = min(1.0, carried / need)
        new = zs + frac * deficit
        if frac == 1.0:
            new = np.where(deficit > 0, blade_height, zs)
        given = float((new - zs).sum() * area)
        carried = max(carried - given, 0.0)
        zs = new

    changed = zs != z[idx]
    if not changed.any():
        return site
    z[idx] = zs
    truth = site.truth.replace(heights=z.reshape(site.truth.shape))
    if relax:
        truth = _relax_around(truth, idx)
    robot = replace(site.robot, blade_height=blade_height, carried_volume=carried)
    return site.replace(truth=truth, robot=robot)


def drop_load(site: Worksite) -> Worksite:
    """Spread whatever the blade carries evenly over its current footprint."""
    rb = site.robot
    if rb.carried_volume <= 0:
        return site
    idx, _ = _frame_cells(site.truth, rb.x, rb.y, rb.heading, -site.truth.resolution / 2,
                          site.truth.resolution / 2, BLADE_WIDTH / 2)
    if idx.size == 0:
        r, c = site.truth.world_to_cell(rb.x, rb.y)
        r = int(np.clip(r, 0, site.truth.height_cells - 1))
        c = int(np.clip(c, 0, site.truth.width_cells - 1))
        idx = np.array([r * site.truth.width_cells + c])
    z = site.truth.heights.ravel().copy()
    np.add.at(z, idx, rb.carried_volume / (idx.size * site.truth.cell_area))
    truth = _relax_around(site.truth.replace(heights=z.reshape(site.truth.shape)), idx)
    return site.replace(truth=truth, robot=replace(rb, carried_volume=0.0))


def _mat_patch(site, x, y, heading):
    idx, _ = _frame_cells(site.truth, x, y, heading, -(MAT_OFFSET + MAT_LENGTH),
                          -MAT_OFFSET, MAT_WIDTH / 2)
    return idx


def apply_drag_mat(site: Worksite, idx) -> Worksite:
    if idx.size == 0:
        return site
    W = site.truth.width_cells
    r, c = idx // W, idx % W
    r0, r1, c0, c1 = max(0, r.min() - 1), r.max() + 2, max(0, c.min() - 1), c.max() + 2
    z = site.truth.heights.copy()
    mask = np.zeros(z.shape, bool)
    mask.flat[idx] = True
    z[r0:r1, c0:c1] = drag_mat_smooth(z[r0:r1, c0:c1], mask[r0:r1, c0:c1])
    return site.replace(truth=site.truth.replace(heights=z))


def step_motion(site: Worksite, traj: kinem.Trajectory, dt: float = 0.2,
                sense: bool = True, disturbance_variance: float = DISTURBANCE_VARIANCE,
                snapshot=None) -> Worksite:
    """Drive the trajectory in steps of ``velocity * dt``.

    Each step sweeps the blade from the previous to the new pose, tows the
    mat when moving forward, inflates belief variance on touched cells and
    takes one sensor reading.
    """
    if dt == 0 or len(traj.waypoints) < 2:
        return site
    if dt < 0:
        raise ValueError("dt must be non-negative")
    rb = site.robot
    px, py = rb.x, rb.y
    for x, y, th, direction, _v, blade in traj.sample(dt=dt):
        L = math.hypot(x - px, y - py)
        move_th = math.atan2(y - py, x - px) if L > 0 else th
        swath, _ = _frame_cells(site.truth, px, py, move_th, -site.truth.resolution / 2,
                                L + site.truth.resolution / 2, BLADE_WIDTH / 2)
        site = site.replace(robot=replace(site.robot, x=x, y=y, heading=th, blade_height=blade))
        site = blade_cut(site, swath, blade)
        touched = swath
        if direction == kinem.FORWARD:
            mat = _mat_patch(site, x, y, th)
            site = apply_drag_mat(site, mat)
            touched = np.union1d(swath, mat)
        if disturbance_variance > 0 and touched.size:
            site = site.replace(belief=inject_disturbance_noise(site.belief, touched,
                                                                 disturbance_variance))
        if sense:
            site = observe(site)
        if snapshot is not None:
            snapshot(site)
        px, py = x, y
    return site


# --- executive --------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    budget: int = 40
    dt: float = 0.2
    explore_spacing: float = 1.0
    explore_inset: float = 0.5
    height_threshold: float = 0.01
    significance: float = 3.0
    decimate: float = 0.25
    decimate_heading_deg: float = 180.0
    offset_distance: float = 0.6
    min_triplet_volume: float = 2e-4
    w_topo: float = 10.0
    key_resolution: float = 0.1
    expansion_budget: int = 20000
    grade_spec: float = 1.0
    smooth_spec: float = 0.01
    window: int = 5
    backoff: float = 0.3
    max_sweeps: int = 10
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("explore_spacing", "offset_distance", "key_resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("height_threshold", "significance", "decimate", "min_triplet_volume", "w_topo", "backoff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpisodeReport:
    seed: int
    config: dict
    before: SiteMetrics
    after: SiteMetrics
    history: list
    transitions: list
    triplets_executed: int
    triplets_skipped: int
    material_before: float
    material_after: float
    abs_volume: float

    @property
    def oos_reduction(self) -> float:
        if self.before.area_oos == 0:
            return 0.0
        return 1.0 - self.after.area_oos / self.before.area_oos

    @property
    def mass_error(self) -> float:
        """Material change relative to the total absolute volume of the site."""
        scale = max(self.abs_volume, 1e-300)
        return abs(self.material_after - self.material_before) / scale

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "before": self.before.as_dict(),
            "after": self.after.as_dict(),
            "area_oos_reduction": self.oos_reduction,
            "plan_history": self.history,
            "transitions": self.transitions,
            "triplets_executed": self.triplets_executed,
            "triplets_skipped": self.triplets_skipped,
            "material": {"before": self.material_before, "after": self.material_after,
                         "relative_change": self.mass_error},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _merge_by_source(plan):
    """One record per source: summed volume, volume-weighted sink position."""
    recs = {}
    src, snk = plan.nodes.sources, plan.nodes.sinks
    for mv in plan.moves:
        r = recs.setdefault(mv.source, [0.0, 0.0, 0.0])
        r[0] += mv.volume
        r[1] += mv.volume * snk[mv.sink].px
        r[2] += mv.volume * snk[mv.sink].py
    return [{"src": [src[i].px, src[i].py], "dst": [sx / v, sy / v], "volume": v}
            for i, (v, sx, sy) in sorted(recs.items())]


def plan_transport(site: Worksite, cfg: SimConfig):
    """Nodes from belief minus design, transport plan, ordered triplets."""
    diff = diff_to_design(site.belief, site.design)
    # cells whose deviation is within the belief's own noise are not trusted
    sig = np.abs(diff.heights) > cfg.significance * np.sqrt(diff.variances)
    nodes = extract_nodes(diff, height_threshold=cfg.height_threshold, mask=diff.observed & sig)
    if cfg.decimate > 0 and nodes.n > 1:
        nodes = assign_gradient_headings(nodes, diff)
        nodes = decimate_sources(nodes, cfg.decimate, math.radians(cfg.decimate_heading_deg))
    plan = solve_transport(nodes)
    triplets = build_triplets(_merge_by_source(plan), cfg.offset_distance) if plan.moves else []
    triplets = [t for t in triplets if t.volume >= cfg.min_triplet_volume]
    if triplets:
        triplets = order_radially(triplets, sink_centroid(plan))
    return plan, triplets


def _straight(points, heading, direction, v, blade):
    wps = [kinem.TrajWaypoint(x, y, heading, direction, v, blade) for x, y in points]
    return kinem.Trajectory(wps)


def execute_triplet(site: Worksite, triplet, cfg: SimConfig, primitives=None,
                    snapshot=None) -> Worksite:
    """Drive to the offset waypoint, push through source to sink, back off."""
    rb = site.robot
    off, src, dst = triplet.offset_wp, triplet.source_wp, triplet.sink_wp
    design_h = float(site.design.heights[tuple(
        np.clip(site.design.world_to_cell(src.x, src.y),
                0, np.array(site.design.shape) - 1))])
    obs = site.belief.observed
    top = float(site.belief.heights[obs].max()) if obs.any() else design_h
    raised = max(top, design_h) + kinem.RAISED_OFFSET
    traj = kinem.plan_path(site.belief, (rb.x, rb.y, rb.heading), (off.x, off.y, off.heading),
                           weights=(cfg.w_topo, 1.0), primitives=primitives,
                           budget=cfg.expansion_budget, key_resolution=cfg.key_resolution)
    traj = kinem.annotate(traj, design_h, raised)
    site = step_motion(site, traj, cfg.dt, snapshot=snapshot)
    # the lattice leaves the robot within the goal thresholds; line up on the push axis
    site = site.replace(robot=replace(site.robot, x=off.x, y=off.y, heading=off.heading))
    push = _straight([(off.x, off.y), (src.x, src.y), (dst.x, dst.y)], off.heading,
                     kinem.FORWARD, kinem.V_FWD, design_h)
    site = step_motion(site, push, cfg.dt, snapshot=snapshot)
    site = drop_load(site)
    if cfg.backoff > 0:
        bx = dst.x - cfg.backoff * math.cos(off.heading)
        by = dst.y - cfg.backoff * math.sin(off.heading)
        if site.truth.in_bounds(bx, by):
            back = _straight([(dst.x, dst.y), (bx, by)], off.heading, kinem.REVERSE,
                             kinem.V_REV, raised)
            site = step_motion(site, back, cfg.dt, snapshot=snapshot)
    return site


def _metrics(hmap, cfg):
    return compute_metrics(hmap, cfg.grade_spec, cfg.smooth_spec, cfg.window)


def explore(site: Worksite, cfg: SimConfig, snapshot=None) -> Worksite:
    for x, y, th in plan_exploration(site, cfg.explore_spacing, cfg.explore_inset):
        site = site.replace(robot=replace(site.robot, x=x, y=y, heading=th))
        site = observe(site)
        if snapshot is not None:
            snapshot(site)
    return site


def run_episode(site: Worksite, config: SimConfig | None = None,
                snapshot_dir: Optional[str] = None, snapshot_every: int = 50) -> EpisodeReport:
    """Explore, then alternate transport planning and execution until done."""
    cfg = config or SimConfig(seed=site.rng_seed)
    site = site.replace(rng=np.random.default_rng(cfg.seed), rng_seed=cfg.seed)
    area = site.truth.cell_area
    material0 = site.material()
    abs_vol = float(np.abs(site.truth.heights).sum() * area)
    before = _metrics(site.truth, cfg)
    prims = kinem.generate_primitives()

    snap = None
    if snapshot_dir:
        os.makedirs(snapshot_dir, exist_ok=True)
        counter = {"step": 0, "n": 0}

        def snap(s):
            if counter["step"] % snapshot_every == 0:
                save_heightmap(s.truth, os.path.join(snapshot_dir, f"truth_{counter['n']:05d}.csv"))
                counter["n"] += 1
            counter["step"] += 1

    ex = ExecState()
    site = explore(site, cfg, snap)
    history = []
    executed = skipped = stalls = 0
    for sweep in range(cfg.max_sweeps):
        ex.transition(PLAN)
        plan, triplets = plan_transport(site, cfg)
        triplets = triplets[:max(cfg.budget - executed, 0)]
        belief_before = _metrics(site.belief, cfg).area_oos
        history.append({
            "sweep": sweep,
            "case": plan.case.case if plan.case else None,
            "objective": plan.objective,
            "n_sources": plan.nodes.n,
            "n_sinks": plan.nodes.m,
            "n_moves": len(plan.moves),
            "n_triplets": len(triplets),
            "belief_area_oos": belief_before,
        })
        log.debug("sweep %d: %d triplets, transport solved in %.3fs",
                  sweep, len(triplets), plan.solve_time)
        ex.transition(TRANSPORT)
        ex.pending = list(triplets)
        while ex.pending:
            t = ex.pending.pop(0)
            try:
                site = execute_triplet(site, t, cfg, prims, snap)
                executed += 1
            except (kinem.PlanningError, ValueError) as exc:
                log.warning("skipping triplet at (%.2f, %.2f): %s",
                            t.source_wp.x, t.source_wp.y, exc)
                skipped += 1
        belief_after = _metrics(site.belief, cfg).area_oos
        history[-1]["belief_area_oos_after"] = belief_after
        history[-1]["truth_area_oos_after"] = _metrics(site.truth, cfg).area_oos
        stalls = stalls + 1 if belief_after >= belief_before else 0
        if not triplets or executed >= cfg.budget or stalls >= cfg.patience:
            break
    ex.transition(DONE)
    site = drop_load(site)
    after = _metrics(site.truth, cfg)
    return EpisodeReport(cfg.seed, asdict(cfg), before, after, history, ex.history,
                         executed, skipped, material0, site.material(), abs_vol)
