"""Transport triplets: (rear offset, source, sink) waypoints for one push."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_OFFSET = 0.6


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class TransportTriplet:
    offset_wp: Waypoint
    source_wp: Waypoint
    sink_wp: Waypoint
    volume: float

    @property
    def heading(self) -> float:
        return self.source_wp.heading

    def to_json(self) -> dict:
        return {
            "src": [self.source_wp.x, self.source_wp.y],
            "dst": [self.sink_wp.x, self.sink_wp.y],
            "offset": [self.offset_wp.x, self.offset_wp.y],
            "heading": self.heading,
            "volume": self.volume,
        }


def make_triplet(src_xy, dst_xy, volume, offset_distance=DEFAULT_OFFSET) -> Optional[TransportTriplet]:
    dx = dst_xy[0] - src_xy[0]
    dy = dst_xy[1] - src_xy[1]
    if dx == 0 and dy == 0:
        return None
    th = math.atan2(dy, dx)
    ox = src_xy[0] - offset_distance * math.cos(th)
    oy = src_xy[1] - offset_distance * math.sin(th)
    return TransportTriplet(Waypoint(ox, oy, th), Waypoint(float(src_xy[0]), float(src_xy[1]), th),
                            Waypoint(float(dst_xy[0]), float(dst_xy[1]), th), float(volume))


def build_triplets(plan, offset_distance: float = DEFAULT_OFFSET) -> list[TransportTriplet]:
    """One triplet per plan move, heading along source -> sink.

    ``plan`` is a TransportPlan or a list of ``{"src", "dst", "volume"}``
    records as found in plan JSON.
    """
    if not offset_distance > 0:
        raise ValueError("offset_distance must be positive")
    if hasattr(plan, "to_json"):
        records = plan.to_json()["moves"]
    else:
        records = plan
    out = []
    for rec in records:
        t = make_triplet(rec["src"], rec["dst"], rec["volume"], offset_distance)
        if t is None:
            log.warning("skipping zero-length move at %s", rec["src"])
            continue
        out.append(t)
    return out


def sink_centroid(plan) -> tuple[float, float]:
    """Volume-weighted centroid of the plan's sink nodes."""
    nodes = plan.nodes
    v = nodes.sink_volumes()
    if v.size == 0:
        return (0.0, 0.0)
    xy = nodes.sink_xy()
    c = (xy * v[:, None]).sum(axis=0) / v.sum()
    return float(c[0]), float(c[1])


def order_radially(triplets: Sequence[TransportTriplet], center=(0.0, 0.0)) -> list[TransportTriplet]:
    """Sort by polar angle of the source about ``center``, then by radius.

    Angles run counterclockwise from the +x axis over [0, 2*pi).
    """
    cx, cy = center

    def key(t):
        dx, dy = t.source_wp.x - cx, t.source_wp.y - cy
        return (math.atan2(dy, dx) % (2 * math.pi), math.hypot(dx, dy))

    return sorted(triplets, key=key)


def group_by_center(triplets: Iterable[TransportTriplet], centers) -> list[TransportTriplet]:
    """Assign each triplet to its nearest center, order each group radially.

    Groups are emitted in the order ``centers`` are given.
    """
    centers = [tuple(c) for c in centers]
    if not centers:
        return list(triplets)
    groups = [[] for _ in centers]
    C = np.asarray(centers, dtype=float)
    for t in triplets:
        d = np.hypot(C[:, 0] - t.sink_wp.x, C[:, 1] - t.sink_wp.y)
        groups[int(np.argmin(d))].append(t)
    out = []
    for c, g in zip(centers, groups):
        out.extend(order_radially(g, c))
    return out


def triplets_json(triplets: Sequence[TransportTriplet]) -> str:
    return json.dumps([t.to_json() for t in triplets], indent=2, sort_keys=True)
