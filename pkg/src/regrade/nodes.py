"""Source/sink node sets from a signed height difference."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .gridmap import HeightMap

SOURCE = "source"
SINK = "sink"


@dataclass(frozen=True)
class Node:
    px: float
    py: float
    volume: float
    kind: str
    heading: Optional[float] = None

    def __post_init__(self):
        if not self.volume > 0:
            raise ValueError(f"node volume must be positive, got {self.volume}")
        if self.kind not in (SOURCE, SINK):
            raise ValueError(f"unknown node kind {self.kind!r}")


@dataclass(frozen=True)
class NodeSet:
    sources: tuple = ()
    sinks: tuple = ()
    ignored: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "sinks", tuple(self.sinks))

    @property
    def n(self) -> int:
        return len(self.sources)

    @property
    def m(self) -> int:
        return len(self.sinks)

    def source_xy(self) -> np.ndarray:
        return np.array([(s.px, s.py) for s in self.sources], dtype=float).reshape(-1, 2)

    def sink_xy(self) -> np.ndarray:
        return np.array([(s.px, s.py) for s in self.sinks], dtype=float).reshape(-1, 2)

    def source_volumes(self) -> np.ndarray:
        return np.array([s.volume for s in self.sources], dtype=float)

    def sink_volumes(self) -> np.ndarray:
        return np.array([s.volume for s in self.sinks], dtype=float)

    @classmethod
    def from_arrays(cls, source_xy, source_v, sink_xy, sink_v) -> "NodeSet":
        src = [Node(float(x), float(y), float(v), SOURCE)
               for (x, y), v in zip(np.reshape(source_xy, (-1, 2)), source_v)]
        snk = [Node(float(x), float(y), float(v), SINK)
               for (x, y), v in zip(np.reshape(sink_xy, (-1, 2)), sink_v)]
        return cls(src, snk)

    def to_json(self) -> dict:
        def enc(node):
            d = {"x": node.px, "y": node.py, "v": node.volume}
            if node.heading is not None:
                d["heading"] = node.heading
            return d
        return {"sources": [enc(s) for s in self.sources],
                "sinks": [enc(s) for s in self.sinks]}

    @classmethod
    def from_json(cls, data) -> "NodeSet":
        if isinstance(data, str):
            data = json.loads(data)
        try:
            src = [Node(float(d["x"]), float(d["y"]), float(d["v"]), SOURCE, d.get("heading"))
                   for d in data["sources"]]
            snk = [Node(float(d["x"]), float(d["y"]), float(d["v"]), SINK, d.get("heading"))
                   for d in data["sinks"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed node set JSON: {exc}") from None
        return cls(src, snk)


def extract_nodes(diff, resolution=None, height_threshold=0.01, origin=None,
                  mask=None) -> NodeSet:
    """Threshold a signed difference field into source and sink nodes.

    ``diff`` may be a :class:`HeightMap` (geometry and observed mask are
    taken from it) or a 2D array with explicit ``resolution``.
    """
    if height_threshold < 0:
        raise ValueError("height_threshold must be non-negative")
    if isinstance(diff, HeightMap):
        resolution = diff.resolution if resolution is None else resolution
        origin = diff.origin if origin is None else origin
        mask = diff.observed if mask is None else mask
        field_ = diff.heights
    else:
        field_ = np.asarray(diff, dtype=float)
    if resolution is None or not resolution > 0:
        raise ValueError("resolution must be positive")
    if origin is None:
        origin = (resolution / 2.0, resolution / 2.0)
    if mask is None:
        mask = np.ones(field_.shape, bool)
    rows, cols = np.indices(field_.shape)
    xs = origin[0] + cols * resolution
    ys = origin[1] + rows * resolution
    area = resolution * resolution

    src_sel = mask & (field_ > height_threshold)
    snk_sel = mask & (field_ < -height_threshold)
    sources = [Node(float(x), float(y), float(d * area), SOURCE)
               for x, y, d in zip(xs[src_sel], ys[src_sel], field_[src_sel])]
    sinks = [Node(float(x), float(y), float(-d * area), SINK)
             for x, y, d in zip(xs[snk_sel], ys[snk_sel], field_[snk_sel])]
    ignored = int(mask.sum() - src_sel.sum() - snk_sel.sum())
    return NodeSet(sources, sinks, ignored)


def assign_gradient_headings(nodes: NodeSet, diff: HeightMap) -> NodeSet:
    """Give every node the downhill direction of the difference field."""
    gy, gx = np.gradient(np.where(diff.observed, diff.heights, 0.0), diff.resolution)

    def with_heading(node):
        r, c = diff.world_to_cell(node.px, node.py)
        r = int(np.clip(r, 0, diff.height_cells - 1))
        c = int(np.clip(c, 0, diff.width_cells - 1))
        dx, dy = -gx[r, c], -gy[r, c]
        heading = math.atan2(dy, dx) if (dx or dy) else None
        return replace(node, heading=heading)

    return NodeSet([with_heading(s) for s in nodes.sources],
                   [with_heading(s) for s in nodes.sinks], nodes.ignored)


def angle_diff(a: float, b: float) -> float:
    d = (a - b + math.pi) % (2 * math.pi) - math.pi
    return abs(d)


def decimate_sources(nodes: NodeSet, min_distance: float = 0.25,
                     heading_threshold: float = math.radians(15.0)) -> NodeSet:
    """Greedy thinning of source nodes, largest volume first.

    A source is dropped when an already kept source lies closer than
    ``min_distance`` with a heading within ``heading_threshold`` (a missing
    heading matches anything). Dropped volume goes to the nearest such
    blocking source, so total source volume is preserved.
    """
    if min_distance < 0:
        raise ValueError("min_distance must be non-negative")
    if min_distance == 0 or nodes.n < 2:
        return nodes
    src = nodes.sources
    xy = nodes.source_xy()
    order = sorted(range(len(src)), key=lambda i: (-src[i].volume, i))
    kept: list[int] = []
    extra = {}
    for i in order:
        blockers = []
        if kept:
            k = np.array(kept)
            d = np.hypot(*(xy[k] - xy[i]).T)
            for kk, dd in zip(kept, d):
                if dd < min_distance:
                    hi, hk = src[i].heading, src[kk].heading
                    if hi is None or hk is None or angle_diff(hi, hk) <= heading_threshold:
                        blockers.append((dd, kk))
        if blockers:
            _, target = min(blockers)
            extra[target] = extra.get(target, 0.0) + src[i].volume
        else:
            kept.append(i)
    kept.sort()
    new_src = [replace(src[i], volume=src[i].volume + extra.get(i, 0.0)) for i in kept]
    return NodeSet(new_src, nodes.sinks, nodes.ignored)
