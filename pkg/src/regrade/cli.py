"""Command-line front end: plan, simulate, metrics, render.

Every tunable can come from a JSON config file (``--config`` or the
``REGRADE_CONFIG`` environment variable); explicit flags win over the
config, which wins over the built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .gridmap import (GeometryMismatchError, HeightMapParseError, compute_metrics,
                      diff_to_design, flat_like, load_heightmap)
from .nodes import NodeSet, assign_gradient_headings, decimate_sources, extract_nodes
from .render import render_ppm, render_svg
from .sim import SimConfig, make_crater_site, run_episode
from .transport import load_plan_json, solve_transport
from .triplets import build_triplets, group_by_center, order_radially, sink_centroid

log = logging.getLogger("regrade")

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_GEOMETRY = 2

_SIM = SimConfig()
DEFAULTS = {
    "plan": {"threshold": 0.01, "decimate": 0.25, "decimate_heading": 15.0, "offset": 0.6,
             "solver": "auto", "scale": 1.0, "resolution": None},
    "simulate": {"seed": 0, "episodes": 1, "budget": _SIM.budget, "dt": _SIM.dt,
                 "explore_spacing": _SIM.explore_spacing, "explore_inset": _SIM.explore_inset,
                 "threshold": _SIM.height_threshold, "decimate": _SIM.decimate,
                 "decimate_heading": _SIM.decimate_heading_deg, "offset": _SIM.offset_distance,
                 "min_triplet_volume": _SIM.min_triplet_volume, "w_topo": _SIM.w_topo,
                 "key_resolution": _SIM.key_resolution, "expansion_budget": _SIM.expansion_budget,
                 "grade_spec": _SIM.grade_spec, "smooth_spec": _SIM.smooth_spec,
                 "window": _SIM.window, "backoff": _SIM.backoff, "max_sweeps": _SIM.max_sweeps,
                 "patience": _SIM.patience, "snapshot_every": 50},
    "metrics": {"grade_spec": 1.0, "smooth_spec": 0.01, "window": 5, "scale": 1.0,
                "resolution": None},
    "render": {"pixel_scale": 4, "scale": 1.0, "resolution": None},
}
KNOWN_KEYS = set().union(*DEFAULTS.values())

SITE_PRESETS = {
    "flat": {"width": 5.0, "height": 5.0, "resolution": 0.05, "craters": []},
    "crater": {"width": 5.0, "height": 5.0, "resolution": 0.05, "craters": [[2.5, 2.5, 1.0]]},
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return data


def resolve(args, command: str, config: dict) -> dict:
    """Flag > config > default for every key the command uses."""
    out = {}
    for key, default in DEFAULTS[command].items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else config.get(key, default)
    return out


# --- plan -------------------------------------------------------------------

def _design_for(live, spec, scale, resolution):
    if spec.startswith("flat:"):
        try:
            h = float(spec[5:])
        except ValueError:
            raise ConfigError(f"bad flat design height {spec[5:]!r}") from None
        return flat_like(live, h)
    return load_heightmap(spec, scale=scale, resolution=resolution or live.resolution)


def _parse_centers(text):
    try:
        return [tuple(float(v) for v in c.split(",")) for c in text.split(";") if c.strip()]
    except ValueError:
        raise ConfigError(f"bad --centers {text!r}; expected 'x,y;x,y'") from None


def cmd_plan(args, cfg) -> int:
    trace = None
    if args.debug_tableau:
        def trace(phase, it, T, k, r):
            print(f"phase {phase} it {it}: entering column {k}, leaving row {r}, "
                  f"objective {-T[-1, -1]:.9g}", file=sys.stderr)
            with np.printoptions(precision=4, suppress=True, linewidth=160):
                print(T, file=sys.stderr)

    if args.nodes:
        with open(args.nodes, "r", encoding="utf-8") as fh:
            nodes = NodeSet.from_json(fh.read())
    else:
        if not args.live or not args.design:
            raise ConfigError("plan needs --live and --design, or --nodes")
        live = load_heightmap(args.live, scale=cfg["scale"], resolution=cfg["resolution"])
        design = _design_for(live, args.design, cfg["scale"], cfg["resolution"])
        diff = diff_to_design(live, design)
        nodes = extract_nodes(diff, height_threshold=cfg["threshold"])
        if cfg["decimate"] > 0 and nodes.n > 1:
            nodes = assign_gradient_headings(nodes, diff)
            nodes = decimate_sources(nodes, cfg["decimate"], math.radians(cfg["decimate_heading"]))
    plan = solve_transport(nodes, solver=cfg["solver"], trace=trace)
    triplets = build_triplets(plan, cfg["offset"]) if plan.moves else []
    if triplets:
        if args.centers:
            triplets = group_by_center(triplets, _parse_centers(args.centers))
        else:
            triplets = order_radially(triplets, sink_centroid(plan))
    doc = plan.to_json()
    doc["n_sources"], doc["n_sinks"] = nodes.n, nodes.m
    doc["triplets"] = [t.to_json() for t in triplets]
    case = plan.case.case if plan.case else "none"
    print(f"objective {plan.objective:.9f}")
    print(f"case {case}")
    print(f"sources {nodes.n} sinks {nodes.m} moves {len(plan.moves)} triplets {len(triplets)}")
    print(f"solve_time {plan.solve_time:.4f} s ({plan.solver})")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


# --- simulate ---------------------------------------------------------------

def parse_site(spec: str) -> dict:
    """Preset name, JSON file, or ``WxH@res[:cx,cy,D[;cx,cy,D]]``."""
    if spec in SITE_PRESETS:
        return dict(SITE_PRESETS[spec])
    if os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{spec}: line {exc.lineno}: {exc.msg}") from None
        return {"width": float(d["width"]), "height": float(d["height"]),
                "resolution": float(d.get("resolution", 0.05)),
                "craters": [list(map(float, c)) for c in d.get("craters", [])]}
    try:
        dims, _, rest = spec.partition(":")
        size, _, res = dims.partition("@")
        w, h = (float(v) for v in size.lower().split("x"))
        craters = [[float(v) for v in c.split(",")] for c in rest.split(";") if c.strip()]
        if any(len(c) != 3 for c in craters):
            raise ValueError
        return {"width": w, "height": h, "resolution": float(res or 0.05), "craters": craters}
    except ValueError:
        raise ConfigError(f"bad site spec {spec!r}; expected e.g. '5x5@0.05:2.5,2.5,1.0'") from None


def _sim_config(cfg, seed):
    return SimConfig(budget=int(cfg["budget"]), dt=cfg["dt"],
                     explore_spacing=cfg["explore_spacing"], explore_inset=cfg["explore_inset"],
                     height_threshold=cfg["threshold"], decimate=cfg["decimate"],
                     decimate_heading_deg=cfg["decimate_heading"],
                     offset_distance=cfg["offset"], min_triplet_volume=cfg["min_triplet_volume"],
                     w_topo=cfg["w_topo"], key_resolution=cfg["key_resolution"],
                     expansion_budget=int(cfg["expansion_budget"]),
                     grade_spec=cfg["grade_spec"], smooth_spec=cfg["smooth_spec"],
                     window=int(cfg["window"]), backoff=cfg["backoff"],
                     max_sweeps=int(cfg["max_sweeps"]), patience=int(cfg["patience"]),
                     seed=int(seed))


def _metrics_table(rep):
    b, a = rep.before, rep.after
    rows = [("grade (deg)", b.grade, a.grade),
            ("smoothness (cm)", b.smoothness * 100, a.smoothness * 100),
            ("area OOS (m^2)", b.area_oos, a.area_oos)]
    out = [f"{'metric':<18}{'before':>12}{'after':>12}"]
    out += [f"{name:<18}{x:>12.4f}{y:>12.4f}" for name, x, y in rows]
    out.append(f"{'OOS reduction':<18}{'':>12}{rep.oos_reduction * 100:>11.1f}%")
    return "\n".join(out)


def cmd_simulate(args, cfg) -> int:
    site_spec = parse_site(args.site)
    episodes = int(cfg["episodes"])
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    seeds = [int(cfg["seed"]) + k for k in range(episodes)]
    configs = [_sim_config(cfg, s) for s in seeds]

    def one(sc):
        site = make_crater_site(site_spec["width"], site_spec["height"],
                                site_spec["resolution"], site_spec["craters"], seed=sc.seed)
        snap = None
        if args.snapshots:
            snap = os.path.join(args.snapshots, f"seed_{sc.seed}") if episodes > 1 else args.snapshots
        return run_episode(site, sc, snapshot_dir=snap, snapshot_every=int(cfg["snapshot_every"]))

    if episodes == 1:
        reports = [one(configs[0])]
    else:
        with ThreadPoolExecutor() as pool:
            reports = list(pool.map(one, configs))
    for rep in reports:
        print(f"seed {rep.seed}: {rep.triplets_executed} triplets executed, "
              f"{rep.triplets_skipped} skipped")
        print(_metrics_table(rep))
    if args.out:
        doc = reports[0].to_json() if episodes == 1 else {"episodes": [r.to_json() for r in reports]}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


# --- metrics / render -------------------------------------------------------

def cmd_metrics(args, cfg) -> int:
    hmap = load_heightmap(args.map, scale=cfg["scale"], resolution=cfg["resolution"])
    m = compute_metrics(hmap, cfg["grade_spec"], cfg["smooth_spec"], int(cfg["window"]))
    print(json.dumps(m.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_render(args, cfg) -> int:
    hmap = load_heightmap(args.map, scale=cfg["scale"], resolution=cfg["resolution"])
    moves = []
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            try:
                moves = load_plan_json(fh.read())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.plan}: line {exc.lineno}: {exc.msg}") from None
    ext = os.path.splitext(args.out)[1].lower()
    k = int(cfg["pixel_scale"])
    if ext == ".ppm":
        if moves:
            log.warning("PPM output has no vector layer; %d moves not drawn", len(moves))
        lo, hi = render_ppm(hmap, args.out, k)
    else:
        lo, hi = render_svg(hmap, args.out, moves, k)
        print(f"arrows {len(moves)}")
    print(f"legend min {lo:.6g} m max {hi:.6g} m")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regrade", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON config file (default: $REGRADE_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def geometry(sp):
        sp.add_argument("--scale", type=float, help="meters per file unit")
        sp.add_argument("--resolution", type=float, help="meters per cell (required for PGM)")

    sp = sub.add_parser("plan", help="transport plan from live and design maps")
    sp.add_argument("--live")
    sp.add_argument("--design", help="heightmap path or flat:<height>")
    sp.add_argument("--nodes", help="node-set JSON instead of maps")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--decimate", type=float)
    sp.add_argument("--decimate-heading", dest="decimate_heading", type=float, help="degrees")
    sp.add_argument("--offset", type=float, help="triplet rear offset (m)")
    sp.add_argument("--solver", choices=["auto", "simplex", "flow"])
    sp.add_argument("--centers", help="radial centers 'x,y;x,y' for multi-crater ordering")
    sp.add_argument("--debug-tableau", action="store_true", help="dump simplex tableaux to stderr")
    sp.add_argument("--out")
    geometry(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="closed-loop grading episode")
    sp.add_argument("--site", default="crater")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--w-topo", dest="w_topo", type=float)
    sp.add_argument("--snapshots", help="directory for numbered CSV truth snapshots")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("metrics", help="grade, smoothness and out-of-spec area")
    sp.add_argument("--map", required=True)
    sp.add_argument("--grade-spec", dest="grade_spec", type=float, help="degrees")
    sp.add_argument("--smooth-spec", dest="smooth_spec", type=float, help="meters")
    sp.add_argument("--window", type=int)
    geometry(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("render", help="PPM or SVG view of a map and plan")
    sp.add_argument("--map", required=True)
    sp.add_argument("--plan")
    sp.add_argument("--out", required=True)
    sp.add_argument("--pixel-scale", dest="pixel_scale", type=int)
    geometry(sp)
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "render" and os.path.splitext(args.out)[1].lower() not in (".ppm", ".svg"):
        parser.error(f"unsupported output extension for {args.out!r}; use .ppm or .svg")
    try:
        config = load_config(args.config or os.environ.get("REGRADE_CONFIG"))
        cfg = resolve(args, args.command, config)
        return args.func(args, cfg)
    except GeometryMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (HeightMapParseError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
