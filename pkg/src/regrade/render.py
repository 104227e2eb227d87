"""Raster (PPM) and vector (SVG) views of a heightmap and a transport plan.

Colors run linearly from blue at the lowest height to red at the highest.
Image row 0 is the top of the site (maximum y).
"""

from __future__ import annotations

import base64
import struct
import zlib

import numpy as np

from .gridmap import HeightMap

LOW = np.array([40, 60, 220], dtype=np.float64)
HIGH = np.array([220, 40, 40], dtype=np.float64)


def color_ramp(hmap: HeightMap):
    """RGB uint8 image (top row = max y) plus the (min, max) heights used."""
    z = np.where(hmap.observed, hmap.heights, np.nan)
    lo = float(np.nanmin(z)) if np.isfinite(z).any() else 0.0
    hi = float(np.nanmax(z)) if np.isfinite(z).any() else 0.0
    span = hi - lo
    t = np.zeros(z.shape) if span <= 0 else (np.nan_to_num(z, nan=lo) - lo) / span
    rgb = LOW + t[..., None] * (HIGH - LOW)
    rgb[~hmap.observed] = 0.0
    return np.rint(rgb[::-1]).astype(np.uint8), (lo, hi)


def _upscale(rgb, k):
    return np.repeat(np.repeat(rgb, k, axis=0), k, axis=1) if k > 1 else rgb


def render_ppm(hmap: HeightMap, path, pixel_scale: int = 4):
    """Binary P6 image; the legend range is stored as header comments."""
    rgb, (lo, hi) = color_ramp(hmap)
    rgb = _upscale(rgb, pixel_scale)
    h, w, _ = rgb.shape
    header = (f"P6\n# regrade height ramp blue=min red=max\n"
              f"# min {lo!r} m\n# max {hi!r} m\n{w} {h}\n255\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rgb.tobytes())
    return lo, hi


def png_bytes(rgb: np.ndarray) -> bytes:
    """Minimal truecolor PNG encoder."""
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[i].tobytes() for i in range(h))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9))
            + chunk(b"IEND", b""))


def render_svg(hmap: HeightMap, path, moves=(), pixel_scale: int = 4):
    """Raster underlay plus one arrow per move (``src`` -> ``dst`` records)."""
    rgb, (lo, hi) = color_ramp(hmap)
    x0, x1, y0, y1 = hmap.extent
    W = hmap.width_cells * pixel_scale
    H = hmap.height_cells * pixel_scale
    sx = W / (x1 - x0)
    sy = H / (y1 - y0)

    def px(x, y):
        return (x - x0) * sx, (y1 - y) * sy

    data = base64.b64encode(png_bytes(rgb)).decode("ascii")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" '
        'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="white"/></marker></defs>',
        f'<image x="0" y="0" width="{W}" height="{H}" preserveAspectRatio="none" '
        f'style="image-rendering:pixelated" href="data:image/png;base64,{data}"/>',
        f'<text x="4" y="14" font-size="12" fill="white">min {lo:.4g} m  max {hi:.4g} m</text>',
    ]
    for mv in moves:
        ax, ay = px(*mv["src"])
        bx, by = px(*mv["dst"])
        out.append(f'<line class="move" x1="{ax:.3f}" y1="{ay:.3f}" x2="{bx:.3f}" y2="{by:.3f}" '
                   f'stroke="white" stroke-width="1.5" marker-end="url(#head)"/>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    return lo, hi


def read_ppm(path):
    """Pixels and legend of a file written by :func:`render_ppm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    lines, pos, legend = [], 0, {}
    while len(lines) < 3:  # magic, size, maxval
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] in ("min", "max"):
                legend[parts[0]] = float(parts[1])
            continue
        lines.append(line)
    w, h = map(int, lines[1].split())
    rgb = np.frombuffer(data, np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
    return rgb, legend
