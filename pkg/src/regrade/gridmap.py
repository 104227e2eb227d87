"""Uniform 2.5D height grid with per-cell scalar Kalman state.

Arrays are indexed ``[row, col]``; row 0 is the minimum-y row and column 0
the minimum-x column. Cell ``(r, c)`` has its center at
``origin + (c * resolution, r * resolution)``. Flat cell indices are
row-major: ``r * width_cells + c``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PRIOR_VARIANCE = 1e6
SIGMA0_SQ = 1e-4
RANGE_COEFF = 1e-4


class HeightMapParseError(ValueError):
    """Malformed heightmap file; message carries the line or byte offset."""


class GeometryMismatchError(ValueError):
    pass


class RankError(ValueError):
    """Too few or collinear observed cells to fit a plane."""


@dataclass(frozen=True)
class CellState:
    height: float
    variance: float
    observed: bool


@dataclass(frozen=True)
class FitPlane:
    a: float
    b: float
    c: float

    def __call__(self, x, y):
        return self.a * np.asarray(x) + self.b * np.asarray(y) + self.c


@dataclass(frozen=True)
class SiteMetrics:
    grade: float
    smoothness: float
    area_oos: float
    area_oos_fraction: float
    oos_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "grade": self.grade,
            "smoothness": self.smoothness,
            "smoothness_cm": self.smoothness * 100.0,
            "area_oos": self.area_oos,
            "area_oos_fraction": self.area_oos_fraction,
        }


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeightMap:
    heights: np.ndarray
    variances: np.ndarray
    observed: np.ndarray
    resolution: float
    origin: tuple[float, float] = None

    def __post_init__(self):
        h = _frozen(self.heights, np.float64)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("heights must be a non-empty 2D array")
        v = _frozen(self.variances, np.float64)
        o = _frozen(self.observed, bool)
        if v.shape != h.shape or o.shape != h.shape:
            raise ValueError("heights, variances and observed must share a shape")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if np.any(v < 0):
            raise ValueError("variances must be non-negative")
        if not np.all(np.isfinite(h[o])):
            raise ValueError("observed heights must be finite")
        origin = self.origin
        if origin is None:
            origin = (self.resolution / 2.0, self.resolution / 2.0)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "observed", o)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(origin[0]), float(origin[1])))

    # construction helpers

    @classmethod
    def from_array(cls, heights, resolution, origin=None, variance=0.0):
        h = np.asarray(heights, dtype=np.float64)
        return cls(h, np.full(h.shape, float(variance)), np.ones(h.shape, bool),
                   resolution, origin)

    @classmethod
    def flat(cls, width_cells, height_cells, resolution, height=0.0, origin=None):
        return cls.from_array(np.full((height_cells, width_cells), float(height)),
                              resolution, origin)

    @classmethod
    def unobserved(cls, width_cells, height_cells, resolution, origin=None,
                   prior_variance=PRIOR_VARIANCE):
        shape = (height_cells, width_cells)
        return cls(np.zeros(shape), np.full(shape, prior_variance),
                   np.zeros(shape, bool), resolution, origin)

    def replace(self, **changes) -> "HeightMap":
        fields = dict(heights=self.heights, variances=self.variances,
                      observed=self.observed, resolution=self.resolution,
                      origin=self.origin)
        fields.update(changes)
        return HeightMap(**fields)

    # geometry

    @property
    def width_cells(self) -> int:
        return self.heights.shape[1]

    @property
    def height_cells(self) -> int:
        return self.heights.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def cell_area(self) -> float:
        return self.resolution ** 2

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the cell edges."""
        r = self.resolution
        x0 = self.origin[0] - r / 2
        y0 = self.origin[1] - r / 2
        return x0, x0 + self.width_cells * r, y0, y0 + self.height_cells * r

    @property
    def cells(self) -> list[CellState]:
        return [CellState(float(h), float(v), bool(o)) for h, v, o in
                zip(self.heights.ravel(), self.variances.ravel(), self.observed.ravel())]

    def cell(self, index) -> CellState:
        r, c = self._rowcol(index)
        return CellState(float(self.heights[r, c]), float(self.variances[r, c]),
                         bool(self.observed[r, c]))

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X, Y) of cell-center coordinates."""
        xs = self.origin[0] + np.arange(self.width_cells) * self.resolution
        ys = self.origin[1] + np.arange(self.height_cells) * self.resolution
        return np.meshgrid(xs, ys)

    def world_to_cell(self, x, y):
        c = np.floor((np.asarray(x) - self.origin[0]) / self.resolution + 0.5).astype(int)
        r = np.floor((np.asarray(y) - self.origin[1]) / self.resolution + 0.5).astype(int)
        return r, c

    def in_bounds(self, x, y):
        x0, x1, y0, y1 = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def same_geometry(self, other: "HeightMap") -> bool:
        return (self.shape == other.shape and self.resolution == other.resolution
                and self.origin == other.origin)

    def total_volume(self) -> float:
        return float(self.heights[self.observed].sum() * self.cell_area)

    def _rowcol(self, index):
        if isinstance(index, (tuple, list)) and len(index) == 2:
            r, c = int(index[0]), int(index[1])
            if not (0 <= r < self.height_cells and 0 <= c < self.width_cells):
                raise IndexError(f"cell {index} out of range for {self.shape} map")
            return r, c
        flat = self._flat_indices(index)
        return int(flat[0]) // self.width_cells, int(flat[0]) % self.width_cells

    def _flat_indices(self, cells) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(cells))
        if idx.size == 0:
            return idx.astype(np.intp)
        if idx.ndim == 2 and idx.shape[1] == 2 and not np.isscalar(cells):
            r, c = idx[:, 0], idx[:, 1]
            if np.any((r < 0) | (r >= self.height_cells) | (c < 0) | (c >= self.width_cells)):
                raise IndexError("cell index out of range")
            return (r * self.width_cells + c).astype(np.intp)
        idx = idx.ravel()
        if not np.issubdtype(idx.dtype, np.integer):
            raise IndexError("cell indices must be integers")
        if np.any((idx < 0) | (idx >= self.heights.size)):
            raise IndexError("cell index out of range")
        return idx.astype(np.intp)


# --- file I/O ---------------------------------------------------------------

def load_heightmap(path, format=None, scale=1.0, resolution=None) -> HeightMap:
    """Read a CSV or PGM heightmap; every value becomes an observed cell.

    For CSV the header resolution is used unless ``resolution`` is given.
    PGM files carry no geometry, so ``resolution`` is required.
    """
    if not (scale > 0):
        raise ValueError(f"scale must be positive, got {scale}")
    if resolution is not None and not (resolution > 0):
        raise ValueError(f"resolution must be positive, got {resolution}")
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if fmt == "csv":
        with open(path, "r", encoding="utf-8") as fh:
            values, res = _parse_csv(fh.read())
        return HeightMap.from_array(values * scale, resolution or res)
    if fmt in ("pgm", "pnm"):
        if resolution is None:
            raise ValueError("resolution is required for PGM input")
        with open(path, "rb") as fh:
            pixels = _parse_pgm(fh.read())
        # image row 0 is the top (maximum y)
        return HeightMap.from_array(pixels[::-1] * scale, resolution)
    raise ValueError(f"unsupported heightmap format {fmt!r}")


def _parse_csv(text: str):
    lines = text.splitlines()
    if not lines:
        raise HeightMapParseError("line 1: empty file")
    head = [t.strip() for t in lines[0].split(",")]
    try:
        width, height, res = int(head[0]), int(head[1]), float(head[2])
        if len(head) != 3:
            raise ValueError
    except (ValueError, IndexError):
        raise HeightMapParseError(
            f"line 1: expected header 'width,height,resolution', got {lines[0]!r}") from None
    if width <= 0 or height <= 0 or not res > 0:
        raise HeightMapParseError(f"line 1: non-positive geometry in header {lines[0]!r}")
    rows = []
    for k in range(height):
        lineno = k + 2
        if lineno - 1 >= len(lines):
            raise HeightMapParseError(f"line {lineno}: expected {height} data rows, file ended")
        parts = lines[lineno - 1].split(",")
        if len(parts) != width:
            raise HeightMapParseError(
                f"line {lineno}: expected {width} values, got {len(parts)}")
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise HeightMapParseError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in row):
            raise HeightMapParseError(f"line {lineno}: non-finite height")
        rows.append(row)
    for extra in lines[height + 1:]:
        if extra.strip():
            raise HeightMapParseError(f"line {height + 2}: unexpected trailing data")
    return np.array(rows, dtype=np.float64), res


def _parse_pgm(data: bytes) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise HeightMapParseError(f"byte {start}: unexpected end of header")
        return data[start:pos], start

    magic, _ = token()
    if magic not in (b"P2", b"P5"):
        raise HeightMapParseError(f"byte 0: bad magic {magic!r}, expected P2 or P5")
    header = []
    for name in ("width", "height", "maxval"):
        tok, at = token()
        try:
            val = int(tok)
        except ValueError:
            raise HeightMapParseError(f"byte {at}: bad {name} {tok!r}") from None
        if val <= 0 or (name == "maxval" and val > 65535):
            raise HeightMapParseError(f"byte {at}: {name} out of range: {val}")
        header.append(val)
    width, height, maxval = header
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        depth = 1 if maxval < 256 else 2
        need = count * depth
        if len(data) - pos < need:
            raise HeightMapParseError(
                f"byte {len(data)}: raster truncated, need {need} bytes from byte {pos}")
        dtype = np.uint8 if depth == 1 else np.dtype(">u2")
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        vals = []
        for _ in range(count):
            tok, at = token()
            try:
                v = int(tok)
            except ValueError:
                raise HeightMapParseError(f"byte {at}: bad pixel {tok!r}") from None
            if not 0 <= v <= maxval:
                raise HeightMapParseError(f"byte {at}: pixel {v} exceeds maxval {maxval}")
            vals.append(v)
        pixels = np.array(vals)
    return pixels.reshape(height, width).astype(np.float64)


def save_heightmap(hmap: HeightMap, path, format=None, scale=1.0, maxval=255):
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{hmap.width_cells},{hmap.height_cells},{hmap.resolution!r}\n")
            for row in hmap.heights / scale if scale != 1.0 else hmap.heights:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt in ("pgm", "pnm"):
        pix = np.clip(np.rint(hmap.heights[::-1] / scale), 0, maxval)
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{hmap.width_cells} {hmap.height_cells}\n{maxval}\n".encode())
            fh.write(pix.astype(dtype).tobytes())
    else:
        raise ValueError(f"unsupported heightmap format {fmt!r}")


# --- Kalman cell filters -----------------------------------------------------

def measurement_variance(distance, sigma0_sq=SIGMA0_SQ, k=RANGE_COEFF):
    """Range-dependent measurement variance sigma0^2 + k d^2."""
    return sigma0_sq + k * np.square(distance)


def kalman_update(hmap: HeightMap, cell, measurement, meas_variance) -> HeightMap:
    """Scalar KF update of one or many cells.

    ``cell`` is a flat index, a ``(row, col)`` pair, or an array of flat
    indices. Repeated indices are fused as sequential updates would be
    (information form). Cells with zero variance are treated as exact.
    """
    if isinstance(cell, tuple) and len(cell) == 2 and np.isscalar(cell[0]):
        r, c = hmap._rowcol(cell)
        idx = np.array([r * hmap.width_cells + c])
    else:
        idx = hmap._flat_indices(cell)
    z = np.broadcast_to(np.asarray(measurement, dtype=np.float64), idx.shape)
    r = np.broadcast_to(np.asarray(meas_variance, dtype=np.float64), idx.shape)
    if np.any(~(r > 0)):
        raise ValueError("measurement variance must be positive")
    if idx.size == 0:
        return hmap

    h = hmap.heights.ravel().copy()
    v = hmap.variances.ravel().copy()
    obs = hmap.observed.ravel().copy()
    info = np.zeros_like(h)
    info_z = np.zeros_like(h)
    np.add.at(info, idx, 1.0 / r)
    np.add.at(info_z, idx, z / r)
    touched = np.unique(idx)
    t_exact = touched[v[touched] == 0.0]
    t = touched[v[touched] > 0.0]
    prec = 1.0 / v[t] + info[t]
    h[t] = (h[t] / v[t] + info_z[t]) / prec
    v[t] = 1.0 / prec
    obs[t] = True
    obs[t_exact] = True
    shape = hmap.shape
    return hmap.replace(heights=h.reshape(shape), variances=v.reshape(shape),
                        observed=obs.reshape(shape))


def inject_disturbance_noise(hmap: HeightMap, cells, added_variance) -> HeightMap:
    if added_variance < 0:
        raise ValueError("added_variance must be non-negative")
    idx = hmap._flat_indices(cells)
    if added_variance == 0 or idx.size == 0:
        return hmap
    v = hmap.variances.ravel().copy()
    np.add.at(v, idx, added_variance)
    return hmap.replace(variances=v.reshape(hmap.shape))


# --- plane fit and metrics ---------------------------------------------------

def _fit(x, y, z):
    # referenced to the first sample so constant fields solve to exact zeros
    x0, y0, z0 = x[0], y[0], z[0]
    dx, dy, dz = x - x0, y - y0, z - z0
    mx, my = dx.mean(), dy.mean()
    A = np.column_stack([dx - mx, dy - my, np.ones_like(dx)])
    sv = np.linalg.svd(A[:, :2], compute_uv=False)
    scale = max(np.ptp(dx), np.ptp(dy), 1e-300)
    if sv.size < 2 or sv[-1] <= 1e-9 * scale * math.sqrt(len(x)):
        raise RankError("observed cells are collinear; plane is undetermined")
    (a, b, c), *_ = np.linalg.lstsq(A, dz, rcond=None)
    a = float(a)
    b = float(b)
    c = float(z0 + c - a * (x0 + mx) - b * (y0 + my))
    return a, b, c


def fit_plane(hmap: HeightMap) -> FitPlane:
    """Least-squares plane z = a x + b y + c over the observed cells."""
    mask = hmap.observed
    if mask.sum() < 3:
        raise RankError(f"need at least 3 observed cells, have {int(mask.sum())}")
    X, Y = hmap.centers()
    return FitPlane(*_fit(X[mask], Y[mask], hmap.heights[mask]))


def plane_residuals(hmap: HeightMap, plane: FitPlane | None = None) -> np.ndarray:
    """Heights minus the fit plane; NaN at unobserved cells."""
    plane = plane or fit_plane(hmap)
    mask = hmap.observed
    X, Y = hmap.centers()
    x, y, z = X[mask], Y[mask], hmap.heights[mask]
    # same reference shift as the fit, so exact planes give exact zeros
    pred = plane.a * (x - x[0]) + plane.b * (y - y[0])
    res = np.full(hmap.shape, np.nan)
    res[mask] = (z - z[0]) - pred - (plane(x[0], y[0]) - z[0])
    return res


def grade_degrees(plane: FitPlane) -> float:
    return math.degrees(math.atan(math.hypot(plane.a, plane.b)))


def local_grade_smoothness(hmap: HeightMap, window: int = 5):
    """Per-cell grade (deg) and smoothness (m) over a square window.

    Windows are truncated at the map edge and only observed cells take part.
    Cells whose window cannot support a plane get NaN.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    k = window
    half = k // 2
    res = hmap.resolution
    mask = hmap.observed
    w = np.pad(mask.astype(np.float64), half)
    z = np.pad(np.where(mask, hmap.heights, 0.0), half)
    W = np.lib.stride_tricks.sliding_window_view(w, (k, k))
    Z = np.lib.stride_tricks.sliding_window_view(z, (k, k))
    off = (np.arange(k) - half) * res
    KX, KY = np.meshgrid(off, off)
    # center heights on the window's own cell to keep sums well conditioned
    Zc = (Z - np.where(mask, hmap.heights, 0.0)[..., None, None]) * W

    S0 = W.sum(axis=(-1, -2))
    Sx = (W * KX).sum(axis=(-1, -2))
    Sy = (W * KY).sum(axis=(-1, -2))
    Sxx = (W * KX * KX).sum(axis=(-1, -2))
    Syy = (W * KY * KY).sum(axis=(-1, -2))
    Sxy = (W * KX * KY).sum(axis=(-1, -2))
    Sz = Zc.sum(axis=(-1, -2))
    Sxz = (Zc * KX).sum(axis=(-1, -2))
    Syz = (Zc * KY).sum(axis=(-1, -2))

    N = np.stack([np.stack([Sxx, Sxy, Sx], -1),
                  np.stack([Sxy, Syy, Sy], -1),
                  np.stack([Sx, Sy, S0], -1)], -2)
    rhs = np.stack([Sxz, Syz, Sz], -1)
    # centered second moments decide degeneracy
    with np.errstate(invalid="ignore", divide="ignore"):
        cxx = Sxx - Sx * Sx / S0
        cyy = Syy - Sy * Sy / S0
        cxy = Sxy - Sx * Sy / S0
    det = cxx * cyy - cxy * cxy
    ok = mask & (S0 >= 3) & (det > 1e-12 * (res ** 4) * np.maximum(S0, 1) ** 2)

    grade = np.full(hmap.shape, np.nan)
    smooth = np.full(hmap.shape, np.nan)
    if window == 1 or not ok.any():
        return grade, smooth
    sol = np.linalg.solve(N[ok], rhs[ok][..., None])[..., 0]
    a, b, c = sol[:, 0], sol[:, 1], sol[:, 2]
    grade[ok] = np.degrees(np.arctan(np.hypot(a, b)))
    r = (Zc[ok] - (a[:, None, None] * KX + b[:, None, None] * KY + c[:, None, None])) * W[ok]
    smooth[ok] = np.sqrt((r * r).sum(axis=(-1, -2)) / S0[ok])
    return grade, smooth


def compute_metrics(hmap: HeightMap, grade_spec: float = 1.0, smooth_spec: float = 0.01,
                    window: int = 5) -> SiteMetrics:
    """Site grade/smoothness about the global fit plane and out-of-spec area.

    A cell is out of spec when the plane fitted to its window exceeds
    ``grade_spec`` degrees or the window residual std exceeds ``smooth_spec``.
    """
    plane = fit_plane(hmap)
    res = plane_residuals(hmap, plane)
    resid = res[hmap.observed]
    smooth = float(np.sqrt(np.mean(resid * resid)))
    g_loc, s_loc = local_grade_smoothness(hmap, window)
    tol = 1e-9
    with np.errstate(invalid="ignore"):
        bad = (g_loc > grade_spec * (1 + tol)) | (s_loc > smooth_spec * (1 + tol))
    bad &= hmap.observed
    area = float(bad.sum() * hmap.cell_area)
    total = float(hmap.observed.sum() * hmap.cell_area)
    return SiteMetrics(grade_degrees(plane), smooth, area,
                       area / total if total else 0.0, bad)


def diff_to_design(live: HeightMap, design: HeightMap) -> HeightMap:
    """Signed (live - design) field; positive cells hold excess material."""
    if not live.same_geometry(design):
        raise GeometryMismatchError(
            f"live {live.shape}@{live.resolution} origin {live.origin} vs "
            f"design {design.shape}@{design.resolution} origin {design.origin}")
    return live.replace(heights=live.heights - design.heights,
                        variances=live.variances + design.variances,
                        observed=live.observed & design.observed)


def flat_like(hmap: HeightMap, height: float = 0.0) -> HeightMap:
    return HeightMap.from_array(np.full(hmap.shape, float(height)), hmap.resolution,
                                hmap.origin)


def as_index_list(cells: Iterable[Sequence[int]], width: int) -> np.ndarray:
    return np.array([r * width + c for r, c in cells], dtype=np.intp)
