"""Dense linear programs ``min c'x  s.t.  G x <= h,  A x = b``.

Variables are free unless a row of ``G`` bounds them below by zero. The
solver is a two-phase tableau simplex using Bland's rule throughout, which
makes it deterministic and cycle-free at the cost of speed on big problems.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class StandardFormLP:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        N = c.size
        G = np.asarray(self.G, dtype=float).reshape(-1, N) if np.size(self.G) else np.zeros((0, N))
        A = np.asarray(self.A, dtype=float).reshape(-1, N) if np.size(self.A) else np.zeros((0, N))
        h = np.asarray(self.h, dtype=float).ravel()
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if G.shape[0] != h.size:
            raise ValueError(f"G has {G.shape[0]} rows but h has {h.size} entries")
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b_eq has {b.size} entries")
        for name, arr in (("c", c), ("G", G), ("h", h), ("A", A), ("b_eq", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b_eq", b)

    @property
    def n_vars(self) -> int:
        return self.c.size

    def residuals(self, x) -> tuple[float, float]:
        """(max inequality violation, max equality violation)."""
        x = np.asarray(x, dtype=float)
        ineq = float(np.max(self.G @ x - self.h, initial=0.0))
        eq = float(np.max(np.abs(self.A @ x - self.b_eq), initial=0.0))
        return max(ineq, 0.0), eq


@dataclass
class LPSolution:
    x: Optional[np.ndarray]
    objective: float
    status: str
    iterations: int = 0
    basis: list = field(default_factory=list, repr=False)


Trace = Callable[[int, int, np.ndarray, int, int], None]


def _pivot(T, r, k):
    T[r] /= T[r, k]
    col = T[:, k].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _simplex(T, basis, ncols, phase, tol, trace, max_iter):
    """Bland's-rule iterations on tableau ``T`` (last row = reduced costs)."""
    it = 0
    m = T.shape[0] - 1
    while True:
        rc = T[-1, :ncols]
        cand = np.flatnonzero(rc < -tol)
        if cand.size == 0:
            return OPTIMAL, it
        k = int(cand[0])
        col = T[:m, k]
        pos = np.flatnonzero(col > tol)
        if pos.size == 0:
            return UNBOUNDED, it
        ratios = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        if trace is not None:
            trace(phase, it, T.copy(), k, r)
        _pivot(T, r, k)
        basis[r] = k
        it += 1
        if it > max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} iterations")


def solve(lp: StandardFormLP, tol: float = 1e-9, trace: Optional[Trace] = None,
          max_iter: int = 200000) -> LPSolution:
    """Two-phase dense simplex; returns an optimal basic feasible solution."""
    if not isinstance(lp, StandardFormLP):
        raise TypeError("expected a StandardFormLP")
    N = lp.n_vars
    G, h, A, b = lp.G, lp.h, lp.A, lp.b_eq

    # rows of the form -a*x_k <= 0 become plain nonnegativity bounds
    nonneg = np.zeros(N, bool)
    keep = np.ones(G.shape[0], bool)
    for i, row in enumerate(G):
        nz = np.flatnonzero(row)
        if nz.size == 1 and row[nz[0]] < 0 and h[i] == 0.0:
            nonneg[nz[0]] = True
            keep[i] = False
    G2, h2 = G[keep], h[keep]
    free = np.flatnonzero(~nonneg)

    # y = [x (nonneg part as-is, free part as u), w (negated free copies), slacks]
    n_x = N
    n_w = free.size
    n_s = G2.shape[0]
    ncols = n_x + n_w + n_s
    mrows = n_s + A.shape[0]
    M = np.zeros((mrows, ncols))
    rhs = np.zeros(mrows)
    M[:n_s, :n_x] = G2
    M[:n_s, n_x:n_x + n_w] = -G2[:, free]
    M[:n_s, n_x + n_w:] = np.eye(n_s)
    rhs[:n_s] = h2
    M[n_s:, :n_x] = A
    M[n_s:, n_x:n_x + n_w] = -A[:, free]
    rhs[n_s:] = b
    cost = np.concatenate([lp.c, -lp.c[free], np.zeros(n_s)])

    neg = rhs < 0
    M[neg] *= -1
    rhs[neg] *= -1

    # initial basis: slacks on untouched <= rows, artificials elsewhere
    basis = [-1] * mrows
    for i in range(n_s):
        if not neg[i]:
            basis[i] = n_x + n_w + i
    art_rows = [i for i in range(mrows) if basis[i] < 0]
    n_a = len(art_rows)
    T = np.zeros((mrows + 1, ncols + n_a + 1))
    T[:mrows, :ncols] = M
    T[:mrows, -1] = rhs
    for j, i in enumerate(art_rows):
        T[i, ncols + j] = 1.0
        basis[i] = ncols + j

    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)), float(np.max(np.abs(rhs), initial=0.0)))
    ptol = 1e-11 * scale
    iters = 0
    if n_a:
        T[-1, ncols:ncols + n_a] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        status, it = _simplex(T, basis, ncols + n_a, 1, ptol, trace, max_iter)
        iters += it
        if -T[-1, -1] > max(tol, ptol) * max(1.0, float(np.abs(rhs).sum())):
            return LPSolution(None, math.nan, INFEASIBLE, iters)
        # drive remaining artificials out of the basis
        r = 0
        while r < T.shape[0] - 1:
            if basis[r] >= ncols:
                cand = np.flatnonzero(np.abs(T[r, :ncols]) > ptol)
                if cand.size:
                    _pivot(T, r, int(cand[0]))
                    basis[r] = int(cand[0])
                else:
                    T = np.delete(T, r, axis=0)
                    del basis[r]
                    continue
            r += 1
        T = np.delete(T, np.s_[ncols:ncols + n_a], axis=1)

    T[-1] = 0.0
    T[-1, :ncols] = cost
    for r, k in enumerate(basis):
        if cost[k] != 0.0:
            T[-1] -= cost[k] * T[r]
    ctol = 1e-11 * max(1.0, float(np.max(np.abs(cost), initial=0.0)))
    status, it = _simplex(T, basis, ncols, 2, max(ctol, ptol * 1e-2), trace, max_iter)
    iters += it
    if status == UNBOUNDED:
        return LPSolution(None, -math.inf, UNBOUNDED, iters, list(basis))

    # polish: recompute basic values from the original columns
    y = np.zeros(ncols)
    y[basis] = np.linalg.lstsq(M[:, basis], rhs, rcond=None)[0]
    y = np.maximum(y, 0.0)
    x = y[:n_x].copy()
    x[free] -= y[n_x:n_x + n_w]
    return LPSolution(x, float(lp.c @ x), OPTIMAL, iters, list(basis))


# --- brute-force oracle --------------------------------------------------------

MAX_BRUTE_VARS = 9


def _independent_rows(A, b, tol=1e-10):
    rows, rhs = [], []
    basis = np.zeros((0, A.shape[1]))
    for a, bb in zip(A, b):
        v = a - basis.T @ (basis @ a) if basis.size else a.copy()
        nv = np.linalg.norm(v)
        if nv > tol * max(1.0, np.linalg.norm(a)):
            basis = np.vstack([basis, v / nv])
            rows.append(a)
            rhs.append(bb)
    return np.array(rows).reshape(-1, A.shape[1]), np.array(rhs)


def verify_bruteforce(lp: StandardFormLP, grid_steps: int = 5, tol: float = 1e-9,
                      max_grid_points: int = 200000) -> LPSolution:
    """Exhaustive-vertex oracle for tiny LPs (at most 9 variables).

    Enumerates every basic solution (and every extreme ray, to detect
    unboundedness), then cross-checks the vertex optimum against a grid of
    ``grid_steps`` points per free dimension inside the vertex bounding box.
    Assumes the feasible set has at least one vertex when nonempty.
    """
    N = lp.n_vars
    if N > MAX_BRUTE_VARS:
        raise ValueError(f"brute force refuses {N} variables (max {MAX_BRUTE_VARS})")
    Ai, bi = _independent_rows(lp.A, lp.b_eq)
    if Ai.shape[0] and np.max(np.abs(lp.A @ np.linalg.lstsq(Ai, bi, rcond=None)[0] - lp.b_eq)) > 1e-7:
        return LPSolution(None, math.nan, INFEASIBLE)
    rA = Ai.shape[0]
    k = N - rA
    G, h = lp.G, lp.h
    p = G.shape[0]
    gtol = tol * max(1.0, float(np.max(np.abs(h), initial=0.0)))

    def feasible(X):
        ok = np.all(X @ G.T <= h + gtol, axis=-1) if p else np.ones(len(X), bool)
        if rA:
            ok &= np.all(np.abs(X @ Ai.T - bi) <= gtol, axis=-1)
        return ok

    if k == 0:
        x = np.linalg.solve(Ai, bi)
        if not feasible(x[None])[0]:
            return LPSolution(None, math.nan, INFEASIBLE)
        return LPSolution(x, float(lp.c @ x), OPTIMAL)

    subsets = np.array(list(itertools.combinations(range(p), k)), dtype=int).reshape(-1, k)
    verts = np.zeros((0, N))
    if subsets.size:
        Ms = np.concatenate([np.broadcast_to(Ai, (len(subsets), rA, N)), G[subsets]], axis=1)
        rs = np.concatenate([np.broadcast_to(bi, (len(subsets), rA)), h[subsets]], axis=1)
        det = np.linalg.det(Ms)
        good = np.abs(det) > 1e-12
        if good.any():
            X = np.linalg.solve(Ms[good], rs[good][..., None])[..., 0]
            verts = X[feasible(X)]
    if verts.shape[0] == 0:
        return LPSolution(None, math.nan, INFEASIBLE)

    # extreme rays of the recession cone {d : G d <= 0, A d = 0}
    combos = list(itertools.combinations(range(p), k - 1))
    ray_sets = np.array(combos, dtype=int).reshape(len(combos), k - 1)
    if N == 1:
        d = np.eye(1)
    else:
        Ms = np.concatenate([np.broadcast_to(Ai, (len(ray_sets), rA, N)), G[ray_sets]], axis=1)
        _, s, vt = np.linalg.svd(Ms, full_matrices=True)
        d = vt[s[:, -1] > 1e-10 * np.maximum(1.0, s[:, 0]), -1, :]
    for sign in (1.0, -1.0):
        D = sign * d
        in_cone = np.all(D @ G.T <= 1e-10, axis=-1) if p else np.ones(len(D), bool)
        if rA:
            in_cone &= np.all(np.abs(D @ Ai.T) <= 1e-10, axis=-1)
        if np.any(in_cone & (D @ lp.c < -1e-10)):
            return LPSolution(None, -math.inf, UNBOUNDED)

    objs = verts @ lp.c
    best = int(np.argmin(objs))
    x_best, f_best = verts[best], float(objs[best])

    # grid cross-check in the affine hull of the equality constraints
    if rA:
        x0 = np.linalg.lstsq(Ai, bi, rcond=None)[0]
        Z = np.linalg.svd(Ai)[2][rA:].T
    else:
        x0 = np.zeros(N)
        Z = np.eye(N)
    T = (verts - x0) @ Z
    lo, hi = T.min(axis=0), T.max(axis=0)
    steps = max(2, min(grid_steps, int(max_grid_points ** (1.0 / k))))
    axes = [np.linspace(a, b_, steps) for a, b_ in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)
    Xg = x0 + pts @ Z.T
    fg = Xg[feasible(Xg)] @ lp.c
    if fg.size and fg.min() < f_best - 1e-7 * max(1.0, abs(f_best)):
        raise AssertionError(
            f"grid point beats vertex optimum ({fg.min()} < {f_best}); oracle inconsistent")
    return LPSolution(x_best, f_best, OPTIMAL)
