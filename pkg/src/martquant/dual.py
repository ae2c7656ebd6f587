"""Dual (Delaunay) quantization.

The splitting operator sends a point of the grid hull to grid vertices with
its barycentric coordinates as probabilities, so the conditional mean of the
projected point equals the point itself.  This file provides the 1D and 2D
splitting operators, dual weights and distortion of a fixed 1D grid, the 1D
fixed-point optimization of the interior points, and an incremental Delaunay
triangulation for the 2D case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    EmptyCellError,
    OutOfHullError,
    OutOfScopeError,
    SupportError,
)
from .laws import Law1D

__all__ = [
    "DualGrid1D",
    "BarycentricSplit",
    "Triangulation2D",
    "DualQuantization",
    "split",
    "split_randomized",
    "dual_weights",
    "dual_distortion",
    "dual_lloyd_1d",
]

_HULL_TOL = 1e-9


@dataclass(frozen=True)
class DualGrid1D:
    """Strictly increasing grid whose endpoints pin the support hull."""

    points: np.ndarray

    def __init__(self, points):
        points = np.asarray(points, dtype=float).reshape(-1)
        if points.size < 2:
            raise DomainError("a dual grid needs at least two points")
        if np.any(np.diff(points) <= 0.0):
            raise DomainError("grid points must be strictly increasing")
        object.__setattr__(self, "points", points)

    def __len__(self):
        return self.points.size

    @property
    def hull(self) -> tuple[float, float]:
        return (float(self.points[0]), float(self.points[-1]))


@dataclass(frozen=True)
class BarycentricSplit:
    """Vertices (ascending index order) and their barycentric weights."""

    simplex_index: int
    vertex_indices: np.ndarray
    lambdas: np.ndarray

    def point(self, vertices: np.ndarray):
        return self.lambdas @ vertices[self.vertex_indices]


@dataclass(frozen=True)
class DualQuantization:
    grid: np.ndarray
    weights: np.ndarray
    distortion: float
    converged: bool
    iterations: int
    order_violation: bool


def _grid_points(grid) -> np.ndarray:
    if isinstance(grid, DualGrid1D):
        return grid.points
    return DualGrid1D(grid).points


# ---------------------------------------------------------------------------
# splitting operators


def split(grid, xi, tol: float = _HULL_TOL) -> BarycentricSplit:
    """Barycentric split of ``xi`` on a 1D dual grid or a 2D triangulation.

    Raises :class:`OutOfHullError` when ``xi`` lies outside the hull beyond
    ``tol`` (the upstream hull-containment condition failed).
    """
    if isinstance(grid, Triangulation2D):
        return grid.split(np.asarray(xi, dtype=float), tol=tol)
    arr = np.asarray(xi, dtype=float)
    if arr.ndim > 0 and arr.size == 2:
        raise DomainError("2D queries need a Triangulation2D grid")
    if arr.ndim > 0 and arr.size >= 3:
        raise OutOfScopeError("splitting is implemented for d = 1 and d = 2 only")
    points = _grid_points(grid)
    x = float(arr)
    lo, hi = points[0], points[-1]
    scale = max(1.0, abs(lo), abs(hi))
    if x < lo - tol * scale or x > hi + tol * scale:
        raise OutOfHullError(f"query {x} outside hull [{lo}, {hi}]")
    x = min(max(x, lo), hi)
    j = int(np.searchsorted(points, x, side="right")) - 1
    j = min(max(j, 0), points.size - 2)
    if x == points[j]:
        return BarycentricSplit(j, np.array([j]), np.array([1.0]))
    if x == points[j + 1]:
        return BarycentricSplit(j, np.array([j + 1]), np.array([1.0]))
    h = points[j + 1] - points[j]
    lam = np.array([(points[j + 1] - x) / h, (x - points[j]) / h])
    return BarycentricSplit(j, np.array([j, j + 1]), lam)


def split_randomized(bary: BarycentricSplit, u: float) -> int:
    """Vertex index drawn from the split: vertex i on the half-open interval
    ``[sum_{j<i} lambda_j, sum_{j<=i} lambda_j)`` of the unit uniform ``u``."""
    if not 0.0 <= u < 1.0:
        raise DomainError("u must lie in [0, 1)")
    cum = np.cumsum(bary.lambdas)
    j = int(np.searchsorted(cum, u, side="right"))
    return int(bary.vertex_indices[min(j, bary.vertex_indices.size - 1)])


# ---------------------------------------------------------------------------
# dual weights / distortion on a fixed 1D grid


def _check_support(points: np.ndarray, law: Law1D):
    outside = float(law.cdf_left(points[0])) + (1.0 - float(law.cdf(points[-1])))
    if outside > 1e-12:
        raise SupportError(
            f"law carries {outside:.3e} mass outside the grid hull "
            f"[{points[0]}, {points[-1]}]"
        )


def dual_weights(grid, law: Law1D) -> np.ndarray:
    """Mass each grid point receives under the splitting of the law.

    Point i integrates the hat function of the interval pair around x_i
    against the law, expressed through F and K differences.
    """
    points = _grid_points(grid)
    _check_support(points, law)
    f = np.asarray(law.cdf(points))
    k = np.asarray(law.partial_moment(points))
    dx = np.diff(points)
    df = np.diff(f)
    dk = np.diff(k)
    p = np.zeros(points.size)
    p[1:] += (dk - points[:-1] * df) / dx
    p[:-1] += (points[1:] * df - dk) / dx
    # an atom sitting exactly on the left endpoint belongs wholly to it
    p[0] += f[0] - float(law.cdf_left(points[0]))
    return np.clip(p, 0.0, None)


def dual_distortion(grid, law: Law1D) -> float:
    """Quadratic dual distortion of a fixed grid.

    Per interval, int (x_{i+1} - xi)(xi - x_i) dmu, summed through the F/K
    closed form and the second moment of the law.
    """
    points = _grid_points(grid)
    _check_support(points, law)
    f = np.asarray(law.cdf(points))
    k = np.asarray(law.partial_moment(points))
    s = float(
        np.sum((points[:-1] + points[1:]) * np.diff(k) - points[:-1] * points[1:] * np.diff(f))
    )
    m2 = law.second_moment
    # mass exactly at the left endpoint contributes zero distortion but is
    # excluded from the interval integrals; re-add its square
    atom_left = (f[0] - float(law.cdf_left(points[0]))) * points[0] ** 2
    d2 = s - m2 + atom_left
    return float(np.sqrt(max(d2, 0.0)))


# ---------------------------------------------------------------------------
# 1D dual grid optimization


def _dual_map(points: np.ndarray, f: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Interior update whose fixed points zero the distortion gradient.

    With D_i = F(x_{i+1}) - F(x_{i-1}), the map satisfies
    d(d2)/dx_i = D_i (T_i(x) - x_i), so moving *against* T - x descends the
    squared distortion.
    """
    num = (
        k[2:]
        - k[1:-1]
        - (points[2:] - points[1:-1]) * (f[2:] - f[1:-1])
        + k[1:-1]
        - k[:-2]
        + (points[1:-1] - points[:-2]) * (f[1:-1] - f[:-2])
    )
    den = f[2:] - f[:-2]
    if np.any(den <= 0.0):
        raise EmptyCellError("two consecutive intervals carry zero mass")
    return num / den


def _map_residual(points, f, k, f_left) -> float:
    """Sup-norm stationarity residual in the scale of T(x) - x.

    For continuous F this is exactly ``||T(x) - x||_inf``.  At an atom the
    squared distortion has a kink and the two one-sided gradients bracket
    zero at an optimal point, so the residual is the distance of zero from
    the one-sided gradient interval, rescaled by the interval masses.
    """
    den = f[2:] - f[:-2]
    base = k[2:] - k[:-2] - points[2:] * f[2:] + points[:-2] * f[:-2]
    span = points[2:] - points[:-2]
    g_right = base + f[1:-1] * span
    g_left = base + f_left[1:-1] * span
    gap = np.where(g_left > 0.0, g_left, np.where(g_right < 0.0, -g_right, 0.0))
    live = den > 0.0
    if not np.any(live):
        return 0.0
    return float(np.max(gap[live] / den[live]))


def _solve_levels(law, levels, lo, hi, xtol):
    """Vector solve of F(x) = level on the brackets [lo, hi] (F nondecreasing).

    Secant step with a bisection safeguard; each point retires as soon as
    its bracket shrinks below ``xtol`` or its residual vanishes, so only
    still-active points are re-evaluated.
    """
    lo = lo.copy()
    hi = hi.copy()
    flo = np.asarray(law.cdf(lo)) - levels
    fhi = np.asarray(law.cdf(hi)) - levels
    sol = 0.5 * (lo + hi)
    active = np.ones(levels.size, dtype=bool)
    for sweep in range(110):
        width = hi - lo
        active &= width > xtol
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        l_, h_ = lo[idx], hi[idx]
        fl_, fh_ = flo[idx], fhi[idx]
        w_ = h_ - l_
        mid = 0.5 * (l_ + h_)
        if sweep % 2:
            # unconditional bisection every other round: the bracket halves
            # even where F jumps and the secant stagnates one-sided
            x = mid
        else:
            den = fh_ - fl_
            with np.errstate(divide="ignore", invalid="ignore"):
                sec = (l_ * fh_ - h_ * fl_) / den
            inside = np.isfinite(sec) & (sec > l_ + 0.01 * w_) & (sec < h_ - 0.01 * w_)
            x = np.where(inside, sec, mid)
        fx = np.asarray(law.cdf(x)) - levels[idx]
        sol[idx] = x
        done = np.abs(fx) < 1e-15
        go_hi = fx >= 0.0
        hi[idx] = np.where(go_hi, x, h_)
        fhi[idx] = np.where(go_hi, fx, fh_)
        lo[idx] = np.where(go_hi, l_, x)
        flo[idx] = np.where(go_hi, fl_, fx)
        active[idx[done]] = False
    still = active
    if np.any(still):
        sol[still] = 0.5 * (lo[still] + hi[still])
    return sol


def dual_lloyd_1d(
    law: Law1D,
    n_points: int,
    init=None,
    tol: float = 1e-12,
    max_iter: int = 100000,
    relaxation="auto",
) -> DualQuantization:
    """Optimize the interior points of a dual grid on the support hull.

    The endpoints stay pinned to the hull.  The fixed points of the update
    map T are exactly the stationary points of the squared distortion
    (``T - id`` is the distortion gradient rescaled by the positive interval
    masses), and convergence means ``||T(x) - x||_inf < tol``.

    ``relaxation`` selects the update:

    * ``"auto"`` (default): each sweep re-solves every stationarity equation
      in its F-level form ``F(x_i) = [x_{i+1} F(x_{i+1}) - x_{i-1} F(x_{i-1})
      - K(x_{i+1}) + K(x_{i-1})] / (x_{i+1} - x_{i-1})``, whose level always
      lies between the neighbour F values.  This is robust where cell masses
      differ by orders of magnitude (law tails).
    * a float ``w``: the bare iteration ``x <- (1-w) x + w T(x)``.  Note
      ``w = +1`` is distortion *ascent* and diverges even for the uniform
      law; ``w = -1`` descends but can oscillate in thin-mass regions.

    Iterates leaving the ordered simplex stop the run; the last valid grid
    is returned with ``order_violation = True``.
    """
    lo, hi = law.support
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise SupportError("dual quantization needs a compact support hull")
    if n_points < 2:
        raise DomainError("a dual grid needs at least two points")
    if init is None:
        points = np.linspace(lo, hi, n_points)
    else:
        points = _grid_points(init).copy()
        if points.size != n_points:
            raise DomainError("init size must match n_points")
        if abs(points[0] - lo) > 1e-9 or abs(points[-1] - hi) > 1e-9:
            raise DomainError("init endpoints must sit on the support hull")
        points[0], points[-1] = lo, hi
    try:
        law_atoms = np.sort(np.asarray(law.decompose()[2], dtype=float))
    except Exception:
        law_atoms = np.empty(0)
    snap_tol = 1e-13 * (abs(lo) + abs(hi) + 1.0)
    converged = n_points == 2
    order_violation = False
    iterations = 0
    max_iter = 0 if n_points == 2 else max_iter
    float_floor = 2e-16 * (abs(lo) + abs(hi) + 1.0)
    last_move = 0.0  # first sweep solves at full precision
    sweep_step = 1.0
    best_resid = np.inf
    since_best = 0
    fkl = getattr(law, "cdf_moment_left_batch", None)
    for iterations in range(1, max_iter + 1):
        if fkl is not None:
            f, k, f_left = fkl(points)
        else:
            f = np.asarray(law.cdf(points))
            k = np.asarray(law.partial_moment(points))
            f_left = np.asarray(law.cdf_left(points))
        resid = _map_residual(points, f, k, f_left)
        if resid < tol:
            converged = True
            break
        if resid < 0.9 * best_resid:
            best_resid = resid
            since_best = 0
        else:
            since_best += 1
            if since_best > 400:
                sweep_step = 0.5  # stagnation: damp the sweep against cycling
                since_best = 0
        if relaxation == "auto":
            # red-black Gauss-Seidel: each stationarity equation couples a
            # point to its two neighbours only, so same-parity points update
            # independently; alternating parities kills the antiphase
            # oscillation a simultaneous sweep sustains near kinks
            xtol = max(float_floor, 0.02 * last_move)
            cand = points.copy()
            for parity in (1, 2):
                idx = np.arange(parity, n_points - 1, 2)
                if idx.size == 0:
                    continue
                if parity == 2 and fkl is not None:
                    f, k, _ = fkl(cand)
                elif parity == 2:
                    f = np.asarray(law.cdf(cand))
                    k = np.asarray(law.partial_moment(cand))
                lo_n, hi_n = cand[idx - 1], cand[idx + 1]
                f_lo, f_hi = f[idx - 1], f[idx + 1]
                levels = (hi_n * f_hi - lo_n * f_lo - (k[idx + 1] - k[idx - 1])) / (
                    hi_n - lo_n
                )
                levels = np.clip(levels, f_lo, f_hi)
                solved = _solve_levels(law, levels, lo_n, hi_n, xtol)
                if sweep_step != 1.0:
                    solved = cand[idx] + sweep_step * (solved - cand[idx])
                if law_atoms.size:
                    # a point placed within the solve tolerance of an atom
                    # belongs on the atom (kink optima live there); the
                    # tolerance shrinks with the sweeps, so transient snaps
                    # release as the iteration refines
                    snap = max(snap_tol, 2.0 * xtol)
                    near = np.clip(np.searchsorted(law_atoms, solved), 1, law_atoms.size) - 1
                    right = np.minimum(near + 1, law_atoms.size - 1)
                    for cand_idx in (near, right):
                        close = np.abs(solved - law_atoms[cand_idx]) <= snap
                        solved = np.where(close, law_atoms[cand_idx], solved)
                keep_order = (solved > lo_n) & (solved < hi_n)
                cand[idx] = np.where(keep_order, solved, cand[idx])
            if np.any(np.diff(cand) <= 0.0):
                order_violation = True
                break
            last_move = float(np.max(np.abs(cand - points)))
            if last_move < 0.5 * float_floor:
                points = cand
                if fkl is not None:
                    f, k, f_left = fkl(points)
                else:
                    f = np.asarray(law.cdf(points))
                    k = np.asarray(law.partial_moment(points))
                    f_left = np.asarray(law.cdf_left(points))
                converged = _map_residual(points, f, k, f_left) < tol
                break
            points = cand
        else:
            w = float(relaxation)
            mapped = _dual_map(points, f, k)
            cand = np.concatenate(([lo], (1.0 - w) * points[1:-1] + w * mapped, [hi]))
            if np.any(np.diff(cand) <= 0.0):
                order_violation = True
                break
            points = cand
    return DualQuantization(
        grid=points,
        weights=dual_weights(points, law),
        distortion=dual_distortion(points, law),
        converged=converged,
        iterations=iterations,
        order_violation=order_violation,
    )


# ---------------------------------------------------------------------------
# 2D Delaunay triangulation (incremental insertion)


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _in_circumcircle(a, b, c, d, tol: float) -> bool:
    """Strictly inside the circumcircle of CCW triangle (a, b, c)."""
    rows = np.array(
        [
            [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
            [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
            [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
        ]
    )
    det = float(np.linalg.det(rows))
    scale = float(np.prod(np.maximum(np.abs(rows).max(axis=1), 1e-30)))
    return det > tol * max(scale, 1.0)


@dataclass(frozen=True)
class Triangulation2D:
    """Delaunay triangulation: vertex array (N, 2) and CCW index triples."""

    vertices: np.ndarray
    triangles: np.ndarray
    _bary_mats: np.ndarray = field(init=False, repr=False)
    _bary_base: np.ndarray = field(init=False, repr=False)

    def __init__(self, vertices, triangles):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.intp).reshape(-1, 3)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        v = vertices
        t = triangles
        # inverse linear maps for barycentric coordinates w.r.t. vertex 3
        m = np.empty((t.shape[0], 2, 2))
        m[:, 0, 0] = v[t[:, 0], 0] - v[t[:, 2], 0]
        m[:, 0, 1] = v[t[:, 1], 0] - v[t[:, 2], 0]
        m[:, 1, 0] = v[t[:, 0], 1] - v[t[:, 2], 1]
        m[:, 1, 1] = v[t[:, 1], 1] - v[t[:, 2], 1]
        det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
        inv = np.empty_like(m)
        inv[:, 0, 0] = m[:, 1, 1] / det
        inv[:, 0, 1] = -m[:, 0, 1] / det
        inv[:, 1, 0] = -m[:, 1, 0] / det
        inv[:, 1, 1] = m[:, 0, 0] / det
        object.__setattr__(self, "_bary_mats", inv)
        object.__setattr__(self, "_bary_base", v[t[:, 2]])

    @classmethod
    def delaunay(cls, points, tol: float = _HULL_TOL) -> "Triangulation2D":
        """Incremental insertion with a bounding super-triangle.

        Cocircular configurations count as outside the circumcircle, so the
        insertion order (vertex index order) fixes the triangulation
        deterministically.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != 2:
            raise OutOfScopeError("triangulation is implemented for d = 2 only")
        n = pts.shape[0]
        if n < 3:
            raise DomainError("need at least three points")
        if np.unique(pts, axis=0).shape[0] != n:
            raise DomainError("points must be pairwise distinct")
        center = pts.mean(axis=0)
        span = max(float(np.max(np.abs(pts - center))), 1e-12)
        big = 64.0 * span
        sup = center + big * np.array(
            [[0.0, 2.0], [-1.7320508075688772, -1.0], [1.7320508075688772, -1.0]]
        )
        verts = np.vstack([pts, sup])
        tris: list[tuple[int, int, int]] = [(n, n + 1, n + 2)]
        for p in range(n):
            d = verts[p]
            bad = []
            for ti, t in enumerate(tris):
                if _in_circumcircle(verts[t[0]], verts[t[1]], verts[t[2]], d, 1e-12):
                    bad.append(ti)
            edge_count: dict[tuple[int, int], tuple[int, int]] = {}
            for ti in bad:
                a, b, c = tris[ti]
                for u, v in ((a, b), (b, c), (c, a)):
                    key = (min(u, v), max(u, v))
                    if key in edge_count:
                        del edge_count[key]
                    else:
                        edge_count[key] = (u, v)
            for ti in sorted(bad, reverse=True):
                del tris[ti]
            for u, v in edge_count.values():
                if _orient(verts[p], verts[u], verts[v]) > 0.0:
                    tris.append((p, u, v))
                else:
                    tris.append((p, v, u))
        keep = [t for t in tris if max(t) < n]
        if not keep:
            raise DomainError("degenerate point set: no valid triangulation")
        return cls(verts[:n], np.array(keep, dtype=np.intp))

    def barycentric_all(self, queries: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of each query in every triangle: (Q, T, 3)."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        rel = q[:, None, :] - self._bary_base[None, :, :]
        lam12 = np.einsum("tij,qtj->qti", self._bary_mats, rel)
        lam3 = 1.0 - lam12[..., 0] - lam12[..., 1]
        return np.concatenate([lam12, lam3[..., None]], axis=-1)

    def locate(self, queries: np.ndarray, tol: float = _HULL_TOL):
        """Containing triangle per query and clipped barycentric weights."""
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        lam = self.barycentric_all(q)
        worst = lam.min(axis=2)
        best = np.argmax(worst, axis=1)
        sel = lam[np.arange(q.shape[0]), best]
        span = max(1.0, float(np.max(np.abs(self.vertices))))
        bad = worst[np.arange(q.shape[0]), best] < -tol * span
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise OutOfHullError(f"query {q[i]} outside the triangulated hull")
        sel = np.clip(sel, 0.0, None)
        sel /= sel.sum(axis=1, keepdims=True)
        return best, sel

    def split(self, xi, tol: float = _HULL_TOL) -> BarycentricSplit:
        tri_idx, lam = self.locate(np.asarray(xi, dtype=float)[None, :], tol=tol)
        t = int(tri_idx[0])
        idx = self.triangles[t]
        order = np.argsort(idx)
        return BarycentricSplit(t, idx[order], lam[0][order])

    def delaunay_residual(self) -> float:
        """Largest normalized in-circle determinant over simplex/vertex pairs
        (positive values violate the empty-circumcircle property)."""
        worst = -np.inf
        for t in self.triangles:
            a, b, c = (self.vertices[i] for i in t)
            others = np.setdiff1d(np.arange(self.vertices.shape[0]), t)
            for o in others:
                d = self.vertices[o]
                rows = np.array(
                    [
                        [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
                        [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
                        [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
                    ]
                )
                det = float(np.linalg.det(rows))
                scale = float(np.prod(np.maximum(np.abs(rows).max(axis=1), 1e-30)))
                worst = max(worst, det / max(scale, 1.0))
        return worst

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "simplices": self.triangles.tolist(),
        }
