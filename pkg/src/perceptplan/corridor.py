"""Inflated obstacle hulls per spline interval and separating planes between point sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .splines import MINVO_3
from .tracking import norminv


class HorizonExceeded(ValueError):
    pass


class _InfeasibleType:
    """Returned when no separating plane exists."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "Infeasible"


Infeasible = _InfeasibleType()

_CORNERS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
# Chebyshev nodes of the first kind on [0, 1] for the cubic refit
_CHEB = 0.5 - 0.5 * np.cos((2 * np.arange(4) + 1) * np.pi / 8)
_CHEB_V = np.vander(_CHEB, 4, increasing=True)


@dataclass(frozen=True)
class ObstacleHull:
    obstacle_id: int
    interval: int
    vertices: np.ndarray
    # outward facets (n, d) with n.x + d <= 0 inside; empty when the hull is degenerate
    equations: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)), repr=False)
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)), repr=False)

    def contains(self, pts, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if len(self.equations) == 0:
            return np.zeros(len(pts), dtype=bool)
        return np.all(pts @ self.equations[:, :3].T + self.equations[:, 3] <= tol, axis=1)


@dataclass(frozen=True)
class SeparatingPlane:
    normal: np.ndarray
    offset: float
    margin: float

    def side(self, pts) -> np.ndarray:
        return np.atleast_2d(pts) @ self.normal + self.offset


def _affine_rank(pts: np.ndarray, tol: float = 1e-12) -> int:
    if len(pts) < 2:
        return 0
    c = pts - pts[0]
    s = np.linalg.svd(c, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def hull_of(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices, facet equations and edge directions of a 3-D point set.

    Degenerate (flat) sets keep their unique points and have no facets.
    """
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    none = np.zeros((0, 4)), np.zeros((0, 3))
    if _affine_rank(pts) < 3:
        return (pts,) + none
    try:
        h = ConvexHull(pts)
    except QhullError:
        return (pts,) + none
    tri = pts[h.simplices]
    edges = np.concatenate([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]])
    return pts[h.vertices], h.equations, edges


def mean_minvo_points(pred, t0: float, t1: float) -> np.ndarray:
    """MINVO points of the predicted mean over ``[t0, t1]`` (cubic refit at Chebyshev nodes)."""
    ts = t0 + _CHEB * (t1 - t0)
    samples = pred.mean(ts)
    coeffs = np.linalg.solve(_CHEB_V, samples)
    return np.linalg.solve(MINVO_3.T, coeffs)


def build_obstacle_hull(pred, t0: float, t1: float, delta: float, obstacle_half_sides,
                        agent_half_sides, obstacle_id: int = 0, interval: int = 0,
                        horizon_tol: float = 1e-9) -> ObstacleHull:
    if t1 > pred.valid_until + horizon_tol:
        raise HorizonExceeded(f"interval end {t1} beyond prediction horizon {pred.valid_until}")
    pts = mean_minvo_points(pred, t0, t1)
    infl = (norminv(delta) * np.asarray(pred.sigma(t1)).reshape(3)
            + np.asarray(obstacle_half_sides, dtype=float) + np.asarray(agent_half_sides, dtype=float))
    cloud = (pts[:, None, :] + _CORNERS[None, :, :] * infl).reshape(-1, 3)
    return ObstacleHull(obstacle_id, interval, *hull_of(cloud))


def _plane_from(n, a_max, b_min, margin):
    """Plane halfway between projections, or None when the gap is below ``2 * margin``."""
    norm = np.linalg.norm(n)
    if norm == 0:
        return None
    n = n / norm
    a_max, b_min = a_max / norm, b_min / norm
    gap = 0.5 * (b_min - a_max)
    if gap < margin:
        return None
    return SeparatingPlane(n, -0.5 * (a_max + b_min), gap)


_TET_FACES = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
_TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def _candidate_axes(A, hull) -> tuple[np.ndarray, bool]:
    """Separating-axis candidates; the flag is True when the set is complete for two polytopes."""
    axes = [hull.equations[:, :3]]
    complete = len(hull.equations) > 0 and len(A) == 4 and _affine_rank(A) == 3
    if len(A) == 4:
        t = A[_TET_FACES]
        axes.append(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]))
    if len(A) >= 2 and len(hull.edges):
        ea = (A[_TET_EDGES[:, 1]] - A[_TET_EDGES[:, 0]]) if len(A) == 4 else A[1:] - A[0]
        axes.append(np.cross(ea[:, None, :], hull.edges[None, :, :]).reshape(-1, 3))
    N = np.concatenate(axes)
    nrm = np.linalg.norm(N, axis=1)
    ok = nrm > 1e-12
    return N[ok] / nrm[ok, None], complete


def find_separating_plane(agent_points, hull, margin: float = 1e-3):
    """Plane with the agent on the negative side and the hull on the positive side.

    Cheap axis and centroid directions are tried first; otherwise a linear
    program maximizes the separation ``t`` subject to ``|n|_inf <= 1``.
    Returns :data:`Infeasible` when the best separation is below ``margin``.
    """
    A = np.atleast_2d(np.asarray(agent_points, dtype=float))
    B = np.atleast_2d(np.asarray(hull.vertices if isinstance(hull, ObstacleHull) else hull, dtype=float))
    if len(A) == 0 or len(B) == 0:
        raise ValueError("both point sets must be non-empty")
    if isinstance(hull, ObstacleHull) and hull.contains(A).any():
        return Infeasible
    dirs = [B.mean(axis=0) - A.mean(axis=0)]
    amin, amax = A.min(axis=0), A.max(axis=0)
    bmin, bmax = B.min(axis=0), B.max(axis=0)
    for k in range(3):
        if amax[k] < bmin[k]:
            dirs.append(np.eye(3)[k])
        elif bmax[k] < amin[k]:
            dirs.append(-np.eye(3)[k])
    for n in dirs:
        pl = _plane_from(n, (A @ n).max(), (B @ n).min(), margin)
        if pl is not None:
            return pl
    if isinstance(hull, ObstacleHull) and len(hull.equations):
        # separating-axis test: face normals of both sets and edge cross products
        N, complete = _candidate_axes(A, hull)
        pa, pb = A @ N.T, B @ N.T
        gaps = np.maximum(pb.min(axis=0) - pa.max(axis=0), pa.min(axis=0) - pb.max(axis=0))
        f = int(np.argmax(gaps))
        if gaps[f] <= 0 and complete:
            return Infeasible
        n = N[f] if pb[:, f].min() > pa[:, f].max() else -N[f]
        pl = _plane_from(n, (A @ n).max(), (B @ n).min(), margin)
        if pl is not None:
            return pl
    # variables (n, d, t); maximize t
    na, nb = len(A), len(B)
    A_ub = np.vstack([
        np.hstack([A, np.ones((na, 1)), np.ones((na, 1))]),
        np.hstack([-B, -np.ones((nb, 1)), np.ones((nb, 1))]),
    ])
    res = linprog([0, 0, 0, 0, -1], A_ub=A_ub, b_ub=np.zeros(na + nb),
                  bounds=[(-1, 1)] * 3 + [(None, None), (None, 1e3)], method="highs")
    if res.status != 0 or res.x[4] <= 0:
        return Infeasible
    n = res.x[:3]
    return _plane_from(n, (A @ n).max(), (B @ n).min(), margin) or Infeasible
