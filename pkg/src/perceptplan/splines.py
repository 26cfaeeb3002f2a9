"""Clamped uniform B-splines, derivative control points and MINVO segment conversion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class TooFewControlPoints(ValueError):
    pass


class NonpositiveDuration(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class UnsupportedDegree(ValueError):
    pass


# Rows are basis polynomials on u in [0, 1], columns are coefficients of
# u^0, u^1, ... (ascending).  Degree 2 has the closed form
# 1.5 (u - a)^2, 3 u (1 - u), 1.5 (u - 1 + a)^2 with a = (3 - sqrt 3) / 6.
_A2 = (3.0 - math.sqrt(3.0)) / 6.0
MINVO_2 = np.array([
    [1.5 * _A2 * _A2, -3.0 * _A2, 1.5],
    [0.0, 3.0, -3.0],
    [1.5 * (1.0 - _A2) ** 2, -3.0 * (1.0 - _A2), 1.5],
])
# reference digits; the last row's constant term (-8.5e-18) is set to zero so the
# basis is exactly nonnegative at u = 0
MINVO_3 = np.array([
    [0.91437149978080234369, -4.4622887507045296829, 6.9895481477801393311, -3.4416308968564117698],
    [0.0, 5.2523596690684613009, -11.845989901556746915, 6.6792587327074839365],
    [0.085628500219197656307, -1.5981560640774179483, 8.1917862965657040064, -6.6792587327074839365],
    [0.0, 0.80808514571348655231, -3.3353445427890959785, 3.4416308968564117698],
])
BERNSTEIN_2 = np.array([[1.0, -2.0, 1.0], [0.0, 2.0, -2.0], [0.0, 0.0, 1.0]])
BERNSTEIN_3 = np.array([
    [1.0, -3.0, 3.0, -1.0],
    [0.0, 3.0, -6.0, 3.0],
    [0.0, 0.0, 3.0, -3.0],
    [0.0, 0.0, 0.0, 1.0],
])


def minvo_basis(p: int) -> np.ndarray:
    if p == 2:
        return MINVO_2
    if p == 3:
        return MINVO_3
    raise UnsupportedDegree(f"MINVO basis only available for degree 2 and 3, got {p}")


def bernstein_basis(p: int) -> np.ndarray:
    if p == 2:
        return BERNSTEIN_2
    if p == 3:
        return BERNSTEIN_3
    raise UnsupportedDegree(f"degree {p}")


def clamped_uniform_knots(p: int, n_ctrl: int, t_in: float, t_f: float) -> np.ndarray:
    n_intervals = n_ctrl - p
    interior = np.linspace(t_in, t_f, n_intervals + 1)[1:-1]
    return np.concatenate([np.full(p + 1, float(t_in)), interior, np.full(p + 1, float(t_f))])


def _basis_funs(knots, p, span, t):
    """Nonzero basis values N_{span-p..span, p}(t) of the polynomial piece at ``span``."""
    N = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    N[0] = 1.0
    for r in range(1, p + 1):
        left[r] = t - knots[span + 1 - r]
        right[r] = knots[span + r] - t
        saved = 0.0
        for k in range(r):
            tmp = N[k] / (right[k + 1] + left[r - k])
            N[k] = saved + right[k + 1] * tmp
            saved = left[r - k] * tmp
        N[r] = saved
    return N


@lru_cache(maxsize=256)
def _basis_matrix_cached(knots: tuple, p: int, j: int) -> np.ndarray:
    knots = np.asarray(knots)
    span = p + j
    t0, t1 = knots[span], knots[span + 1]
    us = np.linspace(0.0, 1.0, p + 1)
    vals = np.array([_basis_funs(knots, p, span, t0 + u * (t1 - t0)) for u in us])
    V = np.vander(us, p + 1, increasing=True)
    M = np.linalg.solve(V, vals)
    M.setflags(write=False)
    return M


def basis_matrix(knots, p: int, j: int) -> np.ndarray:
    """Matrix ``M`` with ``coeffs = M @ local_points``.

    ``coeffs[k]`` multiplies ``u^k`` where ``u = (t - t_j) / (t_{j+1} - t_j)``
    on interval ``j``; ``local_points`` are control points ``j .. j+p``.
    """
    knots = np.asarray(knots, dtype=float)
    # the piece only depends on knot ratios; normalizing keeps the cache small across replans
    span = knots[-1] - knots[0]
    key = tuple(np.round((knots - knots[0]) / span, 12)) if span > 0 else tuple(knots)
    return _basis_matrix_cached(key, p, j)


def minvo_conversion(knots, p: int, j: int) -> np.ndarray:
    """Matrix mapping local B-spline control points of interval ``j`` to MINVO points."""
    A = minvo_basis(p)
    return np.linalg.solve(A.T, basis_matrix(knots, p, j))


def bezier_conversion(knots, p: int, j: int) -> np.ndarray:
    return np.linalg.solve(bernstein_basis(p).T, basis_matrix(knots, p, j))


@dataclass(frozen=True)
class TrajectorySpline:
    """Clamped spline; ``control_points`` has shape ``(n + 1, d)``."""

    degree: int
    control_points: np.ndarray
    knots: np.ndarray

    def __post_init__(self):
        cp = np.array(self.control_points, dtype=float)
        if cp.ndim == 1:
            cp = cp[:, None]
        cp.setflags(write=False)
        kn = np.array(self.knots, dtype=float)
        kn.setflags(write=False)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "knots", kn)
        if len(kn) != len(cp) + self.degree + 1:
            raise ValueError("knot count must equal n_ctrl + degree + 1")

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def n(self) -> int:
        return len(self.control_points) - 1

    @property
    def m(self) -> int:
        return len(self.knots) - 1

    @property
    def t_in(self) -> float:
        return float(self.knots[0])

    @property
    def t_f(self) -> float:
        return float(self.knots[-1])

    @property
    def n_intervals(self) -> int:
        return self.m - 2 * self.degree

    def interval_times(self, j: int) -> tuple[float, float]:
        return float(self.knots[self.degree + j]), float(self.knots[self.degree + j + 1])

    def interval_index(self, t: float) -> int:
        p = self.degree
        j = int(np.searchsorted(self.knots[p:p + self.n_intervals + 1], t, side="right")) - 1
        return min(max(j, 0), self.n_intervals - 1)

    def local_points(self, j: int) -> np.ndarray:
        return self.control_points[j:j + self.degree + 1]

    def piece_coeffs(self, j: int) -> np.ndarray:
        """Ascending power coefficients in local ``u`` of interval ``j``, shape ``(p+1, d)``."""
        return basis_matrix(self.knots, self.degree, j) @ self.local_points(j)

    def evaluate(self, t: float, k: int = 0) -> np.ndarray:
        return evaluate(self, t, k)

    def derivative(self) -> "TrajectorySpline":
        p = self.degree
        if p < 1:
            raise ValueError("cannot differentiate a degree-0 spline")
        q, t = self.control_points, self.knots
        denom = (t[p + 1:p + 1 + self.n] - t[1:1 + self.n])[:, None]
        return TrajectorySpline(p - 1, p * (q[1:] - q[:-1]) / denom, t[1:-1])


def make_clamped_spline(p: int, control_points, t_in: float, t_f: float) -> TrajectorySpline:
    cp = np.asarray(control_points, dtype=float)
    if cp.ndim == 1:
        cp = cp[:, None]
    if len(cp) < p + 1:
        raise TooFewControlPoints(f"degree {p} needs at least {p + 1} control points, got {len(cp)}")
    if not t_f > t_in:
        raise NonpositiveDuration(f"t_f ({t_f}) must exceed t_in ({t_in})")
    return TrajectorySpline(p, cp, clamped_uniform_knots(p, len(cp), t_in, t_f))


def evaluate(spline: TrajectorySpline, t: float, k: int = 0) -> np.ndarray:
    """k-th derivative of the spline at ``t`` (k > degree gives zero)."""
    tol = 1e-9 * max(1.0, abs(spline.t_f))
    if t < spline.t_in - tol or t > spline.t_f + tol:
        raise OutOfDomain(f"t={t} outside [{spline.t_in}, {spline.t_f}]")
    if k > spline.degree:
        return np.zeros(spline.dim)
    if k == 0 and (t <= spline.t_in or t >= spline.t_f):
        # clamped ends interpolate exactly; skip the power-basis rounding
        return spline.control_points[0 if t <= spline.t_in else -1].copy()
    j = spline.interval_index(t)
    t0, t1 = spline.interval_times(j)
    h = t1 - t0
    u = (t - t0) / h
    c = spline.piece_coeffs(j)
    p = spline.degree
    out = np.zeros(spline.dim)
    for e in range(k, p + 1):
        out += c[e] * (math.factorial(e) / math.factorial(e - k)) * u ** (e - k)
    return out / h ** k


@dataclass(frozen=True)
class DerivedControlPoints:
    velocity: np.ndarray
    acceleration: np.ndarray | None = None
    jerk: np.ndarray | None = None


def derivative_control_points(spline: TrajectorySpline) -> DerivedControlPoints:
    """Control points of the derivative splines, down to degree 0."""
    if spline.degree < 1:
        raise ValueError("degree must be at least 1")
    chain = []
    s = spline
    while s.degree >= 1 and len(chain) < 3:
        s = s.derivative()
        chain.append(s.control_points)
    chain += [None] * (3 - len(chain))
    return DerivedControlPoints(*chain)


@dataclass(frozen=True)
class SegmentControlPoints:
    interval: int
    points: np.ndarray
    basis: str  # "BSPLINE" | "MINVO" | "BEZIER"


def segment_to_minvo(local_points, knots, p: int, j: int) -> SegmentControlPoints:
    """MINVO control points of interval ``j`` given its ``p + 1`` B-spline control points."""
    W = minvo_conversion(knots, p, j)
    return SegmentControlPoints(j, W @ np.asarray(local_points, dtype=float), "MINVO")


def segment_to_bezier(local_points, knots, p: int, j: int) -> SegmentControlPoints:
    W = bezier_conversion(knots, p, j)
    return SegmentControlPoints(j, W @ np.asarray(local_points, dtype=float), "BEZIER")


def spline_minvo_points(spline: TrajectorySpline) -> list[np.ndarray]:
    return [segment_to_minvo(spline.local_points(j), spline.knots, spline.degree, j).points
            for j in range(spline.n_intervals)]


def sample_times(spline: TrajectorySpline, n: int) -> np.ndarray:
    return np.linspace(spline.t_in, spline.t_f, n)


def evaluate_many(spline: TrajectorySpline, ts, k: int = 0) -> np.ndarray:
    return np.array([evaluate(spline, float(t), k) for t in ts])


def derivative_matrix(knots, p: int, n_ctrl: int) -> np.ndarray:
    """``D`` with ``D @ q`` the control points of the derivative spline (knots ``knots[1:-1]``)."""
    t = np.asarray(knots, dtype=float)
    c = p / (t[p + 1:p + n_ctrl] - t[1:n_ctrl])
    D = np.zeros((n_ctrl - 1, n_ctrl))
    idx = np.arange(n_ctrl - 1)
    D[idx, idx] = -c
    D[idx, idx + 1] = c
    return D
