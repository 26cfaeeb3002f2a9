"""Obstacle tracking from point clouds: clustering, assignment and polynomial prediction.

Each track keeps a sliding window of cluster centroids.  A per-axis
least-squares polynomial gives the predicted mean, and the regression
prediction interval gives a per-axis standard deviation, so the predicted
position is ``N(mean(t), diag(sigma(t))^2)``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.special import ndtri


class EmptyCloud(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class IllConditioned(ValueError):
    pass


class OutOfRange(ValueError):
    pass


def norminv(delta: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < delta < 1.0:
        raise OutOfRange(f"delta must lie in (0, 1), got {delta}")
    return float(ndtri(delta))


@dataclass(frozen=True)
class PointCloudSnapshot:
    timestamp: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Cluster:
    centroid: np.ndarray
    count: int
    lower: np.ndarray
    upper: np.ndarray
    indices: np.ndarray

    @property
    def half_sides(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


def cluster(snapshot: PointCloudSnapshot, cluster_tolerance: float) -> list[Cluster]:
    """Euclidean clustering: connected components of the ``tolerance``-neighbour graph."""
    pts = snapshot.points
    n = len(pts)
    if n == 0:
        raise EmptyCloud("point cloud is empty")
    pairs = cKDTree(pts).query_pairs(cluster_tolerance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    out = []
    # order clusters by their first point so the output is deterministic
    _, first = np.unique(labels, return_index=True)
    for lab in labels[np.sort(first)]:
        idx = np.flatnonzero(labels == lab)
        p = pts[idx]
        out.append(Cluster(p.mean(axis=0), len(idx), p.min(axis=0), p.max(axis=0), idx))
    return out


@dataclass(frozen=True)
class PredictedTrajectory:
    """Gaussian prediction with polynomial mean; time enters as ``t - t_ref``.

    ``coeffs`` has shape ``(3, degree + 1)`` in ascending powers.
    """

    coeffs: np.ndarray
    t_ref: float
    sigma_hat: np.ndarray
    cov_factor: np.ndarray
    valid_until: float
    half_sides: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_last_obs: float | None = None

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def _features(self, t, k=0):
        tau = np.asarray(t, dtype=float) - self.t_ref
        d = self.degree
        cols = []
        for e in range(d + 1):
            if e < k:
                cols.append(np.zeros_like(tau))
            else:
                cols.append(math.factorial(e) / math.factorial(e - k) * tau ** (e - k))
        return np.stack(cols, axis=-1)

    def mean(self, t) -> np.ndarray:
        return self._features(t) @ self.coeffs.T

    def velocity(self, t) -> np.ndarray:
        return self._features(t, 1) @ self.coeffs.T

    def sigma(self, t) -> np.ndarray:
        x = self._features(t)
        lev = np.einsum("...i,ij,...j->...", x, self.cov_factor, x)
        return np.sqrt(1.0 + lev)[..., None] * self.sigma_hat


@dataclass
class Track:
    id: int
    window: deque
    half_sides: np.ndarray
    missed: int = 0

    def add(self, t: float, centroid, half_sides) -> None:
        self.window.append((float(t), np.asarray(centroid, dtype=float)))
        self.half_sides = np.maximum(self.half_sides, half_sides)
        self.missed = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([w[0] for w in self.window])

    @property
    def centroids(self) -> np.ndarray:
        return np.array([w[1] for w in self.window])


def fit_and_predict(track: Track, poly_degree: int, horizon: float,
                    max_condition: float = 1e12) -> PredictedTrajectory:
    """Per-axis least-squares polynomial fit with regression prediction intervals.

    ``sigma_axis(t) = s * sqrt(1 + x(t)^T (X^T X)^-1 x(t))`` where ``s`` is the
    residual standard error of that axis and ``x(t)`` the monomial features.
    Falls back to lower degrees while ``X^T X`` is ill-conditioned.
    """
    ts, ys = track.times, track.centroids
    if len(ts) < poly_degree + 2:
        raise InsufficientHistory(f"need {poly_degree + 2} observations, have {len(ts)}")
    t_ref = float(ts[-1])
    tau = ts - t_ref
    for deg in range(poly_degree, -1, -1):
        X = np.vander(tau, deg + 1, increasing=True)
        XtX = X.T @ X
        if np.linalg.cond(XtX) <= max_condition:
            break
    else:
        raise IllConditioned("normal matrix ill-conditioned even for a constant fit")
    XtX_inv = np.linalg.inv(XtX)
    coeffs = (XtX_inv @ X.T @ ys).T
    resid = ys - X @ coeffs.T
    dof = len(ts) - (deg + 1)
    sigma_hat = np.sqrt((resid ** 2).sum(axis=0) / dof)
    return PredictedTrajectory(coeffs, t_ref, sigma_hat, XtX_inv, t_ref + horizon,
                               track.half_sides.copy(), t_ref)


def constant_prediction(position, t_ref: float, sigma: float, horizon: float,
                        half_sides=None) -> PredictedTrajectory:
    """Stationary prediction with a fixed isotropic spread (for fresh tracks)."""
    return PredictedTrajectory(np.asarray(position, dtype=float).reshape(3, 1), t_ref,
                               np.full(3, float(sigma)), np.zeros((1, 1)), t_ref + horizon,
                               np.zeros(3) if half_sides is None else np.asarray(half_sides), t_ref)


def assign(clusters, predicted_positions, threshold_dist: float):
    """Match clusters to tracks minimizing total centroid-to-prediction distance.

    ``predicted_positions`` is a ``(n_tracks, 3)`` array of track predictions at
    the snapshot time.  Returns ``(matches, new)`` where ``matches`` maps cluster
    index to track index and ``new`` lists the cluster indices that spawn tracks.
    """
    nc = len(clusters)
    pred = np.asarray(predicted_positions, dtype=float).reshape(-1, 3)
    if nc == 0:
        return {}, []
    if len(pred) == 0:
        return {}, list(range(nc))
    cents = np.array([c.centroid if isinstance(c, Cluster) else c for c in clusters], dtype=float)
    cost = np.linalg.norm(cents[:, None, :] - pred[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    matches = {int(r): int(c) for r, c in zip(rows, cols) if cost[r, c] <= threshold_dist}
    new = [i for i in range(nc) if i not in matches]
    return matches, new


@dataclass
class TrackerConfig:
    cluster_tolerance: float = 0.5
    new_track_threshold: float = 1.5
    poly_degree: int = 2
    window: int = 20
    expiry: int = 10
    horizon: float = 4.0
    fresh_sigma: float = 0.5


class Tracker:
    """Single-writer tracker; :meth:`predictions` hands out immutable snapshots."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 0
        self._last_t = -math.inf

    def _predict(self, track: Track) -> PredictedTrajectory:
        cfg = self.config
        n = len(track.window)
        deg = min(cfg.poly_degree, n - 2)
        if deg < 0:
            t, c = track.window[-1]
            return constant_prediction(c, t, cfg.fresh_sigma, cfg.horizon, track.half_sides)
        return fit_and_predict(track, deg, cfg.horizon)

    def ingest(self, snapshot: PointCloudSnapshot) -> None:
        if snapshot.timestamp <= self._last_t:
            raise ValueError("snapshot timestamps must be strictly increasing")
        self._last_t = snapshot.timestamp
        cfg = self.config
        clusters = cluster(snapshot, cfg.cluster_tolerance) if len(snapshot.points) else []
        preds = np.array([self._predict(tr).mean(snapshot.timestamp) for tr in self.tracks]).reshape(-1, 3)
        matches, new = assign(clusters, preds, cfg.new_track_threshold)
        hit = set()
        for ci, ti in matches.items():
            c = clusters[ci]
            self.tracks[ti].add(snapshot.timestamp, c.centroid, c.half_sides)
            hit.add(ti)
        for ti, tr in enumerate(self.tracks):
            if ti not in hit:
                tr.missed += 1
        for ci in new:
            c = clusters[ci]
            tr = Track(self._next_id, deque(maxlen=cfg.window), np.zeros(3))
            tr.add(snapshot.timestamp, c.centroid, c.half_sides)
            self._next_id += 1
            self.tracks.append(tr)
        self.tracks = [tr for tr in self.tracks if tr.missed <= cfg.expiry]

    def predictions(self) -> dict[int, PredictedTrajectory]:
        return {tr.id: self._predict(tr) for tr in self.tracks}


def write_snapshots(path, snapshots) -> None:
    """Replay format: one point per line ``t x y z``; a bare ``t`` line is an empty snapshot."""
    with open(path, "w") as fh:
        fh.write("# t x y z\n")
        for snap in snapshots:
            t = repr(float(snap.timestamp))
            if len(snap.points) == 0:
                fh.write(f"{t}\n")
            for p in snap.points.tolist():
                fh.write(f"{t} {p[0]!r} {p[1]!r} {p[2]!r}\n")


def read_snapshots(path) -> list[PointCloudSnapshot]:
    groups: dict[float, list] = {}
    order: list[float] = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        vals = [float(v) for v in line.split()]
        t = vals[0]
        if t not in groups:
            groups[t] = []
            order.append(t)
        if len(vals) == 4:
            groups[t].append(vals[1:])
        elif len(vals) != 1:
            raise ValueError(f"malformed replay line: {line!r}")
    return [PointCloudSnapshot(t, np.array(groups[t]).reshape(-1, 3)) for t in order]
