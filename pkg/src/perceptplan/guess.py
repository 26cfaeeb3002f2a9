"""Initial guesses: control-point search for position plus planes, layered yaw graph for ψ."""

from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corridor import find_separating_plane
from .splines import (TrajectorySpline, basis_matrix, clamped_uniform_knots, derivative_matrix,
                      minvo_conversion)


class NoPathFound(RuntimeError):
    pass


class SingularKKT(RuntimeWarning):
    pass


class PlanLayout:
    """Knots and linear maps shared by the searches, the optimizer and the audit.

    Position: degree 3 with ``n_ctrl`` control points.  ψ: degree 2 with
    ``n_ctrl - 1`` control points on the same interval times.
    """

    def __init__(self, t_in: float, t_f: float, n_ctrl: int = 9):
        self.t_in, self.t_f, self.n_ctrl = float(t_in), float(t_f), n_ctrl
        self.n_int = n_ctrl - 3
        self.n_psi = n_ctrl - 1
        self.knots = clamped_uniform_knots(3, n_ctrl, t_in, t_f)
        self.knots_psi = clamped_uniform_knots(2, self.n_psi, t_in, t_f)
        self.breaks = np.linspace(t_in, t_f, self.n_int + 1)
        self.Dv = derivative_matrix(self.knots, 3, n_ctrl)
        self.Da1 = derivative_matrix(self.knots[1:-1], 2, n_ctrl - 1)
        Dj1 = derivative_matrix(self.knots[2:-2], 1, n_ctrl - 2)
        self.Da = self.Da1 @ self.Dv
        self.Dj = Dj1 @ self.Da
        self.Dpsi = derivative_matrix(self.knots_psi, 2, self.n_psi)
        self.W_pos = [minvo_conversion(self.knots, 3, j) for j in range(self.n_int)]
        self.W_vel = [minvo_conversion(self.knots[1:-1], 2, j) for j in range(self.n_int)]

    @property
    def duration(self) -> float:
        return self.t_f - self.t_in

    def start_points(self, p0, v0, a0) -> np.ndarray:
        """First three position control points fixed by the initial state."""
        cv, cv1, ca = self.Dv[0, 1], self.Dv[1, 2], self.Da1[0, 1]
        q0 = np.asarray(p0, dtype=float)
        q1 = q0 + np.asarray(v0, dtype=float) / cv
        v1 = np.asarray(v0, dtype=float) + np.asarray(a0, dtype=float) / ca
        q2 = q1 + v1 / cv1
        return np.array([q0, q1, q2])

    def psi_start(self, psi0: float, psidot0: float) -> np.ndarray:
        return np.array([psi0, psi0 + psidot0 / self.Dpsi[0, 1]])

    def position_spline(self, Q) -> TrajectorySpline:
        return TrajectorySpline(3, Q, self.knots)

    def psi_spline(self, psi) -> TrajectorySpline:
        return TrajectorySpline(2, np.asarray(psi, dtype=float).reshape(-1, 1), self.knots_psi)

    def minvo_position(self, Q, j: int) -> np.ndarray:
        return self.W_pos[j] @ Q[j:j + 4]

    def minvo_velocity(self, V, j: int) -> np.ndarray:
        return self.W_vel[j] @ V[j:j + 3]


@dataclass
class Limits:
    v_max: np.ndarray
    a_max: np.ndarray
    j_max: np.ndarray
    psidot_max: float = math.inf

    @classmethod
    def from_config(cls, cfg) -> "Limits":
        return cls(cfg.v_max, cfg.a_max, cfg.j_max, cfg.psidot_max)


@dataclass
class PositionGuess:
    control_points: np.ndarray
    planes: dict = field(default_factory=dict)  # (obstacle index, interval) -> SeparatingPlane
    expanded: int = 0
    generated: int = 0


def audit_position(layout: PlanLayout, Q, limits: Limits, planes=None, margin: float = 0.0,
                   tol: float = 1e-6, start=None) -> list[str]:
    """Independent check of every linear constraint; returns a list of violations."""
    Q = np.asarray(Q, dtype=float)
    bad = []
    V = layout.Dv @ Q
    for j in range(layout.n_int):
        if np.any(np.abs(layout.minvo_velocity(V, j)) > limits.v_max + tol):
            bad.append(f"velocity interval {j}")
    if np.any(np.abs(layout.Da @ Q) > limits.a_max + tol):
        bad.append("acceleration")
    if np.any(np.abs(layout.Dj @ Q) > limits.j_max + tol):
        bad.append("jerk")
    if not (np.allclose(Q[-1], Q[-2], atol=1e-12) and np.allclose(Q[-2], Q[-3], atol=1e-12)):
        bad.append("terminal hover")
    if start is not None and not np.allclose(Q[:3], start, atol=1e-9):
        bad.append("initial state")
    for (i, j), pl in (planes or {}).items():
        if np.any(pl.side(layout.minvo_position(Q, j)) > -margin + tol):
            bad.append(f"plane obstacle {i} interval {j}")
    return bad


def audit_psi(layout: PlanLayout, psi, psidot_max: float, tol: float = 1e-6) -> list[str]:
    psi = np.asarray(psi, dtype=float).ravel()
    bad = []
    if np.any(np.abs(layout.Dpsi @ psi) > psidot_max + tol):
        bad.append("psidot")
    if abs(psi[-1] - psi[-2]) > 1e-12:
        bad.append("terminal psidot")
    return bad


def box_from_affine(g0, slope, bound):
    """Per-axis interval of ``x`` with ``|g0 + slope * x| <= bound`` on every row, or ``(None, None)``.

    ``g0``, ``slope`` and ``bound`` have shape ``(rows, 3)``.
    """
    flat = np.abs(slope) < 1e-14
    if np.any(flat & (np.abs(g0) > bound)):
        return None, None
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (-bound - g0) / slope
        b = (bound - g0) / slope
    lo = np.max(np.where(flat, -np.inf, np.minimum(a, b)), axis=0)
    hi = np.min(np.where(flat, np.inf, np.maximum(a, b)), axis=0)
    if np.any(lo > hi) or not np.all(np.isfinite(lo) & np.isfinite(hi)):
        return None, None
    return lo, hi


def octopus_search(layout: PlanLayout, start_state, goal, hulls, limits: Limits,
                   samples_per_axis: int = 9, budget: int = 50_000, margin: float = 1e-3,
                   jerk_weight: float = 1e-3) -> PositionGuess:
    """Best-first search over the free position control points.

    ``start_state`` is ``(p, v, a)``; ``hulls[i][j]`` is the hull of obstacle ``i``
    over interval ``j``.  Each depth appends one control point chosen from a
    velocity-control-point grid.  A few extra samples are projected into the
    exact per-axis box allowed by the limits: the one aimed at the goal, the
    zero-jerk and zero-acceleration continuations, and the box center.
    The final free point is repeated twice for the hover condition.  Nodes are
    ordered by ``jerk_weight * sum |jerk|^2 dt + |q - goal|``; separation is
    tested lazily when a node is popped.  ``budget`` bounds the number of
    generated nodes.
    """
    goal = np.asarray(goal, dtype=float)
    n = layout.n_ctrl
    start = layout.start_points(*start_state)
    n_free = n - 5  # q3 .. q_{n-3}
    last_depth = n_free
    grid1 = np.linspace(-1.0, 1.0, samples_per_axis)
    base = np.array(list(itertools.product(grid1, grid1, grid1)))
    Dv, Da, Dj = layout.Dv, layout.Da, layout.Dj
    dt_int = np.diff(layout.breaks)
    tol = 1e-9

    def completed_intervals(depth):
        # depth d means control points q0..q_{2+d} are set
        if depth < last_depth:
            return [depth - 1]
        return list(range(depth - 1, layout.n_int))

    def full_points(prefix):
        # repeat the last point for the hover condition when the prefix is complete
        return np.vstack([prefix, prefix[-1], prefix[-1]])

    def accel_jerk(Qc, k, final):
        width = Qc.shape[1]
        if final:
            return (Da[:, :width] @ Qc)[:, k - 2:], (Dj[:, :width] @ Qc)[:, k - 3:]
        return Da[k - 2:k - 1, :width] @ Qc, Dj[k - 3:k - 2, :width] @ Qc

    def dyn_values(prefix, cand, final):
        """Stacked (accel, jerk, MINVO velocity) values of the new intervals and their bounds."""
        k = len(prefix)
        m = len(cand)
        Qc = np.concatenate([np.broadcast_to(prefix, (m,) + prefix.shape),
                             np.repeat(cand[:, None, :], 3 if final else 1, axis=1)], axis=1)
        a_new, j_new = accel_jerk(Qc, k, final)
        V = Dv[:, :Qc.shape[1]] @ Qc
        rows = range(k - 3, layout.n_int) if final else [k - 3]
        mv = np.concatenate([layout.W_vel[jv] @ V[:, jv:jv + 3] for jv in rows], axis=1)
        vals = np.concatenate([a_new, j_new, mv], axis=1)
        bound = np.concatenate([np.broadcast_to(limits.a_max, a_new.shape[1:]),
                                np.broadcast_to(limits.j_max, j_new.shape[1:]),
                                np.broadcast_to(limits.v_max, mv.shape[1:])])
        return vals, bound

    # one node per (depth, voxel of the newest control point)
    voxel = np.maximum(2 * limits.v_max / max(samples_per_axis - 1, 1) / Dv[2, 3], 1e-6)
    closed = set()
    counter = itertools.count()
    heap = [(float(np.linalg.norm(start[-1] - goal)), next(counter), 0, start, 0.0, {})]
    generated = 1
    expanded = 0
    while heap:
        _, _, depth, prefix, jcost, planes = heapq.heappop(heap)
        expanded += 1
        # lazy separation check for the intervals completed by this node
        if depth > 0:
            Q = full_points(prefix) if depth == last_depth else prefix
            new_planes = dict(planes)
            ok = True
            for j in completed_intervals(depth):
                pts = layout.minvo_position(Q, j)
                for i, per_obs in enumerate(hulls):
                    pl = find_separating_plane(pts, per_obs[j], margin)
                    if not pl:
                        ok = False
                        break
                    new_planes[(i, j)] = pl
                if not ok:
                    break
            if not ok:
                continue
            planes = new_planes
            if depth == last_depth:
                return PositionGuess(Q, planes, expanded, generated)
        if generated >= budget:
            continue
        # expand: next control point index k = 3 + depth
        k = 3 + depth
        inv_c = 1.0 / Dv[k - 1, k]
        final = depth + 1 == last_depth
        q_prev = prefix[-1]
        # limit checks are affine in the new point and separable per axis: probe at offsets 0 and 1
        g0, bound = dyn_values(prefix, q_prev[None], final)
        g1, _ = dyn_values(prefix, q_prev[None] + 1.0, final)
        slope = g1[0] - g0[0]
        lo, hi = box_from_affine(g0[0], slope, bound + tol)
        extra = [q_prev + np.clip((goal - q_prev) / inv_c, -limits.v_max, limits.v_max) * inv_c]
        for D, row in ((Dj, k - 3), (Da, k - 2)):
            extra.append(-(D[row, :k] @ prefix) / D[row, k])
        if lo is not None:
            extra = [np.clip(q, q_prev + lo, q_prev + hi) for q in extra] + [q_prev + 0.5 * (lo + hi)]
        cand = np.vstack([q_prev + base * limits.v_max * inv_c, extra])
        m = len(cand)
        Qc = np.concatenate([np.broadcast_to(prefix, (m,) + prefix.shape),
                             np.repeat(cand[:, None, :], 3 if final else 1, axis=1)], axis=1)
        vals, _ = dyn_values(prefix, cand, final)
        keep = np.all(np.abs(vals) <= bound + tol, axis=(1, 2))
        a_new, j_new = accel_jerk(Qc, k, final)
        # cheap rejection: any MINVO point of a newly completed interval inside a hull
        for jp in completed_intervals(depth + 1):
            P = layout.W_pos[jp] @ Qc[:, jp:jp + 4]
            for per_obs in hulls:
                eq = per_obs[jp].equations
                if len(eq):
                    inside = np.all(P @ eq[:, :3].T + eq[:, 3] <= margin, axis=-1)
                    keep &= ~inside.any(axis=1)
        if not keep.any():
            continue
        jc = jcost + jerk_weight * np.einsum("mrd,mrd->m", j_new, j_new) * dt_int[k - 3] \
            if depth + 1 < last_depth else \
            jcost + jerk_weight * np.einsum("mrd,mrd,r->m", j_new, j_new, dt_int[k - 3:])
        idxs = np.flatnonzero(keep)
        pris = jc[idxs] + np.linalg.norm(cand[idxs] - goal, axis=1)
        for idx in idxs[np.argsort(pris, kind="stable")]:
            key = (depth + 1,) + tuple(np.floor(cand[idx] / voxel).astype(int))
            if key in closed:
                continue
            closed.add(key)
            pri = float(jc[idx] + np.linalg.norm(cand[idx] - goal))
            heapq.heappush(heap, (pri, next(counter), depth + 1,
                                  Qc[idx, :k + 1], float(jc[idx]), planes))
            generated += 1
    raise NoPathFound(f"search exhausted after {expanded} expansions, {generated} nodes")


# ---------------------------------------------------------------------------
# yaw


def wrap(a):
    """Wrap angles to ``[-pi, pi)``."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def unwrap_angles(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.size == 0:
        raise ValueError("empty sequence")
    out = psi.copy()
    for k in range(1, len(out)):
        d = out[k] - out[k - 1]
        out[k] -= 2 * np.pi * np.round(d / (2 * np.pi))
        # round-half-even can leave |d| = pi + ulp; push into range
        if out[k] - out[k - 1] > np.pi:
            out[k] -= 2 * np.pi
        elif out[k] - out[k - 1] < -np.pi:
            out[k] += 2 * np.pi
    return out


@dataclass
class YawPath:
    indices: list  # sample index per layer (layers 1..L)
    psi: np.ndarray  # root followed by one ψ per layer
    cost: float  # unshifted path cost


def yaw_edge_cost(psi1, psi2, infov2, dt, c_psi, c_psidot_max, c_fov, psidot_max):
    w = wrap(np.asarray(psi2) - np.asarray(psi1))
    return c_psi * w * w + c_psidot_max * (np.abs(w) / dt > psidot_max) - c_fov * np.asarray(infov2)


def yaw_graph_search(psi_root: float, psi_samples, infov, dts, c_psi: float, c_psidot_max: float,
                     c_fov: float, psidot_max: float) -> YawPath:
    """Dijkstra from the root to the first settled last-layer node.

    ``psi_samples[l]`` and ``infov[l]`` hold the samples and visibility of layer
    ``l + 1``; ``dts[l]`` is the time step into that layer.  Every edge is
    shifted by ``+c_fov`` so weights are non-negative; all root-to-leaf paths
    have the same length, so the argmin is unchanged.
    """
    psi_samples = [np.asarray(s, dtype=float) for s in psi_samples]
    infov = [np.asarray(v, dtype=float) for v in infov]
    L = len(psi_samples)
    if L == 0 or any(len(s) == 0 for s in psi_samples):
        raise NoPathFound("empty yaw graph")
    dist = {(-1, 0): 0.0}
    parent = {}
    heap = [(0.0, -1, 0)]
    done = set()
    while heap:
        d, layer, idx = heapq.heappop(heap)
        if (layer, idx) in done:
            continue
        done.add((layer, idx))
        if layer == L - 1:
            path = [idx]
            node = (layer, idx)
            while parent[node][0] >= 0:
                node = parent[node]
                path.append(node[1])
            path.reverse()
            psis = np.array([psi_root] + [psi_samples[l][i] for l, i in enumerate(path)])
            return YawPath(path, psis, d - c_fov * L)
        src = psi_root if layer < 0 else psi_samples[layer][idx]
        nxt = layer + 1
        w = yaw_edge_cost(src, psi_samples[nxt], infov[nxt], dts[nxt], c_psi, c_psidot_max,
                          c_fov, psidot_max) + c_fov
        for k, wk in enumerate(w):
            nd = d + float(wk)
            key = (nxt, k)
            if key not in done and nd < dist.get(key, math.inf):
                dist[key] = nd
                parent[key] = (layer, idx)
                heapq.heappush(heap, (nd, nxt, k))
    raise NoPathFound("last layer unreachable")


def fit_yaw_spline(times, psi, psi_in: float, psidot_in: float, layout: PlanLayout,
                   reg: float = 1e-9) -> np.ndarray:
    """Least-squares ψ control points with ψ(t_in), ψ'(t_in) and ψ'(t_f) = 0 imposed via KKT."""
    times = np.asarray(times, dtype=float)
    y = np.asarray(psi, dtype=float)
    n = layout.n_psi
    basis = np.zeros((len(times), n))
    sp = layout.psi_spline(np.zeros(n))
    for r, t in enumerate(times):
        j = sp.interval_index(t)
        t0, t1 = sp.interval_times(j)
        u = (t - t0) / (t1 - t0)
        coeffs_to_vals = np.array([1.0, u, u * u]) @ basis_matrix(layout.knots_psi, 2, j)
        basis[r, j:j + 3] = coeffs_to_vals
    C = np.zeros((3, n))
    C[0, 0] = 1.0
    C[1] = layout.Dpsi[0]
    C[2] = layout.Dpsi[-1]
    e = np.array([psi_in, psidot_in, 0.0])
    K = np.block([[2 * basis.T @ basis, C.T], [C, np.zeros((3, 3))]])
    rhs = np.concatenate([2 * basis.T @ y, e])
    if np.linalg.matrix_rank(K) < K.shape[0]:
        warnings.warn("KKT system is rank deficient; regularizing", SingularKKT, stacklevel=2)
        K = K + reg * np.diag(np.r_[np.ones(n), -np.ones(3)])
    sol = np.linalg.solve(K, rhs)
    return sol[:n]


def constant_psi(layout: PlanLayout, psi_in: float, psidot_in: float) -> np.ndarray:
    """ψ control points holding the commit-point angle after the forced first step."""
    s = layout.psi_start(psi_in, psidot_in)
    return np.concatenate([s, np.full(layout.n_psi - 2, s[1])])


def repair_psi(layout: PlanLayout, psi, psi_in: float, psidot_in: float, psidot_max: float,
               tol: float = 1e-9) -> np.ndarray:
    """Blend toward :func:`constant_psi` until every ψ' control point is within the bound."""
    base = constant_psi(layout, psi_in, psidot_in)
    psi = np.asarray(psi, dtype=float)
    r0, r1 = layout.Dpsi @ base, layout.Dpsi @ psi
    if np.all(np.abs(r1) <= psidot_max + tol):
        return psi
    # largest lam in [0, 1] with |r0 + lam (r1 - r0)| <= bound, per row (r0 feasible or left as is)
    lam = 1.0
    d = r1 - r0
    for a, b in zip(r0, d):
        if b > 0:
            lam = min(lam, max(0.0, (psidot_max - a) / b))
        elif b < 0:
            lam = min(lam, max(0.0, (-psidot_max - a) / b))
    return base + lam * (psi - base)


def node_infov(p, a, psi, po, cam) -> np.ndarray:
    """Smooth in-FOV value of obstacle positions ``po`` seen from states ``(p, a, psi)``."""
    p, a, po = (np.atleast_2d(x) for x in (p, a, po))
    psi = np.atleast_1d(psi)
    N = max(len(p), len(psi))
    X = np.zeros((N, 20))
    X[:, 0:3] = p
    X[:, 6:9] = a
    X[:, 12] = psi
    X[:, 14:17] = po
    _, _, pc = kernels.projection_batch(X, kernels.camera_vector(cam))
    rng = np.linalg.norm(pc, axis=1)
    arg = cam.gamma_sig * (pc[:, 2] / np.maximum(rng, 1e-300) - math.cos(cam.theta / 2))
    return 0.5 * (1.0 + np.tanh(0.5 * arg))


def yaw_guess(layout: PlanLayout, Q, prediction, psi_in: float, psidot_in: float, cfg) -> tuple:
    """Yaw graph over the position guess, unwrapped and fitted to a ψ spline.

    Returns ``(psi_control_points, YawPath)``.  ``prediction`` may be ``None``
    (no obstacle), giving the constant-ψ solution.
    """
    n_layer = layout.n_int + 1
    times = np.linspace(layout.t_in, layout.t_f, n_layer)
    sp = layout.position_spline(Q)
    P = np.array([sp.evaluate(t) for t in times[1:]])
    A = np.array([sp.evaluate(t, 2) for t in times[1:]])
    samples = np.linspace(-np.pi, np.pi, cfg.n_psi, endpoint=False)
    cam = cfg.camera()
    L = n_layer - 1
    # offsetting the grid by the root angle makes "hold ψ" an available choice
    psi_grid = [wrap(samples + psi_in) for _ in range(L)]
    infov = [np.zeros(cfg.n_psi)] * L
    if prediction is not None:
        po = prediction.mean(times[1:])
        infov = []
        for l in range(L):
            infov.append(node_infov(np.repeat(P[l:l + 1], cfg.n_psi, 0), np.repeat(A[l:l + 1], cfg.n_psi, 0),
                                    psi_grid[l], np.repeat(po[l:l + 1], cfg.n_psi, 0), cam))
    dts = np.diff(times)
    path = yaw_graph_search(float(wrap(psi_in)), psi_grid, infov, dts, cfg.c_psi, cfg.c_psidot_max,
                            cfg.c_fov, cfg.psidot_max)
    psis = unwrap_angles(path.psi)
    psis = psis - psis[0] + psi_in  # keep the commit angle's branch
    ctrl = fit_yaw_spline(times, psis, psi_in, psidot_in, layout)
    ctrl = repair_psi(layout, ctrl, psi_in, psidot_in, cfg.psidot_max)
    return ctrl, path


__all__ = [
    "NoPathFound", "SingularKKT", "PlanLayout", "Limits", "PositionGuess", "audit_position",
    "audit_psi", "octopus_search", "wrap", "unwrap_angles", "YawPath", "yaw_edge_cost",
    "yaw_graph_search", "fit_yaw_spline", "constant_psi", "repair_psi", "node_infov", "yaw_guess",
]
