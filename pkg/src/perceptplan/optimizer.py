"""Nonlinear program over the free spline control points.

Every constraint is affine in the decision vector once the separating planes
are fixed, so the problem is a smooth nonconvex cost over a polytope.  The
smoothness and terminal terms are quadratic; the perception reward is
integrated with composite Simpson nodes and differentiated through the
per-node kernel.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .geometry import GRAVITY, SINGULARITY_TOL
from .guess import PlanLayout
from .splines import basis_matrix


class OddSampleCount(ValueError):
    pass


class InfeasibleGuess(RuntimeError):
    pass


def simpson_weights(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2 or n % 2:
        raise OddSampleCount(f"Simpson's rule needs an even number of subintervals, got {n}")
    t = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return t, w * (b - a) / (3.0 * n)


def simpson_integrate(f, t_in: float, t_f: float, n: int) -> float:
    t, w = simpson_weights(t_in, t_f, n)
    return float(sum(wi * f(ti) for ti, wi in zip(t, w)))


@lru_cache(maxsize=64)
def _unit_quadrature(n_ctrl: int, n_simpson: int):
    """Simpson nodes, weights and evaluation matrices on the unit horizon ``[0, 1]``.

    Uniform clamped knots scale with the horizon, so a horizon ``T`` only
    rescales weights by ``T`` and k-th derivative rows by ``T**-k``.
    """
    lay = PlanLayout(0.0, 1.0, n_ctrl)
    ts, ws = [], []
    for j in range(lay.n_int):
        t, w = simpson_weights(lay.breaks[j], lay.breaks[j + 1], n_simpson)
        ts.append(t)
        ws.append(w)
    t = np.concatenate(ts)
    w = np.concatenate(ws)
    # merge the shared interval end points
    uniq, inv = np.unique(np.round(t, 12), return_inverse=True)
    tn = np.array([t[inv == k][0] for k in range(len(uniq))])
    wn = np.bincount(inv, weights=w)
    E = tuple(_piece_eval_matrix(lay.knots, 3, n_ctrl, tn, k) for k in range(4))
    F = tuple(_piece_eval_matrix(lay.knots_psi, 2, lay.n_psi, tn, k) for k in range(2))
    for arr in (tn, wn) + E + F:
        arr.setflags(write=False)
    return tn, wn, E, F


def _piece_eval_matrix(knots, p: int, n_ctrl: int, times, k: int) -> np.ndarray:
    """Rows map control points to the k-th derivative at ``times`` (intervals are half-open)."""
    p_knots = np.asarray(knots)
    n_int = n_ctrl - p
    breaks = p_knots[p:p + n_int + 1]
    E = np.zeros((len(times), n_ctrl))
    for r, t in enumerate(times):
        j = min(max(int(np.searchsorted(breaks, t, side="right")) - 1, 0), n_int - 1)
        h = breaks[j + 1] - breaks[j]
        u = (t - breaks[j]) / h
        mono = np.zeros(p + 1)
        for e in range(k, p + 1):
            c = 1.0
            for f in range(e - k + 1, e + 1):
                c *= f
            mono[e] = c * u ** (e - k)
        E[r, j:j + p + 1] = mono @ basis_matrix(knots, p, j) / h ** k
    return E


@dataclass
class Weights:
    alpha_j: float
    alpha_psi: float
    alpha_fov: float
    alpha_g: float
    eps: float
    gamma_vel: float


@dataclass
class OptimizedPlan:
    control_points: np.ndarray
    psi: np.ndarray
    cost: float
    guess_cost: float
    status: str  # "optimized" | "fallback"
    iterations: int = 0
    max_violation: float = 0.0
    solve_time: float = 0.0
    message: str = ""

    @property
    def fallback(self) -> bool:
        return self.status == "fallback"


class NlpProblem:
    """Cost, gradient and affine constraints for one replan.

    ``free_position`` / ``free_psi`` select which control points are decision
    variables; the others stay at ``Q_fixed`` / ``psi_fixed``.  The first three
    position and first two ψ control points, and the hover repetitions, are
    never free.
    """

    def __init__(self, layout: PlanLayout, cfg, Q_fixed, psi_fixed, goal, planes=None,
                 prediction=None, free_position: bool = True, free_psi: bool = True,
                 weights: Weights | None = None):
        self.layout = layout
        self.cfg = cfg
        self.Q_fixed = np.array(Q_fixed, dtype=float)
        self.psi_fixed = np.array(psi_fixed, dtype=float).ravel()
        self.goal = np.asarray(goal, dtype=float)
        self.planes = dict(planes or {})
        self.prediction = prediction
        self.free_position = free_position
        self.free_psi = free_psi
        self.w = weights or Weights(cfg.alpha_j, cfg.alpha_psi, cfg.alpha_fov, cfg.alpha_g,
                                    cfg.eps, cfg.gamma_vel)
        n = layout.n_ctrl
        self.n_qfree = (n - 5) if free_position else 0  # q3 .. q_{n-3}
        self.n_psifree = (layout.n_psi - 3) if free_psi else 0  # psi2 .. psi_{n_psi-2}
        self.dim = 3 * self.n_qfree + self.n_psifree
        self._build_quadrature()
        self._build_constraints()

    # --- decision vector <-> control points -------------------------------------------------

    def unpack(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x)
        Q = self.Q_fixed.astype(x.dtype, copy=True)
        psi = self.psi_fixed.astype(x.dtype, copy=True)
        if self.n_qfree:
            free = x[:3 * self.n_qfree].reshape(self.n_qfree, 3)
            Q[3:3 + self.n_qfree] = free
            Q[3 + self.n_qfree:] = free[-1]
        if self.n_psifree:
            f = x[3 * self.n_qfree:]
            psi[2:2 + self.n_psifree] = f
            psi[2 + self.n_psifree:] = f[-1]
        return Q, psi

    def pack(self, Q, psi) -> np.ndarray:
        parts = []
        if self.n_qfree:
            parts.append(np.asarray(Q)[3:3 + self.n_qfree].ravel())
        if self.n_psifree:
            parts.append(np.asarray(psi).ravel()[2:2 + self.n_psifree])
        return np.concatenate(parts) if parts else np.zeros(0)

    def _pullback(self, gQ, gpsi) -> np.ndarray:
        """Gradient w.r.t. the decision vector from gradients w.r.t. all control points."""
        parts = []
        if self.n_qfree:
            g = gQ[3:3 + self.n_qfree].copy()
            g[-1] += gQ[3 + self.n_qfree:].sum(axis=0)
            parts.append(g.ravel())
        if self.n_psifree:
            g = gpsi[2:2 + self.n_psifree].copy()
            g[-1] += gpsi[2 + self.n_psifree:].sum()
            parts.append(g)
        return np.concatenate(parts) if parts else np.zeros(0)

    # --- cost -----------------------------------------------------------------------------

    def _build_quadrature(self):
        lay, cfg = self.layout, self.cfg
        T = lay.duration
        tn, wn, E, F = _unit_quadrature(lay.n_ctrl, cfg.n_simpson)
        self.t_nodes = lay.t_in + T * tn
        self.w_nodes = T * wn
        tn = self.t_nodes
        self.E = [E[k] / T ** k for k in range(4)]
        self.F = [F[k] / T ** k for k in range(2)]
        self.dt = np.diff(lay.breaks)
        self.Dpsi2 = _second_diff(lay)
        self.cam_vec = kernels.camera_vector(cfg.camera())
        if self.prediction is not None:
            self.obs_p = np.asarray(self.prediction.mean(tn), dtype=float).reshape(-1, 3)
            self.obs_v = np.asarray(self.prediction.velocity(tn), dtype=float).reshape(-1, 3)

    def node_states(self, Q, psi) -> np.ndarray:
        X = np.zeros((len(self.t_nodes), 20))
        for k in range(4):
            X[:, 3 * k:3 * k + 3] = self.E[k] @ Q
        X[:, 12] = self.F[0] @ psi
        X[:, 13] = self.F[1] @ psi
        if self.prediction is not None:
            X[:, 14:17] = self.obs_p
            X[:, 17:20] = self.obs_v
        return X

    def pa_active(self) -> bool:
        return self.prediction is not None and self.w.alpha_fov > 0

    def terms(self, Q, psi) -> dict:
        w = self.w
        J = self.layout.Dj @ Q
        psidd = self.Dpsi2 @ psi
        out = {
            "jerk": float(np.sum(self.dt * np.sum(J * J, axis=1))),
            "psi": float(np.sum(self.dt * psidd * psidd)),
            "goal": float(np.sum((Q[-1] - self.goal) ** 2)),
            "pa": 0.0,
        }
        if self.pa_active():
            X = self.node_states(Q, psi)
            if _singular(X):
                out["pa"] = np.nan
            else:
                r, _ = kernels.pa_terms(X, self.cam_vec, w.eps, w.gamma_vel, False)
                out["pa"] = float(self.w_nodes @ r)
        return out

    def cost_cp(self, Q, psi) -> float:
        t = self.terms(Q, psi)
        if np.isnan(t["pa"]):
            return np.inf
        w = self.w
        return w.alpha_j * t["jerk"] + w.alpha_psi * t["psi"] + w.alpha_g * t["goal"] - w.alpha_fov * t["pa"]

    def cost(self, x) -> float:
        return self.cost_cp(*self.unpack(x))

    def gradient(self, x) -> np.ndarray:
        Q, psi = self.unpack(x)
        w = self.w
        Dj = self.layout.Dj
        gQ = 2.0 * w.alpha_j * Dj.T @ (self.dt[:, None] * (Dj @ Q))
        gQ[-1] += 2.0 * w.alpha_g * (Q[-1] - self.goal)
        gpsi = 2.0 * w.alpha_psi * self.Dpsi2.T @ (self.dt * (self.Dpsi2 @ psi))
        if self.pa_active():
            X = self.node_states(Q, psi)
            if not _singular(X):
                _, dr = kernels.pa_terms(X, self.cam_vec, w.eps, w.gamma_vel, True)
                dr = -w.alpha_fov * self.w_nodes[:, None] * dr
                for k in range(4):
                    gQ += self.E[k].T @ dr[:, 3 * k:3 * k + 3]
                gpsi += self.F[0].T @ dr[:, 12] + self.F[1].T @ dr[:, 13]
        return self._pullback(gQ, gpsi)

    # --- constraints ----------------------------------------------------------------------

    def constraint_values(self, Q, psi) -> np.ndarray:
        """All affine constraints as ``values <= 0``."""
        lay, cfg = self.layout, self.cfg
        rows = []
        for (i, j), pl in sorted(self.planes.items()):
            rows.append(lay.minvo_position(Q, j) @ pl.normal + pl.offset + cfg.separation_margin)
        V = lay.Dv @ Q
        for j in range(lay.n_int):
            mv = lay.minvo_velocity(V, j)
            rows.append((mv - cfg.v_max).ravel())
            rows.append((-mv - cfg.v_max).ravel())
        A = lay.Da @ Q
        rows += [(A - cfg.a_max).ravel(), (-A - cfg.a_max).ravel()]
        Jk = lay.Dj @ Q
        rows += [(Jk - cfg.j_max).ravel(), (-Jk - cfg.j_max).ravel()]
        P = lay.Dpsi @ psi
        rows += [P - cfg.psidot_max, -P - cfg.psidot_max]
        return np.concatenate(rows)

    def _build_constraints(self):
        x0 = np.zeros(self.dim)
        c0 = self.constraint_values(*self.unpack(x0))
        G = np.zeros((len(c0), self.dim))
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            G[:, k] = self.constraint_values(*self.unpack(e)) - c0
        active = np.any(G != 0.0, axis=1)
        # rows independent of the decision vector are only audited
        self.G, self.h = G[active], -c0[active]
        self.fixed_rows = c0[~active]

    def quadratic_hessian(self) -> np.ndarray:
        """Constant Hessian of the smoothness and terminal terms in decision space."""
        if getattr(self, "_Hq", None) is None:
            saved = self.w.alpha_fov
            self.w.alpha_fov = 0.0
            try:
                g0 = self.gradient(np.zeros(self.dim))
                H = np.column_stack([self.gradient(e) - g0 for e in np.eye(self.dim)])
            finally:
                self.w.alpha_fov = saved
            self._Hq = 0.5 * (H + H.T)
        return self._Hq

    def violation(self, x) -> float:
        v = self.constraint_values(*self.unpack(x))
        return float(max(v.max(initial=-np.inf), 0.0))


def _second_diff(layout: PlanLayout) -> np.ndarray:
    from .splines import derivative_matrix
    D2 = derivative_matrix(layout.knots_psi[1:-1], 1, layout.n_psi - 1)
    return D2 @ layout.Dpsi


def _singular(X) -> bool:
    if np.all(X[:, 8] > -GRAVITY):
        return False  # upward thrust component keeps 1 + xi_z/|xi| above 1
    xi = X[:, 6:9].copy()
    xi[:, 2] += GRAVITY
    n = np.linalg.norm(xi, axis=1)
    return bool(np.any(1.0 + xi[:, 2] / np.maximum(n, 1e-300) < SINGULARITY_TOL))


def evaluate_cost(x, problem: NlpProblem) -> float:
    return problem.cost(x)


def cost_gradient(x, problem: NlpProblem) -> np.ndarray:
    return problem.gradient(x)


def _polish(problem: NlpProblem, x, rounds: int = 5, act_tol: float = 1e-8) -> np.ndarray:
    """Newton steps on the active set using the quadratic-term Hessian.

    Exact for the convex case (no perception term); otherwise each step is
    kept only if it lowers the cost and stays feasible.
    """
    if not np.all(np.isfinite(x)):
        return x
    H = problem.quadratic_hessian()
    G, h = problem.G, problem.h
    f = problem.cost(x)
    for _ in range(rounds):
        g = problem.gradient(x)
        act = G[G @ x - h >= -act_tol] if len(G) else np.zeros((0, problem.dim))
        n, m = problem.dim, len(act)
        K = np.block([[H, act.T], [act, np.zeros((m, m))]])
        try:
            sol = np.linalg.lstsq(K, np.concatenate([-g, np.zeros(m)]), rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        dx = sol[:n]
        if np.linalg.norm(dx) < 1e-13:
            break
        step = 1.0
        improved = False
        while step > 1e-4:
            xn = x + step * dx
            if (len(G) == 0 or np.max(G @ xn - h) <= 1e-10):
                fn = problem.cost(xn)
                if fn <= f:
                    x, f, improved = xn, fn, True
                    break
            step *= 0.5
        if not improved:
            break
    return x


def solve(problem: NlpProblem, Q_guess, psi_guess, max_iter: int | None = None,
          ftol: float | None = None, feas_tol: float | None = None) -> OptimizedPlan:
    """Local solve from the guess with an audit; falls back to the guess when the audit fails."""
    cfg = problem.cfg
    max_iter = cfg.solver_max_iter if max_iter is None else max_iter
    ftol = cfg.solver_ftol if ftol is None else ftol
    feas_tol = cfg.feasibility_tol if feas_tol is None else feas_tol
    x0 = problem.pack(Q_guess, psi_guess)
    if problem.violation(x0) > feas_tol:
        raise InfeasibleGuess(f"guess violates constraints by {problem.violation(x0):.3g}")
    c0 = problem.cost(x0)
    t0 = time.perf_counter()
    if problem.dim == 0:
        Q, psi = problem.unpack(x0)
        return OptimizedPlan(Q, psi, c0, c0, "optimized", 0, problem.violation(x0), 0.0, "no free variables")
    G, h = problem.G, problem.h
    cons = [{"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G}] if len(G) else []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(problem.cost, x0, jac=problem.gradient, method="SLSQP", constraints=cons,
                       options={"maxiter": max_iter, "ftol": ftol})
    x = _polish(problem, res.x)
    elapsed = time.perf_counter() - t0
    viol = problem.violation(x)
    c = problem.cost(x)
    if not np.all(np.isfinite(x)) or viol > feas_tol or not c <= c0 + 1e-9:
        Q, psi = problem.unpack(x0)
        return OptimizedPlan(Q, psi, c0, c0, "fallback", int(res.nit), problem.violation(x0), elapsed,
                             f"audit failed: violation {viol:.3g}, cost {c:.6g} vs guess {c0:.6g}; {res.message}")
    Q, psi = problem.unpack(x)
    return OptimizedPlan(Q, psi, c, c0, "optimized", int(res.nit), viol, elapsed, str(res.message))
