"""Receding-horizon replanning: commit point, goal projection, obstacle choice and splicing."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .corridor import HorizonExceeded, build_obstacle_hull
from .guess import (Limits, NoPathFound, PlanLayout, audit_position, audit_psi, constant_psi,
                    octopus_search, yaw_guess)
from .optimizer import InfeasibleGuess, NlpProblem, Weights, solve
from .splines import TrajectorySpline, evaluate


class Mode(str, enum.Enum):
    NO_PA = "NO_PA"
    DECOUPLED = "DECOUPLED"
    COUPLED = "COUPLED"

    @classmethod
    def parse(cls, s) -> "Mode":
        return s if isinstance(s, cls) else cls(str(s).upper().replace("-", "_"))


class NoObstacles(ValueError):
    pass


@dataclass(frozen=True)
class AgentState:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    psi: float
    psidot: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.a, [self.psi, self.psidot]])

    @classmethod
    def hover(cls, p, psi: float = 0.0) -> "AgentState":
        return cls(np.asarray(p, dtype=float), np.zeros(3), np.zeros(3), float(psi), 0.0)


@dataclass(frozen=True)
class TrajectoryPiece:
    t_start: float
    position: TrajectorySpline
    psi: TrajectorySpline
    plan_id: int = 0

    @property
    def t_f(self) -> float:
        return self.position.t_f


class CommittedTrajectory:
    """Pieces spliced at their start times; after the last piece ends the agent hovers."""

    def __init__(self, pieces=None, initial: AgentState | None = None):
        self.pieces: list[TrajectoryPiece] = list(pieces or [])
        self.initial = initial

    @classmethod
    def hovering(cls, state: AgentState) -> "CommittedTrajectory":
        return cls([], state)

    def piece_at(self, t: float):
        for pc in reversed(self.pieces):
            if pc.t_start <= t:
                return pc
        return None

    def plan_id(self, t: float) -> int:
        pc = self.piece_at(t)
        return -1 if pc is None else pc.plan_id

    def state(self, t: float, jerk: bool = False):
        pc = self.piece_at(t)
        if pc is None:
            s = self.initial
            return (s, np.zeros(3)) if jerk else s
        if t >= pc.t_f:
            p = evaluate(pc.position, pc.t_f)
            psi = float(evaluate(pc.psi, pc.t_f)[0])
            s = AgentState(p, np.zeros(3), np.zeros(3), psi, 0.0)
            return (s, np.zeros(3)) if jerk else s
        pos, ps = pc.position, pc.psi
        s = AgentState(evaluate(pos, t), evaluate(pos, t, 1), evaluate(pos, t, 2),
                       float(evaluate(ps, t)[0]), float(evaluate(ps, t, 1)[0]))
        return (s, evaluate(pos, t, 3)) if jerk else s

    def splice(self, piece: TrajectoryPiece, now: float | None = None) -> None:
        self.pieces = [pc for pc in self.pieces if pc.t_start < piece.t_start]
        if now is not None:
            # drop pieces fully superseded before now
            while len(self.pieces) > 1 and self.pieces[1].t_start <= now:
                self.pieces.pop(0)
        self.pieces.append(piece)


def pick_commit_point(committed: CommittedTrajectory, now: float, replan_budget: float):
    t_in = now + replan_budget
    return committed.state(t_in), t_in


def project_goal(p, g_term, r: float) -> np.ndarray:
    if r <= 0:
        raise ValueError("sphere radius must be positive")
    p = np.asarray(p, dtype=float)
    g_term = np.asarray(g_term, dtype=float)
    d = g_term - p
    dist = np.linalg.norm(d)
    if dist > r:
        return p + r * d / dist
    return g_term.copy()


def collision_scores(predictions: dict, p, g_term, R: float, U: int, t_init: float, t_f: float):
    """``sum_u P(|p_i(t_u) - kappa(u)|_inf <= R)`` per obstacle id, ``u = 0 .. U``."""
    p = np.asarray(p, dtype=float)
    g_term = np.asarray(g_term, dtype=float)
    u = np.arange(U + 1) / U
    kappa = p + u[:, None] * (g_term - p)
    tu = t_init + u * (t_f - t_init)
    out = {}
    for oid, pred in predictions.items():
        mu = np.asarray(pred.mean(tu), dtype=float).reshape(-1, 3) - kappa
        sig = np.asarray(pred.sigma(tu), dtype=float).reshape(-1, 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            hi = np.where(sig > 0, ndtr((R - mu) / sig), (mu <= R).astype(float))
            lo = np.where(sig > 0, ndtr((-R - mu) / sig), (mu < -R).astype(float))
        out[oid] = float(np.prod(hi - lo, axis=1).sum())
    return out


def select_obstacle(predictions: dict, p, g_term, R: float, U: int, t_init: float, t_f: float):
    if not predictions:
        raise NoObstacles("no tracked obstacles")
    scores = collision_scores(predictions, p, g_term, R, U, t_init, t_f)
    # ties go to the lower id
    return max(sorted(scores), key=lambda k: (scores[k], -k))


@dataclass(frozen=True)
class WorldSnapshot:
    t: float
    g_term: np.ndarray
    predictions: dict  # obstacle id -> PredictedTrajectory-like


@dataclass
class ReplanRecord:
    t: float
    mode: str
    status: str
    stages: dict = field(default_factory=dict)  # seconds per stage
    i_star: int | None = None
    n_obstacles: int = 0
    cost: float | None = None
    guess_cost: float | None = None
    iterations: int = 0
    fallback: bool = False
    message: str = ""

    @property
    def total(self) -> float:
        return float(sum(self.stages.values()))

    def to_json(self) -> str:
        d = {
            "t": round(self.t, 6), "mode": self.mode, "status": self.status,
            "stages_ms": {k: round(v * 1e3, 3) for k, v in self.stages.items()},
            "total_ms": round(self.total * 1e3, 3), "i_star": self.i_star,
            "n_obstacles": self.n_obstacles, "cost": self.cost, "guess_cost": self.guess_cost,
            "iterations": self.iterations, "fallback": self.fallback, "message": self.message,
        }
        return json.dumps(d, sort_keys=True)


STAGES = ("convex_hull", "position_guess", "psi_guess", "optimization")


class Planner:
    """One replan in flight at a time; publishes a new piece only after the audit passes."""

    def __init__(self, cfg, mode, initial: AgentState, log=None):
        self.cfg = cfg
        self.mode = Mode.parse(mode)
        self.committed = CommittedTrajectory.hovering(initial)
        self.limits = Limits.from_config(cfg)
        self.log = log
        self._plan_id = 0
        self.records: list[ReplanRecord] = []

    def horizon(self, d: AgentState, g) -> float:
        cfg = self.cfg
        return max(cfg.min_horizon, float(np.linalg.norm(np.asarray(g) - d.p))
                   / (cfg.horizon_speed_frac * float(np.min(cfg.v_max))))

    def replan(self, snap: WorldSnapshot) -> ReplanRecord:
        rec = self._replan(snap)
        self.records.append(rec)
        if self.log is not None:
            self.log.write(rec.to_json() + "\n")
        return rec

    def _replan(self, snap: WorldSnapshot) -> ReplanRecord:
        cfg, mode = self.cfg, self.mode
        rec = ReplanRecord(snap.t, mode.value, "keep_previous", {k: 0.0 for k in STAGES},
                           n_obstacles=len(snap.predictions))
        d, t_in = pick_commit_point(self.committed, snap.t, cfg.replan_budget)
        g = project_goal(d.p, snap.g_term, cfg.sphere_radius)
        t_f = t_in + self.horizon(d, g)
        lay = PlanLayout(t_in, t_f, cfg.n_pos_ctrl)

        clock = time.perf_counter()
        ids = sorted(snap.predictions)
        try:
            hulls = [[build_obstacle_hull(snap.predictions[i], lay.breaks[j], lay.breaks[j + 1], cfg.delta,
                                          snap.predictions[i].half_sides, cfg.agent_half_sides, i, j)
                      for j in range(lay.n_int)] for i in ids]
        except HorizonExceeded as e:
            rec.message = str(e)
            return rec
        rec.stages["convex_hull"] = time.perf_counter() - clock

        clock = time.perf_counter()
        try:
            pg = octopus_search(lay, (d.p, d.v, d.a), g, hulls, self.limits, cfg.octopus_samples,
                                cfg.octopus_budget, cfg.separation_margin, cfg.alpha_j)
        except NoPathFound as e:
            rec.stages["position_guess"] = time.perf_counter() - clock
            rec.message = str(e)
            return rec
        rec.stages["position_guess"] = time.perf_counter() - clock
        planes = {(ids[i], j): pl for (i, j), pl in pg.planes.items()}

        pred_star = None
        if mode is not Mode.NO_PA and ids:
            rec.i_star = select_obstacle(snap.predictions, d.p, snap.g_term, cfg.select_R, cfg.select_U,
                                         t_in, t_f)
            pred_star = snap.predictions[rec.i_star]
        psi_const = constant_psi(lay, d.psi, d.psidot)
        no_pa = Weights(cfg.alpha_j, 0.0, 0.0, cfg.alpha_g, cfg.eps, cfg.gamma_vel)
        try:
            if mode is Mode.COUPLED:
                clock = time.perf_counter()
                psi_g, _ = yaw_guess(lay, pg.control_points, pred_star, d.psi, d.psidot, cfg)
                rec.stages["psi_guess"] = time.perf_counter() - clock
                clock = time.perf_counter()
                pb = NlpProblem(lay, cfg, pg.control_points, psi_g, g, planes, pred_star)
                plan = solve(pb, pg.control_points, psi_g)
                rec.stages["optimization"] = time.perf_counter() - clock
            else:
                clock = time.perf_counter()
                pb = NlpProblem(lay, cfg, pg.control_points, psi_const, g, planes, None,
                                free_psi=False, weights=no_pa)
                plan = solve(pb, pg.control_points, psi_const)
                rec.stages["optimization"] = time.perf_counter() - clock
                if mode is Mode.DECOUPLED:
                    clock = time.perf_counter()
                    psi_g, _ = yaw_guess(lay, plan.control_points, pred_star, d.psi, d.psidot, cfg)
                    rec.stages["psi_guess"] = time.perf_counter() - clock
                    clock = time.perf_counter()
                    pb2 = NlpProblem(lay, cfg, plan.control_points, psi_g, g, planes, pred_star,
                                     free_position=False)
                    plan2 = solve(pb2, plan.control_points, psi_g)
                    rec.stages["optimization"] += time.perf_counter() - clock
                    plan = plan2
        except InfeasibleGuess as e:
            rec.message = f"infeasible guess: {e}"
            return rec
        rec.cost, rec.guess_cost = float(plan.cost), float(plan.guess_cost)
        rec.iterations, rec.fallback = plan.iterations, plan.fallback
        rec.message = plan.message

        # mode-independent audit before anything is published
        start = lay.start_points(d.p, d.v, d.a)
        bad = audit_position(lay, plan.control_points, self.limits, planes, cfg.separation_margin,
                             cfg.feasibility_tol, start)
        bad += audit_psi(lay, plan.psi, cfg.psidot_max, cfg.feasibility_tol)
        pos = lay.position_spline(plan.control_points)
        psi = lay.psi_spline(plan.psi)
        new0 = np.concatenate([evaluate(pos, t_in, k) for k in range(3)]
                              + [evaluate(psi, t_in), evaluate(psi, t_in, 1)])
        if np.max(np.abs(new0 - d.vector())) > 1e-9:
            bad.append("splice continuity")
        if bad:
            rec.status = "audit_failed"
            rec.message = "; ".join(bad)
            return rec
        self._plan_id += 1
        self.committed.splice(TrajectoryPiece(t_in, pos, psi, self._plan_id), now=snap.t)
        rec.status = "fallback" if plan.fallback else "optimized"
        return rec


__all__ = [
    "Mode", "NoObstacles", "AgentState", "TrajectoryPiece", "CommittedTrajectory", "pick_commit_point",
    "project_goal", "collision_scores", "select_obstacle", "WorldSnapshot", "ReplanRecord", "STAGES",
    "Planner",
]
