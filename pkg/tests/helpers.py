"""Shared instance builders for the optimizer and planner tests."""

import numpy as np

from perceptplan.config import PlannerConfig
from perceptplan.corridor import build_obstacle_hull
from perceptplan.guess import Limits, PlanLayout, octopus_search, yaw_guess
from perceptplan.optimizer import NlpProblem
from perceptplan.tracking import PredictedTrajectory


def linear_prediction(p0, v, t_ref=0.0, sigma=0.0, horizon=100.0):
    coeffs = np.column_stack([np.asarray(p0, dtype=float), np.asarray(v, dtype=float)])
    return PredictedTrajectory(coeffs, t_ref, np.full(3, float(sigma)), np.zeros((2, 2)), t_ref + horizon)


def greville_line(layout, p0, v):
    """Control points of the straight constant-velocity curve ``p0 + v (t - t_in)``."""
    k = layout.knots
    g = np.array([k[l + 1:l + 4].mean() for l in range(layout.n_ctrl)]) - layout.t_in
    return np.asarray(p0, dtype=float) + np.outer(g, v)


def pa_instance(seed, cfg=None, with_hulls=True):
    """Agent starting near hover, goal a few meters ahead, one moving obstacle in view.

    Returns ``(problem, Q_guess, psi_guess, prediction)`` with an audited guess.
    """
    rng = np.random.default_rng(seed)
    cfg = cfg or PlannerConfig()
    T = rng.uniform(1.5, 2.5)
    lay = PlanLayout(0.0, T, cfg.n_pos_ctrl)
    p0 = np.zeros(3)
    v0 = rng.uniform(-0.5, 0.5, 3) * [1, 1, 0.2]
    a0 = rng.uniform(-0.5, 0.5, 3) * [1, 1, 0.2]
    goal = np.array([rng.uniform(2.0, 3.5), rng.uniform(-1.5, 1.5), rng.uniform(-0.3, 0.3)])
    pred = linear_prediction([rng.uniform(2, 4), rng.uniform(-3, 3), rng.uniform(-0.3, 0.3)],
                             [rng.uniform(-0.8, 0.8), rng.uniform(-1.2, 1.2), 0.0])
    hulls = []
    if with_hulls:
        hulls = [[build_obstacle_hull(pred, lay.breaks[j], lay.breaks[j + 1], cfg.delta, [0.4] * 3,
                                      cfg.agent_half_sides, 0, j) for j in range(lay.n_int)]]
    guess = octopus_search(lay, (p0, v0, a0), goal, hulls, Limits.from_config(cfg))
    psi_in = rng.uniform(-0.5, 0.5)
    psi, _ = yaw_guess(lay, guess.control_points, pred, psi_in, 0.0, cfg)
    prob = NlpProblem(lay, cfg, guess.control_points, psi, goal, guess.planes, pred)
    return prob, guess.control_points, psi, pred
