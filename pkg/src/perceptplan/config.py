"""Planner configuration and its ``key = value`` text format.

One entry per line, ``#`` starts a comment, vectors are comma separated::

    # cost weights
    alpha_fov = 3.0          # -
    v_max     = 2.5, 2.5, 2.5  # m/s

Unknown keys are rejected so typos surface immediately.  Every key, its
unit and its default are listed in :data:`UNITS` and ``docs/config.md``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraModel


def _vec(*v):
    return field(default_factory=lambda: np.array(v, dtype=float))


@dataclass
class PlannerConfig:
    # cost weights
    alpha_j: float = 1e-3
    alpha_psi: float = 1e-2
    alpha_fov: float = 3.0
    alpha_g: float = 10.0
    eps: float = 0.1
    # image-plane speeds are in m/s at f = 1 cm, so blur needs a large weight
    gamma_vel: float = 1e3
    # camera
    gamma_sig: float = 100.0
    theta: float = math.radians(60.0)
    f: float = 0.01
    # dynamic limits
    v_max: np.ndarray = _vec(2.5, 2.5, 2.5)
    a_max: np.ndarray = _vec(5.0, 5.0, 5.0)
    j_max: np.ndarray = _vec(30.0, 30.0, 30.0)
    psidot_max: float = 3.0
    # collision
    delta: float = 0.95
    agent_half_sides: np.ndarray = _vec(0.15, 0.15, 0.1)
    separation_margin: float = 1e-3
    # goal and obstacle selection
    sphere_radius: float = 4.0
    select_R: float = 1.0
    select_U: int = 20
    # yaw graph
    c_psi: float = 1.0
    c_psidot_max: float = 10.0
    c_fov: float = 5.0
    n_psi: int = 12
    # splines / horizon
    n_pos_ctrl: int = 9
    min_horizon: float = 1.0
    horizon_speed_frac: float = 0.7
    n_simpson: int = 16
    replan_budget: float = 0.12
    # position search
    octopus_samples: int = 9
    octopus_budget: int = 50_000
    # solver
    solver_max_iter: int = 100
    solver_ftol: float = 1e-9
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        for k in ("v_max", "a_max", "j_max", "agent_half_sides"):
            v = np.asarray(getattr(self, k), dtype=float)
            setattr(self, k, np.broadcast_to(v, (3,)).copy())
        self.validate()

    def validate(self) -> None:
        for k in ("alpha_j", "alpha_psi", "alpha_fov", "alpha_g", "gamma_vel", "c_psi",
                  "c_psidot_max", "c_fov"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_simpson < 2 or self.n_simpson % 2:
            raise ValueError("n_simpson must be an even integer >= 2")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.n_pos_ctrl < 7:
            raise ValueError("n_pos_ctrl must be at least 7 (3 fixed start + 3 hover + 1 free)")

    @property
    def n_intervals(self) -> int:
        return self.n_pos_ctrl - 3

    @property
    def n_psi_ctrl(self) -> int:
        return self.n_intervals + 2

    def camera(self) -> CameraModel:
        return CameraModel(f=self.f, theta=self.theta, gamma_sig=self.gamma_sig)

    def replace(self, **kw) -> "PlannerConfig":
        return dataclasses.replace(self, **kw)


UNITS = {
    "alpha_j": "-", "alpha_psi": "-", "alpha_fov": "-", "alpha_g": "1/m^2", "eps": "-",
    "gamma_vel": "s^2/m^2", "gamma_sig": "-", "theta": "rad", "f": "m",
    "v_max": "m/s", "a_max": "m/s^2", "j_max": "m/s^3", "psidot_max": "rad/s",
    "delta": "-", "agent_half_sides": "m", "separation_margin": "m",
    "sphere_radius": "m", "select_R": "m", "select_U": "count",
    "c_psi": "1/rad^2", "c_psidot_max": "-", "c_fov": "-", "n_psi": "count",
    "n_pos_ctrl": "count", "min_horizon": "s", "horizon_speed_frac": "-", "n_simpson": "count",
    "replan_budget": "s", "octopus_samples": "count", "octopus_budget": "count",
    "solver_max_iter": "count", "solver_ftol": "-", "feasibility_tol": "m",
}


def _format(v) -> str:
    if isinstance(v, np.ndarray):
        return ", ".join(repr(float(x)) for x in v)
    return repr(v)


def dumps(cfg, units=None) -> str:
    units = UNITS if units is None else units
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}  # {units.get(f.name, '-')}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def coerce(cls, values: dict[str, str], base=None):
    """Build a dataclass instance from string values, starting from ``base`` (or defaults)."""
    inst = base if base is not None else cls()
    kw = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k, v in values.items():
        if k not in fields:
            raise KeyError(f"unknown config key {k!r}")
        cur = getattr(inst, k)
        if isinstance(cur, np.ndarray):
            kw[k] = np.array([float(x) for x in v.split(",")])
        elif isinstance(cur, bool):
            kw[k] = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(cur, int):
            kw[k] = int(v)
        elif isinstance(cur, float):
            kw[k] = float(v)
        else:
            kw[k] = v
    return dataclasses.replace(inst, **kw)


def loads(text: str, base: PlannerConfig | None = None) -> PlannerConfig:
    return coerce(PlannerConfig, parse_kv(text), base)


def load(path) -> PlannerConfig:
    return loads(Path(path).read_text())


def save(cfg: PlannerConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
