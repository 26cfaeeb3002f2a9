"""Headless closed-loop simulation, synthetic sensing and benchmark metrics."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .config import PlannerConfig, coerce, parse_kv
from .geometry import CameraModel, body_pose
from .planner import AgentState, Mode, Planner, WorldSnapshot
from .tracking import PointCloudSnapshot, Tracker, TrackerConfig


class PlannerStall(RuntimeError):
    pass


class IoError(OSError):
    pass


class FovCategory(str, enum.Enum):
    IN_FOV = "IN_FOV"
    FRONT_NOT_FOV = "FRONT_NOT_FOV"
    BEHIND = "BEHIND"


# ---------------------------------------------------------------------------
# world


def trefoil_position(t, scale=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), omega: float = 1.0,
                     phase: float = 0.0) -> np.ndarray:
    s = omega * np.asarray(t, dtype=float) + phase
    base = np.stack([np.sin(s) + 2 * np.sin(2 * s), np.cos(s) - 2 * np.cos(2 * s), -np.sin(3 * s)], axis=-1)
    return base * np.asarray(scale, dtype=float) + np.asarray(center, dtype=float)


def trefoil_velocity(t, scale=(1.0, 1.0, 1.0), omega: float = 1.0, phase: float = 0.0) -> np.ndarray:
    s = omega * np.asarray(t, dtype=float) + phase
    base = np.stack([np.cos(s) + 4 * np.cos(2 * s), -np.sin(s) + 4 * np.sin(2 * s), -3 * np.cos(3 * s)], axis=-1)
    return omega * base * np.asarray(scale, dtype=float)


def trefoil_omega(scale, peak_speed: float) -> float:
    """Angular rate giving the requested peak speed for a scaled trefoil."""
    s = np.linspace(0.0, 2 * np.pi, 20001)
    return peak_speed / float(np.linalg.norm(trefoil_velocity(s, scale), axis=-1).max())


@dataclass(frozen=True)
class TrefoilObstacle:
    scale: tuple = (1.1, 1.1, 0.75)
    center: tuple = (0.0, 0.0, 1.0)
    omega: float = 0.25
    phase: float = 0.0
    half_sides: tuple = (0.4, 0.4, 0.4)

    def position(self, t):
        return trefoil_position(t, self.scale, self.center, self.omega, self.phase)

    def velocity(self, t):
        return trefoil_velocity(t, self.scale, self.omega, self.phase)


class TruthPrediction:
    """Exact knowledge of an obstacle's trajectory (zero spread, unbounded horizon)."""

    def __init__(self, obstacle: TrefoilObstacle):
        self.obstacle = obstacle
        self.half_sides = np.asarray(obstacle.half_sides, dtype=float)
        self.valid_until = math.inf

    def mean(self, t):
        return self.obstacle.position(t)

    def velocity(self, t):
        return self.obstacle.velocity(t)

    def sigma(self, t):
        return np.zeros(np.shape(t) + (3,))


@dataclass
class SimConfig:
    duration: float = 60.0  # s
    frame_rate: float = 30.0  # Hz
    replan_period: float = 0.2  # s
    goal_period: float = 2.0  # s
    arena_half: float = 5.0  # m, goals at the square's vertices
    goal_z: float = 1.0  # m
    n_obstacles: int = 1
    obstacle_half_side: float = 0.4  # m
    trefoil_scale: np.ndarray = field(default_factory=lambda: np.array([1.1, 1.1, 0.75]))  # m
    trefoil_center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))  # m
    peak_speed: float = 1.5  # m/s
    cloud_points: int = 300  # points per visible obstacle
    cloud_noise: float = 0.01  # m
    image_px: int = 480
    hist_cell_px: int = 30
    hist_sigma: float = 1.0  # cells
    stall_time: float = 5.0  # s
    collision_substeps: int = 3

    def px_per_m(self, cam: CameraModel) -> float:
        return (self.image_px / 2) / (cam.f * math.tan(cam.theta / 2))


SIM_UNITS = {
    "duration": "s", "frame_rate": "Hz", "replan_period": "s", "goal_period": "s", "arena_half": "m",
    "goal_z": "m", "n_obstacles": "count", "obstacle_half_side": "m", "trefoil_scale": "m",
    "trefoil_center": "m", "peak_speed": "m/s", "cloud_points": "count", "cloud_noise": "m",
    "image_px": "px", "hist_cell_px": "px", "hist_sigma": "cells", "stall_time": "s",
    "collision_substeps": "count",
}


def load_config(path=None, text: str | None = None) -> tuple[PlannerConfig, SimConfig]:
    """Read one key=value file holding planner and simulation keys."""
    if path is not None:
        text = Path(path).read_text()
    values = parse_kv(text or "")
    pkeys = {f.name for f in dataclasses.fields(PlannerConfig)}
    skeys = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(values) - pkeys - skeys
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    cfg = coerce(PlannerConfig, {k: v for k, v in values.items() if k in pkeys})
    sim = coerce(SimConfig, {k: v for k, v in values.items() if k in skeys})
    return cfg, sim


@dataclass
class World:
    obstacles: list
    goals: list  # (time, goal) pairs, piecewise constant
    start: np.ndarray
    camera: CameraModel

    def goal_at(self, t: float) -> np.ndarray:
        g = self.goals[0][1]
        for tg, gv in self.goals:
            if tg <= t + 1e-12:
                g = gv
        return g


def make_world(sim: SimConfig, cfg: PlannerConfig, seed: int) -> World:
    """Square-vertex goal schedule and trefoil obstacles, all drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    a = sim.arena_half
    verts = [np.array([sx * a, sy * a, sim.goal_z]) for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
    cur = int(rng.integers(4))
    start = verts[cur]
    goals = []
    n_goals = int(math.ceil(sim.duration / sim.goal_period)) + 1
    for k in range(n_goals):
        nxt = int(rng.choice([i for i in range(4) if i != cur]))
        goals.append((k * sim.goal_period, verts[nxt]))
        cur = nxt
    omega = trefoil_omega(sim.trefoil_scale, sim.peak_speed)
    obstacles = []
    for i in range(sim.n_obstacles):
        phase = float(rng.uniform(0, 2 * np.pi))
        obstacles.append(TrefoilObstacle(tuple(sim.trefoil_scale), tuple(sim.trefoil_center), omega,
                                         phase, (sim.obstacle_half_side,) * 3))
    return World(obstacles, goals, start, cfg.camera())


def stress_world(sim: SimConfig, cfg: PlannerConfig, seed: int) -> World:
    """Three obstacles with spread phases (an extra configuration, not a reproduction target)."""
    return make_world(dataclasses.replace(sim, n_obstacles=3), cfg, seed)


# ---------------------------------------------------------------------------
# sensing and classification


def _camera_pose(cam: CameraModel, p, a, psi):
    """(world_to_camera Transform, camera position in world)."""
    T_bw = body_pose(np.asarray(p, dtype=float), np.asarray(a, dtype=float), float(psi))
    T_cw = T_bw @ cam.body_to_camera.inverse()
    return T_cw.inverse(), T_cw.translation


def classify_frame(cam: CameraModel, world_to_camera, center, theta: float | None = None) -> FovCategory:
    theta = cam.theta if theta is None else theta
    pc = world_to_camera.apply(np.asarray(center, dtype=float))
    if pc[2] <= 0:
        return FovCategory.BEHIND
    ang = math.acos(min(1.0, pc[2] / np.linalg.norm(pc)))
    return FovCategory.IN_FOV if ang <= theta / 2 else FovCategory.FRONT_NOT_FOV


def synthesize_pointcloud(world: World, p, a, psi, t: float, n_points: int, noise: float,
                          rng: np.random.Generator) -> PointCloudSnapshot:
    """Noisy samples on the surface of every obstacle whose center lies in the FOV cone.

    The whole box surface is sampled (area-weighted) so cluster centroids are
    unbiased estimates of the box center.
    """
    if n_points <= 0:
        raise ValueError("density must be positive")
    cam = world.camera
    w2c, _ = _camera_pose(cam, p, a, psi)
    clouds = []
    for ob in world.obstacles:
        c = ob.position(t)
        if classify_frame(cam, w2c, c) is not FovCategory.IN_FOV:
            continue
        h = np.asarray(ob.half_sides, dtype=float)
        areas = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
        face = rng.choice(6, size=n_points, p=areas / areas.sum())
        uv = rng.uniform(-1, 1, size=(n_points, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        uv[np.arange(n_points), axis] = sign
        pts = c + uv * h
        if noise > 0:
            pts = pts + rng.normal(scale=noise, size=pts.shape)
        clouds.append(pts)
    pts = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    return PointCloudSnapshot(t, pts)


# ---------------------------------------------------------------------------
# experiment

FRAME_FIELDS = ["t", "obstacle", "plan_id", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az",
                "psi", "psidot", "ox", "oy", "oz", "category", "s_x_px", "s_y_px", "sdot_x_px",
                "sdot_y_px", "in_image", "collision"]
TIMING_FIELDS = ["t", "mode", "status", "n_obstacles", "convex_hull_ms", "position_guess_ms",
                 "psi_guess_ms", "optimization_ms", "total_ms"]
METRIC_FIELDS = ["mode", "seed", "prediction", "frames", "in_fov_pct", "front_not_fov_pct", "behind_pct",
                 "proj_speed_mean_px_s", "proj_speed_std_px_s", "proj_speed_frames", "collision_frames",
                 "replans", "replans_failed", "stalls"]


@dataclass
class ExperimentRecord:
    frames: list = field(default_factory=list)  # dicts keyed by FRAME_FIELDS
    replans: list = field(default_factory=list)  # ReplanRecord
    stalls: list = field(default_factory=list)  # times at which a stall was detected
    snapshots: list = field(default_factory=list)  # point clouds fed to the tracker (tracked runs)
    mode: str = ""
    seed: int = 0
    prediction: str = "perfect"


@dataclass
class Metrics:
    frames: int
    in_fov_pct: float
    front_not_fov_pct: float
    behind_pct: float
    proj_speed_mean: float
    proj_speed_std: float
    proj_speed_frames: int
    collision_frames: int
    histogram: np.ndarray

    def row(self) -> dict:
        return {
            "frames": self.frames, "in_fov_pct": self.in_fov_pct, "front_not_fov_pct": self.front_not_fov_pct,
            "behind_pct": self.behind_pct, "proj_speed_mean_px_s": self.proj_speed_mean,
            "proj_speed_std_px_s": self.proj_speed_std, "proj_speed_frames": self.proj_speed_frames,
            "collision_frames": self.collision_frames,
        }


def _boxes_overlap(c1, h1, c2, h2) -> bool:
    return bool(np.all(np.abs(np.asarray(c1) - np.asarray(c2)) < np.asarray(h1) + np.asarray(h2)))


def run_experiment(world: World, mode, duration: float, seed: int, cfg: PlannerConfig | None = None,
                   sim: SimConfig | None = None, prediction: str = "perfect", log=None,
                   progress=None) -> tuple[ExperimentRecord, Metrics]:
    """Closed loop at a fixed frame rate; the agent follows its committed trajectory exactly."""
    cfg = cfg or PlannerConfig()
    sim = sim or SimConfig()
    mode = Mode.parse(mode)
    prediction = prediction.lower()
    if prediction not in ("perfect", "tracked"):
        raise ValueError("prediction must be 'perfect' or 'tracked'")
    rng = np.random.default_rng(seed + 7919)
    cam = world.camera
    planner = Planner(cfg, mode, AgentState.hover(world.start), log=log)
    tracker = Tracker(TrackerConfig()) if prediction == "tracked" else None
    truth = {i: TruthPrediction(ob) for i, ob in enumerate(world.obstacles)}
    rec = ExperimentRecord(mode=mode.value, seed=seed, prediction=prediction)
    n_frames = int(round(duration * sim.frame_rate))
    replan_every = max(1, int(round(sim.replan_period * sim.frame_rate)))
    px = sim.px_per_m(cam)
    half_img = cam.f * math.tan(cam.theta / 2)
    cam_vec = kernels.camera_vector(cam)
    agent_h = cfg.agent_half_sides
    last_ok = 0.0
    stalled = False
    for k in range(n_frames + 1):
        t = k / sim.frame_rate
        st, jerk = planner.committed.state(t, jerk=True)
        if tracker is not None:
            snap = synthesize_pointcloud(world, st.p, st.a, st.psi, t, sim.cloud_points, sim.cloud_noise, rng)
            tracker.ingest(snap)
            rec.snapshots.append(snap)
        if k % replan_every == 0 and k < n_frames:
            preds = tracker.predictions() if tracker is not None else truth
            r = planner.replan(WorldSnapshot(t, world.goal_at(t), preds))
            rec.replans.append(r)
            if r.status in ("optimized", "fallback"):
                last_ok, stalled = t, False
            elif t - last_ok > sim.stall_time and not stalled:
                rec.stalls.append(t)
                stalled = True
        w2c, _ = _camera_pose(cam, st.p, st.a, st.psi)
        pid = planner.committed.plan_id(t)
        for i, ob in enumerate(world.obstacles):
            c = ob.position(t)
            cat = classify_frame(cam, w2c, c)
            row = {"t": round(t, 6), "obstacle": i, "plan_id": pid,
                   "px": st.p[0], "py": st.p[1], "pz": st.p[2], "vx": st.v[0], "vy": st.v[1], "vz": st.v[2],
                   "ax": st.a[0], "ay": st.a[1], "az": st.a[2], "psi": st.psi, "psidot": st.psidot,
                   "ox": c[0], "oy": c[1], "oz": c[2], "category": cat.value,
                   "s_x_px": "", "s_y_px": "", "sdot_x_px": "", "sdot_y_px": "", "in_image": 0}
            if cat is not FovCategory.BEHIND:
                X = kernels.node_row(st.p, st.v, st.a, jerk, st.psi, st.psidot, c, ob.velocity(t))[None]
                s, sd, _ = kernels.projection_batch(X, cam_vec)
                if np.all(np.isfinite(s[0])):
                    row.update({"s_x_px": s[0, 0] * px, "s_y_px": s[0, 1] * px,
                                "sdot_x_px": sd[0, 0] * px, "sdot_y_px": sd[0, 1] * px,
                                "in_image": int(np.all(np.abs(s[0]) <= half_img))})
            # collision audit on substeps between this frame and the next
            coll = 0
            for q in range(sim.collision_substeps if k < n_frames else 1):
                tq = t + q / (sim.frame_rate * sim.collision_substeps)
                pq = st.p if q == 0 else planner.committed.state(tq).p
                if _boxes_overlap(pq, agent_h, ob.position(tq), ob.half_sides):
                    coll = 1
                    break
            row["collision"] = coll
            rec.frames.append(row)
        if progress is not None and k % int(sim.frame_rate) == 0:
            progress(t)
    return rec, compute_metrics(rec.frames, sim, cam)


def compute_metrics(frames, sim: SimConfig | None = None, cam: CameraModel | None = None) -> Metrics:
    sim = sim or SimConfig()
    cam = cam or CameraModel()
    n = len(frames)
    cats = [f["category"] for f in frames]
    pct = {c: (100.0 * cats.count(c.value) / n if n else 0.0) for c in FovCategory}
    inimg = [f for f in frames if int(f["in_image"])]
    speeds = np.array([math.hypot(float(f["sdot_x_px"]), float(f["sdot_y_px"])) for f in inimg])
    cells = sim.image_px // sim.hist_cell_px
    hist = np.zeros((cells, cells))
    if len(inimg):
        sx = np.array([float(f["s_x_px"]) for f in inimg]) + sim.image_px / 2
        sy = np.array([float(f["s_y_px"]) for f in inimg]) + sim.image_px / 2
        hist, _, _ = np.histogram2d(sy, sx, bins=cells, range=[[0, sim.image_px], [0, sim.image_px]])
        hist = gaussian_filter(hist, sim.hist_sigma)
    return Metrics(n, pct[FovCategory.IN_FOV], pct[FovCategory.FRONT_NOT_FOV], pct[FovCategory.BEHIND],
                   float(speeds.mean()) if len(speeds) else float("nan"),
                   float(speeds.std()) if len(speeds) else float("nan"), len(speeds),
                   int(sum(int(f["collision"]) for f in frames)), hist)


# ---------------------------------------------------------------------------
# outputs


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(round(float(v), 9))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_csv(path: Path, fields, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in fields})
    path.write_text(buf.getvalue())


def timing_rows(replans):
    for r in replans:
        row = {"t": r.t, "mode": r.mode, "status": r.status, "n_obstacles": r.n_obstacles,
               "total_ms": r.total * 1e3}
        for k, v in r.stages.items():
            row[f"{k}_ms"] = v * 1e3
        yield row


def metrics_row(rec: ExperimentRecord, m: Metrics) -> dict:
    row = {"mode": rec.mode, "seed": rec.seed, "prediction": rec.prediction}
    row.update(m.row())
    row.update({"replans": len(rec.replans),
                "replans_failed": sum(r.status not in ("optimized", "fallback") for r in rec.replans),
                "stalls": len(rec.stalls)})
    return row


OUTPUT_PARTS = ("frames", "metrics", "histogram", "timing")


def emit_outputs(rec: ExperimentRecord, m: Metrics, out_dir, parts=OUTPUT_PARTS) -> dict:
    """Write ``<part>.csv`` for each requested part; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f"{k}.csv" for k in parts}
        if "frames" in parts:
            _write_csv(paths["frames"], FRAME_FIELDS, rec.frames)
        if "metrics" in parts:
            _write_csv(paths["metrics"], METRIC_FIELDS, [metrics_row(rec, m)] if rec.frames else [])
        if "histogram" in parts:
            cells = m.histogram.shape[1]
            hist_rows = [{"row": i, **{f"c{j}": m.histogram[i, j] for j in range(cells)}}
                         for i in range(m.histogram.shape[0])] if rec.frames else []
            _write_csv(paths["histogram"], ["row"] + [f"c{j}" for j in range(cells)], hist_rows)
        if "timing" in parts:
            _write_csv(paths["timing"], TIMING_FIELDS, timing_rows(rec.replans))
    except OSError as e:
        raise IoError(str(e)) from e
    return paths


def read_frames(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as e:
        raise IoError(str(e)) from e


__all__ = [
    "PlannerStall", "IoError", "FovCategory", "trefoil_position", "trefoil_velocity", "trefoil_omega",
    "TrefoilObstacle", "TruthPrediction", "SimConfig", "SIM_UNITS", "load_config", "World", "make_world",
    "stress_world", "classify_frame", "synthesize_pointcloud", "ExperimentRecord", "Metrics",
    "run_experiment", "compute_metrics", "emit_outputs", "OUTPUT_PARTS", "read_frames", "metrics_row", "timing_rows",
    "FRAME_FIELDS", "TIMING_FIELDS", "METRIC_FIELDS",
]
