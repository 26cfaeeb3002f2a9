"""Compare the compiled and numpy perception kernels.

    python benchmarks/bench_kernels.py            # kernel timings and agreement
    python benchmarks/bench_kernels.py --closed-loop 5   # also a 5 s simulation per backend

The closed-loop run uses a subprocess per backend because the backend is chosen at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from perceptplan.geometry import CameraModel
from perceptplan.kernels import _reference, camera_vector

try:
    from perceptplan.kernels import _native
except ImportError:
    _native = None


def random_nodes(n: int, seed: int = 0) -> np.ndarray:
    """Agent states near hover with the obstacle a few meters ahead."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 20))
    X[:, 0:3] = rng.normal(0, 1, (n, 3))
    X[:, 3:6] = rng.normal(0, 1.5, (n, 3))
    X[:, 6:9] = rng.normal(0, 2, (n, 3))
    X[:, 9:12] = rng.normal(0, 5, (n, 3))
    X[:, 12] = rng.uniform(-0.5, 0.5, n)
    X[:, 13] = rng.normal(0, 1, n)
    X[:, 14:17] = X[:, 0:3] + np.array([3.0, 0.0, 0.0]) + rng.normal(0, 0.5, (n, 3))
    X[:, 17:20] = rng.normal(0, 1.5, (n, 3))
    return X


def time_call(fn, repeat: int = 5) -> float:
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


_LOOP = """
import sys, time
import numpy as np
from perceptplan.kernels import BACKEND
from perceptplan.simbench import SimConfig, make_world, run_experiment
from perceptplan.config import PlannerConfig
sim, cfg = SimConfig(), PlannerConfig()
t = time.perf_counter()
rec, m = run_experiment(make_world(sim, cfg, 0), "COUPLED", float(sys.argv[1]), 0, cfg, sim)
med = np.median([r.total for r in rec.replans]) * 1e3
print(f"{BACKEND:7s} median replan {med:7.1f} ms   wall {time.perf_counter() - t:6.1f} s   in_fov {m.in_fov_pct:.1f}%")
"""


def closed_loop(seconds: float) -> None:
    sys.stdout.flush()
    for backend in ("native", "python"):
        env = dict(os.environ, PERCEPTPLAN_KERNELS=backend)
        subprocess.run([sys.executable, "-c", _LOOP, str(seconds)], env=env, check=True)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[97, 1000, 10000],
                    help="node counts (97 is one replan's Simpson grid)")
    ap.add_argument("--closed-loop", type=float, default=0.0, metavar="SECONDS")
    args = ap.parse_args(argv)

    cam = camera_vector(CameraModel())
    eps, gamma_vel = 0.1, 1e3
    if _native is None:
        print("compiled kernel not built; only the numpy backend is available")
    print(f"{'nodes':>6} {'grad':>5} {'numpy us':>10} {'native us':>10} {'speedup':>8} {'max rel diff':>13}")
    for n in args.sizes:
        X = random_nodes(n)
        for grad in (False, True):
            t_py = time_call(lambda: _reference.pa_terms(X, cam, eps, gamma_vel, grad))
            if _native is None:
                print(f"{n:6d} {str(grad):>5} {t_py * 1e6:10.1f}")
                continue
            t_nat = time_call(lambda: _native.pa_terms(X, cam, eps, gamma_vel, grad))
            r1, d1 = _reference.pa_terms(X, cam, eps, gamma_vel, grad)
            r2, d2 = _native.pa_terms(X, cam, eps, gamma_vel, grad)
            a, b = (d1, d2) if grad else (r1, r2)
            diff = np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300)
            print(f"{n:6d} {str(grad):>5} {t_py * 1e6:10.1f} {t_nat * 1e6:10.1f} {t_py / t_nat:8.1f} {diff:13.2e}")
    if args.closed_loop > 0:
        closed_loop(args.closed_loop)
    return 0


if __name__ == "__main__":
    sys.exit(main())
