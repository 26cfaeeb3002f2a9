import os
import subprocess
import sys

import numpy as np
import pytest

from perceptplan import kernels
from perceptplan.geometry import CameraModel
from perceptplan.kernels import _reference, camera_vector

try:
    from perceptplan.kernels import _native
except ImportError:
    _native = None

CAM = camera_vector(CameraModel())
EPS, GAMMA = 0.1, 1e3


def random_nodes(n, seed):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 20))
    X[:, 0:3] = rng.normal(0, 1, (n, 3))
    X[:, 3:6] = rng.normal(0, 1.5, (n, 3))
    X[:, 6:9] = rng.normal(0, 2, (n, 3))
    X[:, 9:12] = rng.normal(0, 5, (n, 3))
    X[:, 12] = rng.uniform(-0.5, 0.5, n)
    X[:, 13] = rng.normal(0, 1, n)
    X[:, 14:17] = X[:, 0:3] + [3.0, 0.0, 0.0] + rng.normal(0, 0.8, (n, 3))
    X[:, 17:20] = rng.normal(0, 1.5, (n, 3))
    return X


def test_reference_gradient_matches_central_differences():
    X = random_nodes(40, 0)
    r, dr = _reference.pa_terms(X, CAM, EPS, GAMMA)
    for c in range(14):
        h = 1e-6
        Xp, Xm = X.copy(), X.copy()
        Xp[:, c] += h
        Xm[:, c] -= h
        fd = (_reference.pa_terms(Xp, CAM, EPS, GAMMA, grad=False)[0]
              - _reference.pa_terms(Xm, CAM, EPS, GAMMA, grad=False)[0]) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-3 * np.abs(r).max())
        assert np.all(np.abs(dr[:, c] - fd) <= 1e-5 * scale + 1e-9)


@pytest.mark.skipif(_native is None, reason="compiled kernels not built")
@pytest.mark.parametrize("seed", range(3))
def test_native_agrees_with_reference(seed):
    X = random_nodes(500, seed)
    r0, d0 = _reference.pa_terms(X, CAM, EPS, GAMMA)
    r1, d1 = _native.pa_terms(X, CAM, EPS, GAMMA)
    assert np.allclose(r1, r0, rtol=1e-12, atol=1e-15)
    assert np.allclose(d1, d0, rtol=1e-9, atol=1e-12 * np.abs(d0).max())
    r2, none = _native.pa_terms(X, CAM, EPS, GAMMA, grad=False)
    assert none is None and np.allclose(r2, r1, rtol=1e-13, atol=1e-15)


def test_behind_camera_has_zero_reward():
    X = random_nodes(10, 3)
    X[:, 14:17] = X[:, 0:3] - [3.0, 0.0, 0.0]
    X[:, 6:9] = 0.0
    X[:, 12] = 0.0
    r, dr = kernels.pa_terms(X, CAM, EPS, GAMMA)
    assert np.all(r == 0) and np.all(dr == 0)
    s, sd, pc = kernels.projection_batch(X, CAM)
    assert np.all(np.isnan(s)) and np.all(pc[:, 2] < 0)


def test_empty_batch():
    r, dr = kernels.pa_terms(np.zeros((0, 20)), CAM, EPS, GAMMA)
    assert r.shape == (0,) and dr.shape == (0, 14)


def test_python_fallback_is_selected_by_environment():
    env = dict(os.environ, PERCEPTPLAN_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from perceptplan import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
