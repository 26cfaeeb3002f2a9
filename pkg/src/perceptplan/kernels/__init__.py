"""Hot per-node kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set
``PERCEPTPLAN_KERNELS=python`` to force the numpy implementation.
"""

from __future__ import annotations

import importlib
import os

import numpy as np

from . import _reference
from ._reference import projection_batch

_native = None
if os.environ.get("PERCEPTPLAN_KERNELS", "").lower() != "python":
    try:
        _native = importlib.import_module(__name__ + "._native")
    except ImportError:  # extension not built
        _native = None

BACKEND = "native" if _native is not None else "python"
pa_terms = _native.pa_terms if _native is not None else _reference.pa_terms


def camera_vector(cam) -> np.ndarray:
    """Pack a :class:`~perceptplan.geometry.CameraModel` for the kernels."""
    T = cam.body_to_camera
    return np.concatenate([
        [cam.f, np.cos(cam.theta / 2.0), cam.gamma_sig],
        T.rotation.rotation_matrix().ravel(),
        T.translation,
    ])


def node_row(p, v, a, j, psi, psidot, po, vo) -> np.ndarray:
    return np.concatenate([p, v, a, j, [psi, psidot], po, vo]).astype(float)


def projection_state(p, v, a, j, psi, psidot, po, vo, cam):
    """``(s, sdot, pc)`` for a single agent/obstacle state pair."""
    X = node_row(p, v, a, j, psi, psidot, po, vo)[None, :]
    s, sd, pc = projection_batch(X, camera_vector(cam))
    return s[0], sd[0], pc[0]


__all__ = ["BACKEND", "pa_terms", "projection_batch", "projection_state", "camera_vector", "node_row"]
