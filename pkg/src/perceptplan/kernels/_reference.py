"""Pure numpy implementation of the per-node perception kernels.

Node layout (columns of ``X``)::

    0:3  p      agent position          12   psi
    3:6  v      agent velocity          13   psidot
    6:9  a      agent acceleration      14:17 obstacle position
    9:12 j      agent jerk              17:20 obstacle velocity

``cam`` packs ``[f, cos(theta/2), gamma_sig, R_cb (row-major 9), t_cb (3)]``.
Gradients w.r.t. the first 14 columns are taken by complex-step
differentiation, which is exact to rounding because every operation in
the forward pass is complex-analytic.
"""

from __future__ import annotations

import numpy as np

GRAVITY = 9.81
N_IN = 14
STEP = 1e-30
# camera-frame depth below this fraction of the range counts as "behind"
BEHIND_FRAC = 1e-6


def _forward(X, cam):
    f, cos_half, gamma_sig = cam[0], cam[1], cam[2]
    R = cam[3:12].reshape(3, 3)
    tc = cam[12:15]

    px, py, pz = X[..., 0], X[..., 1], X[..., 2]
    vx, vy, vz = X[..., 3], X[..., 4], X[..., 5]
    xi_x, xi_y, xi_z = X[..., 6], X[..., 7], X[..., 8] + GRAVITY
    jx, jy, jz = X[..., 9], X[..., 10], X[..., 11]
    psi, psid = X[..., 12], X[..., 13]

    n = np.sqrt(xi_x * xi_x + xi_y * xi_y + xi_z * xi_z)
    A, B, C = xi_x / n, xi_y / n, xi_z / n
    proj = A * jx + B * jy + C * jz
    Ad, Bd, Cd = (jx - A * proj) / n, (jy - B * proj) / n, (jz - C * proj) / n

    dx, dy, dz = X[..., 14] - px, X[..., 15] - py, X[..., 16] - pz
    ddx, ddy, ddz = X[..., 17] - vx, X[..., 18] - vy, X[..., 19] - vz

    opc = 1.0 + C
    h = (A * dx + B * dy) / opc
    hd = (Ad * dx + A * ddx + Bd * dy + B * ddy - h * Cd) / opc
    ux = dx - A * (h + dz)
    uy = dy - B * (h + dz)
    uz = A * dx + B * dy + C * dz
    uxd = ddx - Ad * (h + dz) - A * (hd + ddz)
    uyd = ddy - Bd * (h + dz) - B * (hd + ddz)
    uzd = Ad * dx + A * ddx + Bd * dy + B * ddy + Cd * dz + C * ddz

    cs, sn = np.cos(psi), np.sin(psi)
    bx = cs * ux + sn * uy
    by = -sn * ux + cs * uy
    bz = uz
    bxd = psid * by + cs * uxd + sn * uyd
    byd = -psid * bx - sn * uxd + cs * uyd
    bzd = uzd

    cx = R[0, 0] * bx + R[0, 1] * by + R[0, 2] * bz + tc[0]
    cy = R[1, 0] * bx + R[1, 1] * by + R[1, 2] * bz + tc[1]
    cz = R[2, 0] * bx + R[2, 1] * by + R[2, 2] * bz + tc[2]
    cxd = R[0, 0] * bxd + R[0, 1] * byd + R[0, 2] * bzd
    cyd = R[1, 0] * bxd + R[1, 1] * byd + R[1, 2] * bzd
    czd = R[2, 0] * bxd + R[2, 1] * byd + R[2, 2] * bzd
    rng = np.sqrt(cx * cx + cy * cy + cz * cz)
    return f, cos_half, gamma_sig, (cx, cy, cz), (cxd, cyd, czd), rng


def _sigmoid(x):
    with np.errstate(over="ignore", invalid="ignore"):
        pos = 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        neg = ex / (1.0 + ex)
    return np.where(np.real(x) >= 0.0, pos, neg)


def _reward(X, cam, eps, gamma_vel):
    f, cos_half, gamma_sig, (cx, cy, cz), (cxd, cyd, czd), rng = _forward(X, cam)
    infov = _sigmoid(gamma_sig * (cz / rng - cos_half))
    front = np.real(cz) > BEHIND_FRAC * np.real(rng)
    czs = np.where(front, cz, 1.0)
    sdx = f * (cxd * czs - cx * czd) / (czs * czs)
    sdy = f * (cyd * czs - cy * czd) / (czs * czs)
    r = infov / (eps + gamma_vel * (sdx * sdx + sdy * sdy))
    return np.where(front, r, 0.0 * r)


def pa_terms(X, cam, eps, gamma_vel, grad=True):
    """Perception reward ``inFOV / (eps + gamma_vel |sdot|^2)`` per node.

    Returns ``(r, dr)`` with ``dr[k, c] = d r_k / d X[k, c]`` for the first
    14 columns, or ``(r, None)`` when ``grad`` is false.
    """
    X = np.ascontiguousarray(X, dtype=float)
    cam = np.asarray(cam, dtype=float)
    r = np.real(_reward(X, cam, eps, gamma_vel))
    if not grad:
        return r, None
    N = X.shape[0]
    Xc = np.broadcast_to(X, (N_IN, N, X.shape[1])).astype(complex)
    idx = np.arange(N_IN)
    Xc[idx, :, idx] += 1j * STEP
    dr = np.imag(_reward(Xc, cam, eps, gamma_vel)) / STEP
    return r, np.ascontiguousarray(dr.T)


def projection_batch(X, cam):
    """Camera-frame position, image-plane point ``s`` and its time derivative per node.

    Returns ``(s, sdot, pc)``; rows behind the camera carry ``nan`` in ``s`` and ``sdot``.
    """
    X = np.asarray(X, dtype=float)
    f, _, _, (cx, cy, cz), (cxd, cyd, czd), _ = _forward(X, np.asarray(cam, dtype=float))
    pc = np.stack([cx, cy, cz], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        front = cz > 0.0
        s = np.where(front[..., None], f * np.stack([cx, cy], axis=-1) / cz[..., None], np.nan)
        sd = np.stack([(cxd * cz - cx * czd), (cyd * cz - cy * czd)], axis=-1) * f / (cz * cz)[..., None]
        sd = np.where(front[..., None], sd, np.nan)
    return s, sd, pc
