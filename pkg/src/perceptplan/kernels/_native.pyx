# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-node perception kernel; same contract as ``_reference.pa_terms``.

Values use plain doubles. Gradients come from one forward-mode pass that
carries the 14 input tangents alongside each intermediate, so they are exact
to rounding and independent of the complex-step reference.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, sin, cos

cnp.import_array()

DEF N_IN = 14
cdef double GRAVITY = 9.81
cdef double BEHIND_FRAC = 1e-6


cdef inline double sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef double node_reward(const double* x, const double* cam,
                        double eps, double gamma_vel) noexcept nogil:
    cdef double f = cam[0], cos_half = cam[1], gamma_sig = cam[2]
    cdef const double* R = cam + 3
    cdef const double* tc = cam + 12
    cdef double xi_x = x[6], xi_y = x[7], xi_z = x[8] + GRAVITY
    cdef double n = sqrt(xi_x * xi_x + xi_y * xi_y + xi_z * xi_z)
    cdef double A = xi_x / n, B = xi_y / n, C = xi_z / n
    cdef double proj = A * x[9] + B * x[10] + C * x[11]
    cdef double Ad = (x[9] - A * proj) / n
    cdef double Bd = (x[10] - B * proj) / n
    cdef double Cd = (x[11] - C * proj) / n
    cdef double dx = x[14] - x[0], dy = x[15] - x[1], dz = x[16] - x[2]
    cdef double ddx = x[17] - x[3], ddy = x[18] - x[4], ddz = x[19] - x[5]
    cdef double opc = 1.0 + C
    cdef double h = (A * dx + B * dy) / opc
    cdef double hd = (Ad * dx + A * ddx + Bd * dy + B * ddy - h * Cd) / opc
    cdef double ux = dx - A * (h + dz)
    cdef double uy = dy - B * (h + dz)
    cdef double uz = A * dx + B * dy + C * dz
    cdef double uxd = ddx - Ad * (h + dz) - A * (hd + ddz)
    cdef double uyd = ddy - Bd * (h + dz) - B * (hd + ddz)
    cdef double uzd = Ad * dx + A * ddx + Bd * dy + B * ddy + Cd * dz + C * ddz
    cdef double cs = cos(x[12]), sn = sin(x[12]), psid = x[13]
    cdef double bx = cs * ux + sn * uy
    cdef double by = -sn * ux + cs * uy
    cdef double bz = uz
    cdef double bxd = psid * by + cs * uxd + sn * uyd
    cdef double byd = -psid * bx - sn * uxd + cs * uyd
    cdef double bzd = uzd
    cdef double cx = R[0] * bx + R[1] * by + R[2] * bz + tc[0]
    cdef double cy = R[3] * bx + R[4] * by + R[5] * bz + tc[1]
    cdef double cz = R[6] * bx + R[7] * by + R[8] * bz + tc[2]
    cdef double cxd = R[0] * bxd + R[1] * byd + R[2] * bzd
    cdef double cyd = R[3] * bxd + R[4] * byd + R[5] * bzd
    cdef double czd = R[6] * bxd + R[7] * byd + R[8] * bzd
    cdef double rng = sqrt(cx * cx + cy * cy + cz * cz)
    if cz <= BEHIND_FRAC * rng:
        return 0.0
    cdef double infov = sigmoid(gamma_sig * (cz / rng - cos_half))
    cdef double sdx = f * (cxd * cz - cx * czd) / (cz * cz)
    cdef double sdy = f * (cyd * cz - cy * czd) / (cz * cz)
    return infov / (eps + gamma_vel * (sdx * sdx + sdy * sdy))


# forward mode: value in slot 0, tangents along the 14 node inputs after it
DEF ND = 15

ctypedef double dual[ND]


cdef inline void d_set(double* o, double v) noexcept nogil:
    cdef int i
    o[0] = v
    for i in range(1, ND):
        o[i] = 0.0


cdef inline void d_var(double* o, double v, int c) noexcept nogil:
    d_set(o, v)
    o[1 + c] = 1.0


cdef inline void d_add(double* o, const double* a, const double* b) noexcept nogil:
    cdef int i
    for i in range(ND):
        o[i] = a[i] + b[i]


cdef inline void d_sub(double* o, const double* a, const double* b) noexcept nogil:
    cdef int i
    for i in range(ND):
        o[i] = a[i] - b[i]


cdef inline void d_scale(double* o, const double* a, double s) noexcept nogil:
    cdef int i
    for i in range(ND):
        o[i] = s * a[i]


cdef inline void d_mul(double* o, const double* a, const double* b) noexcept nogil:
    cdef double a0 = a[0], b0 = b[0]
    cdef int i
    for i in range(1, ND):
        o[i] = a[i] * b0 + a0 * b[i]
    o[0] = a0 * b0


# o += a * b
cdef inline void d_fma(double* o, const double* a, const double* b) noexcept nogil:
    cdef double a0 = a[0], b0 = b[0]
    cdef int i
    for i in range(1, ND):
        o[i] += a[i] * b0 + a0 * b[i]
    o[0] += a0 * b0


cdef inline void d_div(double* o, const double* a, const double* b) noexcept nogil:
    cdef double inv = 1.0 / b[0]
    cdef double v = a[0] * inv
    cdef int i
    for i in range(1, ND):
        o[i] = (a[i] - v * b[i]) * inv
    o[0] = v


# o = g(a) with g(a0) = v and g'(a0) = dv
cdef inline void d_chain(double* o, const double* a, double v, double dv) noexcept nogil:
    cdef int i
    for i in range(1, ND):
        o[i] = dv * a[i]
    o[0] = v


cdef inline void d_dot3(double* o, const double* a0, const double* a1, const double* a2,
                        const double* b0, const double* b1, const double* b2) noexcept nogil:
    d_mul(o, a0, b0)
    d_fma(o, a1, b1)
    d_fma(o, a2, b2)


# o = r0 * a + r1 * b + r2 * c + t
cdef inline void d_lin3(double* o, double r0, const double* a, double r1, const double* b,
                        double r2, const double* c, double t) noexcept nogil:
    cdef int i
    for i in range(ND):
        o[i] = r0 * a[i] + r1 * b[i] + r2 * c[i]
    o[0] += t


cdef double node_reward_grad(const double* xr, const double* cam, double eps,
                             double gamma_vel, double* out) noexcept nogil:
    """Reward and its gradient (written to ``out[0:14]``) in one forward pass."""
    cdef double f = cam[0], cos_half = cam[1], gamma_sig = cam[2]
    cdef const double* R = cam + 3
    cdef const double* tc = cam + 12
    cdef dual x[14]
    cdef dual xi_z, n, A, B, C, proj, Ad, Bd, Cd, t1, t2, t3
    cdef dual dx, dy, dz, ddx, ddy, ddz, opc, h, hd, hz, hdz
    cdef dual ux, uy, uz, uxd, uyd, uzd, cs, sn, bx, by, bxd, byd
    cdef dual cx, cy, cz, cxd, cyd, czd, rng, infov, sdx, sdy, den
    cdef double v, e, sg
    cdef int i
    for i in range(14):
        d_var(x[i], xr[i], i)
    d_scale(xi_z, x[8], 1.0)
    xi_z[0] += GRAVITY
    d_dot3(t1, x[6], x[7], xi_z, x[6], x[7], xi_z)
    v = sqrt(t1[0])
    d_chain(n, t1, v, 0.5 / v)
    d_div(A, x[6], n)
    d_div(B, x[7], n)
    d_div(C, xi_z, n)
    d_dot3(proj, A, B, C, x[9], x[10], x[11])
    d_mul(t1, A, proj)
    d_sub(t1, x[9], t1)
    d_div(Ad, t1, n)
    d_mul(t1, B, proj)
    d_sub(t1, x[10], t1)
    d_div(Bd, t1, n)
    d_mul(t1, C, proj)
    d_sub(t1, x[11], t1)
    d_div(Cd, t1, n)
    # relative position and velocity; the obstacle terms are constants
    for i in range(ND):
        dx[i] = -x[0][i]
        dy[i] = -x[1][i]
        dz[i] = -x[2][i]
        ddx[i] = -x[3][i]
        ddy[i] = -x[4][i]
        ddz[i] = -x[5][i]
    dx[0] += xr[14]
    dy[0] += xr[15]
    dz[0] += xr[16]
    ddx[0] += xr[17]
    ddy[0] += xr[18]
    ddz[0] += xr[19]
    d_scale(opc, C, 1.0)
    opc[0] += 1.0
    d_mul(t1, A, dx)
    d_fma(t1, B, dy)
    d_div(h, t1, opc)
    # hd = (Ad dx + A ddx + Bd dy + B ddy - h Cd) / opc
    d_mul(t1, Ad, dx)
    d_fma(t1, A, ddx)
    d_fma(t1, Bd, dy)
    d_fma(t1, B, ddy)
    d_mul(t2, h, Cd)
    d_sub(t1, t1, t2)
    d_div(hd, t1, opc)
    d_add(hz, h, dz)
    d_add(hdz, hd, ddz)
    d_mul(t1, A, hz)
    d_sub(ux, dx, t1)
    d_mul(t1, B, hz)
    d_sub(uy, dy, t1)
    d_dot3(uz, A, B, C, dx, dy, dz)
    d_mul(t1, Ad, hz)
    d_fma(t1, A, hdz)
    d_sub(uxd, ddx, t1)
    d_mul(t1, Bd, hz)
    d_fma(t1, B, hdz)
    d_sub(uyd, ddy, t1)
    d_mul(uzd, Ad, dx)
    d_fma(uzd, A, ddx)
    d_fma(uzd, Bd, dy)
    d_fma(uzd, B, ddy)
    d_fma(uzd, Cd, dz)
    d_fma(uzd, C, ddz)
    d_chain(cs, x[12], cos(xr[12]), -sin(xr[12]))
    d_chain(sn, x[12], sin(xr[12]), cos(xr[12]))
    d_mul(bx, cs, ux)
    d_fma(bx, sn, uy)
    d_mul(by, cs, uy)
    d_mul(t1, sn, ux)
    d_sub(by, by, t1)
    # bxd = psid by + cs uxd + sn uyd ; byd = -psid bx - sn uxd + cs uyd
    d_mul(bxd, x[13], by)
    d_fma(bxd, cs, uxd)
    d_fma(bxd, sn, uyd)
    d_mul(byd, cs, uyd)
    d_mul(t1, x[13], bx)
    d_fma(t1, sn, uxd)
    d_sub(byd, byd, t1)
    d_lin3(cx, R[0], bx, R[1], by, R[2], uz, tc[0])
    d_lin3(cy, R[3], bx, R[4], by, R[5], uz, tc[1])
    d_lin3(cz, R[6], bx, R[7], by, R[8], uz, tc[2])
    d_lin3(cxd, R[0], bxd, R[1], byd, R[2], uzd, 0.0)
    d_lin3(cyd, R[3], bxd, R[4], byd, R[5], uzd, 0.0)
    d_lin3(czd, R[6], bxd, R[7], byd, R[8], uzd, 0.0)
    d_dot3(t1, cx, cy, cz, cx, cy, cz)
    v = sqrt(t1[0])
    d_chain(rng, t1, v, 0.5 / v)
    if cz[0] <= BEHIND_FRAC * rng[0]:
        for i in range(14):
            out[i] = 0.0
        return 0.0
    d_div(t1, cz, rng)
    t1[0] -= cos_half
    d_scale(t1, t1, gamma_sig)
    if t1[0] >= 0.0:
        e = exp(-t1[0])
        sg = 1.0 / (1.0 + e)
    else:
        e = exp(t1[0])
        sg = e / (1.0 + e)
    d_chain(infov, t1, sg, sg * (1.0 - sg))
    # projected image velocity
    d_mul(t1, cz, cz)
    d_mul(t2, cxd, cz)
    d_mul(t3, cx, czd)
    d_sub(t2, t2, t3)
    d_div(sdx, t2, t1)
    d_scale(sdx, sdx, f)
    d_mul(t2, cyd, cz)
    d_mul(t3, cy, czd)
    d_sub(t2, t2, t3)
    d_div(sdy, t2, t1)
    d_scale(sdy, sdy, f)
    d_mul(den, sdx, sdx)
    d_fma(den, sdy, sdy)
    d_scale(den, den, gamma_vel)
    den[0] += eps
    d_div(t1, infov, den)
    for i in range(14):
        out[i] = t1[1 + i]
    return t1[0]


def pa_terms(X, cam, double eps, double gamma_vel, bint grad=True):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Xa = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] ca = np.ascontiguousarray(cam, dtype=np.float64)
    cdef Py_ssize_t N = Xa.shape[0], k
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] r = np.empty(N)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] dr
    cdef double* xp = &Xa[0, 0] if N > 0 else NULL
    cdef const double* cp = &ca[0]
    if grad:
        dr = np.empty((N, N_IN))
    with nogil:
        for k in range(N):
            if grad:
                r[k] = node_reward_grad(xp + k * 20, cp, eps, gamma_vel, &dr[k, 0])
            else:
                r[k] = node_reward(xp + k * 20, cp, eps, gamma_vel)
    return r, (dr if grad else None)
