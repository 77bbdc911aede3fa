# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the planar tracker step and the GAE recursion.

Arithmetic mirrors ``_kernels_py.py`` term by term; no fast-math, so the
mirror symmetry of the dynamics survives compilation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, M_PI

cnp.import_array()

N_TERMS = 7
BACKEND = "cython"


cdef void _step_row(const double[::1] s, const double[::1] act, const double[::1] p,
                    int k, int m, double[::1] out, double[::1] terms,
                    double[::1] a, double[::1] tau, double[::1] thd_new) noexcept nogil:
    cdef int n = 2 * k + m
    cdef int TH = 6, THD = 6 + n, PH = 6 + 2 * n, HALF = 7 + 2 * n, CMD = 8 + 2 * n
    cdef int TER = 11 + 2 * n, A1 = 14 + 2 * n, A2 = 14 + 3 * n, PAR = 14 + 4 * n
    cdef double dt = p[0], period = p[1], kp = p[2], kd = p[3], inertia = p[4]
    cdef double c1 = p[5], c2 = p[6], c3 = p[7], c4 = p[8]
    cdef double dx = p[9], dy = p[10], dw = p[11], zone_w = p[12], a_clip = p[13], sigma = p[14]
    cdef double a_scale = p[22]
    cdef int li = 1 if k >= 2 else 0
    cdef double kp_s = s[PAR], kd_s = s[PAR + 1], strength = s[PAR + 2]
    cdef double drag_s = s[PAR + 3], delay = s[PAR + 4]
    cdef int i
    cdef double applied, v, th_n, center = 0.0

    for i in range(n):
        v = act[i]
        if v < -a_clip:
            v = -a_clip
        elif v > a_clip:
            v = a_clip
        a[i] = v
        applied = a_scale * (s[A1 + i] if delay > 0.5 else v)
        tau[i] = strength * (kp * kp_s * (applied - s[TH + i]) - kd * kd_s * s[THD + i])
        thd_new[i] = s[THD + i] + tau[i] / inertia * dt
        th_n = s[TH + i] + thd_new[i] * dt
        out[TH + i] = th_n
        out[THD + i] = thd_new[i]
        if i >= 2 * k:
            center += th_n

    cdef double sin_phi = s[HALF] * sin(s[PH])
    cdef double st_l = 1.0 if sin_phi > 0.0 else 0.0
    cdef double st_r = 1.0 if sin_phi < 0.0 else 0.0

    cdef double py = s[1]
    cdef double zone
    if py > zone_w:
        zone = s[TER]
    elif py < -zone_w:
        zone = s[TER + 2]
    else:
        zone = s[TER + 1]
    cdef double drag = zone * drag_s

    cdef double vx = s[3], vy = s[4], w = s[5]
    # u_L = -thd_L, u_R = +thd_R
    cdef double lat = (-thd_new[li]) * st_l - thd_new[k + li] * st_r
    cdef double fx = c1 * ((-thd_new[0]) * st_l + thd_new[k] * st_r) - dx * vx * drag
    cdef double fy = c2 * lat - dy * vy * drag
    cdef double tz = c3 * lat + c4 * center - dw * w * drag
    cdef double vx_n = vx + fx * dt
    cdef double vy_n = vy + fy * dt
    cdef double w_n = w + tz * dt

    cdef double psi = s[2]
    cdef double cp = cos(psi), sp = sin(psi)
    out[0] = s[0] + (cp * vx_n - sp * vy_n) * dt
    out[1] = py + (sp * vx_n + cp * vy_n) * dt
    out[2] = psi + w_n * dt
    out[3] = vx_n
    out[4] = vy_n
    out[5] = w_n
    cdef double ph = s[PH] + 2.0 * M_PI * dt / period
    if ph >= M_PI:
        out[PH] = ph - M_PI
        out[HALF] = -s[HALF]
    else:
        out[PH] = ph
        out[HALF] = s[HALF]
    for i in range(3):
        out[CMD + i] = s[CMD + i]
        out[TER + i] = s[TER + i]
    for i in range(n):
        out[A1 + i] = a[i]
        out[A2 + i] = s[A1 + i]
    for i in range(5):
        out[PAR + i] = s[PAR + i]
    out[PAR + 5] = s[PAR + 5] + 1.0

    cdef double ex = vx_n - s[CMD], ey = vy_n - s[CMD + 1], ew = w_n - s[CMD + 2]
    terms[0] = p[15] * exp(-(ex * ex + ey * ey) / sigma)
    terms[1] = p[16] * exp(-(ew * ew) / sigma)
    terms[2] = p[17]
    cdef double r1 = 0.0, r2 = 0.0, r3 = 0.0, sw_l = 0.0, sw_r = 0.0, d, u
    for i in range(n):
        d = a[i] - s[A1 + i]
        r1 += d * d
        d = a[i] - 2.0 * s[A1 + i] + s[A2 + i]
        r2 += d * d
        r3 += tau[i] * tau[i]
    for i in range(k):
        u = -thd_new[i]
        sw_l += (1.0 - st_l) * u * u
        u = thd_new[k + i]
        sw_r += (1.0 - st_r) * u * u
    terms[3] = p[18] * r1
    terms[4] = p[19] * r2
    terms[5] = p[20] * r3
    terms[6] = p[21] * (sw_l + sw_r)


def step_batch(state, action, params, int k, int m):
    cdef double[:, ::1] S = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(action, dtype=np.float64)
    cdef double[::1] P = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t rows = S.shape[0], r
    cdef int n = 2 * k + m
    out_arr = np.empty_like(np.asarray(S))
    terms_arr = np.empty((rows, 7))
    cdef double[:, ::1] O = out_arr
    cdef double[:, ::1] T = terms_arr
    cdef double[::1] a = np.empty(n)
    cdef double[::1] tau = np.empty(n)
    cdef double[::1] thd = np.empty(n)
    with nogil:
        for r in range(rows):
            _step_row(S[r], A[r], P, k, m, O[r], T[r], a, tau, thd)
    return out_arr, terms_arr


def gae(rewards, values, dones, last_values, double gamma, double lam):
    cdef double[:, ::1] R = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef double[:, ::1] V = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] D = np.ascontiguousarray(dones, dtype=np.float64)
    cdef double[::1] L = np.ascontiguousarray(last_values, dtype=np.float64)
    cdef Py_ssize_t T = R.shape[0], N = R.shape[1], t, j
    adv_arr = np.zeros((T, N))
    cdef double[:, ::1] adv = adv_arr
    cdef double running, next_v, notdone, delta
    with nogil:
        for j in range(N):
            running = 0.0
            next_v = L[j]
            for t in range(T - 1, -1, -1):
                notdone = 1.0 - D[t, j]
                delta = R[t, j] + gamma * next_v * notdone - V[t, j]
                running = delta + gamma * lam * notdone * running
                adv[t, j] = running
                next_v = V[t, j]
    return adv_arr, adv_arr + np.asarray(V)
