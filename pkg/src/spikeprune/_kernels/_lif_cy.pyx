# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused LIF time-loop kernels.

Same contract as lif_numpy; the recurrence runs as a tight C loop with
the time axis outermost so the inner loop stays contiguous. Arithmetic
is done in the array's own precision to stay bit-compatible with the
numpy fallback (the extension is compiled with -ffp-contract=off).
"""

import numpy as np

cimport cython


ctypedef fused real:
    float
    double


def lif_forward(real[:, ::1] current, double tau, double u_th, double u_rest,
                bint soft, double width, bint relaxed):
    cdef Py_ssize_t T = current.shape[0]
    cdef Py_ssize_t M = current.shape[1]
    dtype = np.float32 if real is float else np.float64
    spikes_arr = np.empty((T, M), dtype=dtype)
    u_pre_arr = np.empty((T, M), dtype=dtype)
    u_arr = np.full(M, u_rest, dtype=dtype)
    cdef real[:, ::1] spikes = spikes_arr
    cdef real[:, ::1] u_pre = u_pre_arr
    cdef real[::1] u = u_arr
    cdef real tau_c = <real> tau
    cdef real u_th_c = <real> u_th
    cdef real u_rest_c = <real> u_rest
    cdef real width_c = <real> width
    cdef real uu, v, o
    cdef Py_ssize_t t, m

    for t in range(T):
        for m in range(M):
            uu = u[m]
            uu = uu + (-(uu - u_rest_c) + current[t, m]) / tau_c
            v = uu - u_th_c
            if relaxed:
                o = v / width_c + <real> 0.5
                if o < 0.0:
                    o = 0.0
                elif o > 1.0:
                    o = 1.0
            else:
                o = 1.0 if v >= 0.0 else 0.0
            u_pre[t, m] = uu
            spikes[t, m] = o
            if soft:
                u[m] = uu - o * u_th_c
            else:
                u[m] = uu * (<real> 1.0 - o)
    return spikes_arr, u_pre_arr


def lif_backward(real[:, ::1] grad_out, real[:, ::1] spikes, real[:, ::1] u_pre,
                 double tau, double u_th, double u_rest,
                 bint soft, double width, bint relaxed):
    cdef Py_ssize_t T = grad_out.shape[0]
    cdef Py_ssize_t M = grad_out.shape[1]
    dtype = np.float32 if real is float else np.float64
    grad_current_arr = np.empty((T, M), dtype=dtype)
    gu_post_arr = np.zeros(M, dtype=dtype)
    cdef real[:, ::1] grad_current = grad_current_arr
    cdef real[::1] gu_post = gu_post_arr
    cdef real tau_c = <real> tau
    cdef real u_th_c = <real> u_th
    cdef real u_rest_c = <real> u_rest
    cdef real half = <real> (width / 2.0)
    cdef real inv_width = <real> (1.0 / width)
    # Scalar-parameter grads are accumulated in double regardless of the
    # array precision; a long sum in f32 would lose low-order terms.
    cdef double g_tau = 0.0
    cdef double g_uth = 0.0
    cdef real o, up, v, surr, go, gv, gu_pre, u_prev
    cdef Py_ssize_t t, m

    for t in range(T - 1, -1, -1):
        for m in range(M):
            o = spikes[t, m]
            up = u_pre[t, m]
            v = up - u_th_c
            surr = inv_width if (v < half and v > -half) else <real> 0.0
            go = grad_out[t, m]
            if soft:
                go = go + gu_post[m] * (-u_th_c)
                gu_pre = gu_post[m]
                g_uth += <double> (gu_post[m] * (-o))
            else:
                go = go + gu_post[m] * (-up)
                gu_pre = gu_post[m] * (<real> 1.0 - o)
            gv = go * surr
            gu_pre = gu_pre + gv
            g_uth -= <double> gv
            if t == 0:
                u_prev = u_rest_c
            elif soft:
                u_prev = u_pre[t - 1, m] - spikes[t - 1, m] * u_th_c
            else:
                u_prev = u_pre[t - 1, m] * (<real> 1.0 - spikes[t - 1, m])
            grad_current[t, m] = gu_pre / tau_c
            g_tau += <double> (gu_pre * (-(up - u_prev) / tau_c))
            gu_post[m] = gu_pre * (<real> 1.0 - <real> 1.0 / tau_c)
    return grad_current_arr, g_tau, g_uth
