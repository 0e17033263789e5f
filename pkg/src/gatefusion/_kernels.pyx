# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-row inner loops.

Each function mirrors one in ``_kernels_py`` and takes C-contiguous float64
arrays. Leading axes are flattened by the caller.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, erf, exp

cnp.import_array()

cdef double INV_SQRT2 = 0.70710678118654752440
cdef double INV_SQRT2PI = 0.39894228040143267794


def align_forward(const double[:, :, ::1] x, Py_ssize_t t_target):
    cdef Py_ssize_t b_n = x.shape[0], t_in = x.shape[1], f_n = x.shape[2]
    out_arr = np.zeros((b_n, t_target, f_n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, f, start, stop
    cdef double count
    if t_target <= t_in:
        for b in range(b_n):
            for i in range(t_target):
                start = (i * t_in) // t_target
                stop = ((i + 1) * t_in) // t_target
                count = <double>(stop - start)
                for j in range(start, stop):
                    for f in range(f_n):
                        out[b, i, f] += x[b, j, f]
                for f in range(f_n):
                    out[b, i, f] /= count
    else:
        for b in range(b_n):
            for i in range(t_target):
                j = (i * t_in) // t_target
                for f in range(f_n):
                    out[b, i, f] = x[b, j, f]
    return out_arr


def align_backward(const double[:, :, ::1] g, Py_ssize_t t_in):
    cdef Py_ssize_t b_n = g.shape[0], t_target = g.shape[1], f_n = g.shape[2]
    out_arr = np.zeros((b_n, t_in, f_n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, f, start, stop
    cdef double count
    if t_target <= t_in:
        for b in range(b_n):
            for i in range(t_target):
                start = (i * t_in) // t_target
                stop = ((i + 1) * t_in) // t_target
                count = <double>(stop - start)
                for j in range(start, stop):
                    for f in range(f_n):
                        out[b, j, f] = g[b, i, f] / count
    else:
        for b in range(b_n):
            for i in range(t_target):
                j = (i * t_in) // t_target
                for f in range(f_n):
                    out[b, j, f] += g[b, i, f]
    return out_arr


def layer_norm_forward(const double[:, ::1] x, const double[::1] gamma,
                       const double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], f_n = x.shape[1], r, f
    y_arr = np.empty((n, f_n), dtype=np.float64)
    xhat_arr = np.empty((n, f_n), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mu, var, d, s
    for r in range(n):
        mu = 0.0
        for f in range(f_n):
            mu += x[r, f]
        mu /= f_n
        var = 0.0
        for f in range(f_n):
            d = x[r, f] - mu
            var += d * d
        var /= f_n
        s = 1.0 / sqrt(var + eps)
        inv[r] = s
        for f in range(f_n):
            d = (x[r, f] - mu) * s
            xhat[r, f] = d
            y[r, f] = d * gamma[f] + beta[f]
    return y_arr, xhat_arr, inv_arr


def layer_norm_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                        const double[::1] inv, const double[::1] gamma):
    cdef Py_ssize_t n = g.shape[0], f_n = g.shape[1], r, f
    dx_arr = np.empty((n, f_n), dtype=np.float64)
    dgamma_arr = np.zeros(f_n, dtype=np.float64)
    dbeta_arr = np.zeros(f_n, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double m1, m2, gh
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for f in range(f_n):
            gh = g[r, f] * gamma[f]
            m1 += gh
            m2 += gh * xhat[r, f]
            dgamma[f] += g[r, f] * xhat[r, f]
            dbeta[f] += g[r, f]
        m1 /= f_n
        m2 /= f_n
        for f in range(f_n):
            gh = g[r, f] * gamma[f]
            dx[r, f] = inv[r] * (gh - m1 - xhat[r, f] * m2)
    return dx_arr, dgamma_arr, dbeta_arr


def gelu_forward(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out_arr


def gelu_backward(const double[::1] x, const double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT2PI * exp(-0.5 * x[i] * x[i])
        out[i] = g[i] * (cdf + x[i] * pdf)
    return out_arr


def precision_at_hits(const cnp.int8_t[::1] ranked_labels):
    cdef Py_ssize_t n = ranked_labels.shape[0], k, h = 0
    cdef Py_ssize_t npos = 0
    for k in range(n):
        npos += ranked_labels[k]
    out_arr = np.empty(npos, dtype=np.float64)
    cdef double[::1] out = out_arr
    for k in range(n):
        if ranked_labels[k]:
            out[h] = <double>(h + 1) / <double>(k + 1)
            h += 1
    return out_arr
