# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused scaled-dot-product attention, one (query, key) block at a time.

Scores, softmax and the value product for one head stay in a cache-sized
buffer. Matrix products go straight to BLAS dgemm. Queries arrive pre-scaled.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm(bint ta, bint tb, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double beta, double* c, int ldc) noexcept nogil:
    # row-major C (m x n) = op(A) @ op(B) + beta * C
    cdef char opa = b'T' if ta else b'N'
    cdef char opb = b'T' if tb else b'N'
    cdef double one = 1.0
    dgemm(&opb, &opa, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def attention_forward(double[:, :, ::1] q, double[:, :, ::1] k, double[:, :, ::1] v):
    cdef int nb = q.shape[0], tq = q.shape[1], d = q.shape[2], tk = k.shape[1], dv = v.shape[2]
    out_arr = np.empty((nb, tq, dv), dtype=np.float64)
    w_arr = np.empty((nb, tq, tk), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, ::1] w = w_arr
    cdef int n, i, j
    cdef double mx, s, inv
    cdef double* row
    with nogil:
        for n in range(nb):
            _gemm(False, True, tq, tk, d, &q[n, 0, 0], d, &k[n, 0, 0], d, 0.0, &w[n, 0, 0], tk)
            for i in range(tq):
                row = &w[n, i, 0]
                mx = row[0]
                for j in range(1, tk):
                    if row[j] > mx:
                        mx = row[j]
                s = 0.0
                for j in range(tk):
                    row[j] = exp(row[j] - mx)
                    s += row[j]
                inv = 1.0 / s
                for j in range(tk):
                    row[j] *= inv
            _gemm(False, False, tq, dv, tk, &w[n, 0, 0], tk, &v[n, 0, 0], dv, 0.0, &out[n, 0, 0], dv)
    return out_arr, w_arr


def attention_backward(double[:, :, ::1] go, double[:, :, ::1] q, double[:, :, ::1] k,
                       double[:, :, ::1] v, double[:, :, ::1] w):
    cdef int nb = q.shape[0], tq = q.shape[1], d = q.shape[2], tk = k.shape[1], dv = v.shape[2]
    gq_arr = np.empty((nb, tq, d), dtype=np.float64)
    gk_arr = np.empty((nb, tk, d), dtype=np.float64)
    gv_arr = np.empty((nb, tk, dv), dtype=np.float64)
    buf_arr = np.empty((tq, tk), dtype=np.float64)
    cdef double[:, :, ::1] gq = gq_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double[:, :, ::1] gv = gv_arr
    cdef double[:, ::1] gs = buf_arr
    cdef int n, i, j
    cdef double dot
    cdef double* wr
    cdef double* gr
    with nogil:
        for n in range(nb):
            # d(weights) = go @ v^T, then softmax adjoint in place
            _gemm(False, True, tq, tk, dv, &go[n, 0, 0], dv, &v[n, 0, 0], dv, 0.0, &gs[0, 0], tk)
            _gemm(True, False, tk, dv, tq, &w[n, 0, 0], tk, &go[n, 0, 0], dv, 0.0, &gv[n, 0, 0], dv)
            for i in range(tq):
                wr = &w[n, i, 0]
                gr = &gs[i, 0]
                dot = 0.0
                for j in range(tk):
                    dot += wr[j] * gr[j]
                for j in range(tk):
                    gr[j] = wr[j] * (gr[j] - dot)
            _gemm(False, False, tq, d, tk, &gs[0, 0], tk, &k[n, 0, 0], d, 0.0, &gq[n, 0, 0], d)
            _gemm(True, False, tk, d, tq, &gs[0, 0], tk, &q[n, 0, 0], d, 0.0, &gk[n, 0, 0], d)
    return gq_arr, gk_arr, gv_arr
