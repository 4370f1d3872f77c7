# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU sequence kernel; layout contract documented in _gru_py.

The time loop runs in C: one BLAS gemm per step for the hidden-side
projections plus fused elementwise gate math.  Row-major matmuls are
expressed through column-major BLAS by the usual transpose identities.
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm, sgemm

IS_COMPILED = True

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real alpha,
                       real* a, int lda, real* b, int ldb, real beta,
                       real* c, int ldc) noexcept nogil:
    if real is float:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline void _mm_nt(real* A, real* B, real* C, int m, int n, int k,
                        real beta) noexcept nogil:
    # row-major C (m,n) = A (m,k) @ B (n,k)^T + beta*C
    _gemm(c'T', c'N', n, m, k, <real>1.0, B, k, A, k, beta, C, n)


cdef inline void _mm_nn(real* A, real* B, real* C, int m, int n, int k,
                        real beta) noexcept nogil:
    # row-major C (m,n) = A (m,k) @ B (k,n) + beta*C
    _gemm(c'N', c'N', n, m, k, <real>1.0, B, n, A, k, beta, C, n)


cdef inline void _mm_tn(real* A, real* B, real* C, int m, int n, int k,
                        real beta) noexcept nogil:
    # row-major C (m,n) = A (k,m)^T @ B (k,n) + beta*C
    _gemm(c'N', c'T', n, m, k, <real>1.0, B, n, A, m, beta, C, n)


cdef inline real _sigmoid(real x) noexcept nogil:
    return <real>(1.0 / (1.0 + exp(-<double>x)))


def gru_seq_forward(real[:, :, ::1] xp, real[:, ::1] h0, real[:, ::1] Wh):
    cdef int T = xp.shape[0], B = xp.shape[1], H3 = xp.shape[2]
    cdef int H = H3 // 3
    dtype = np.float32 if real is float else np.float64
    hs_arr = np.empty((T, B, H), dtype=dtype)
    gates_arr = np.empty((T, B, H3), dtype=dtype)
    hn_arr = np.empty((T, B, H), dtype=dtype)
    hp_arr = np.empty((B, H3), dtype=dtype)
    cdef real[:, :, ::1] hs = hs_arr
    cdef real[:, :, ::1] gates = gates_arr
    cdef real[:, :, ::1] hn = hn_arr
    cdef real[:, ::1] hp = hp_arr
    cdef int t, b, i
    cdef real r, z, n, hprev
    cdef real* h_prev_ptr
    with nogil:
        for t in range(T):
            h_prev_ptr = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            _mm_nt(h_prev_ptr, &Wh[0, 0], &hp[0, 0], B, H3, H, <real>0.0)
            for b in range(B):
                for i in range(H):
                    hprev = h_prev_ptr[b * H + i]
                    r = _sigmoid(xp[t, b, i] + hp[b, i])
                    z = _sigmoid(xp[t, b, H + i] + hp[b, H + i])
                    hn[t, b, i] = hp[b, 2 * H + i]
                    n = <real>tanh(<double>(xp[t, b, 2 * H + i] + r * hn[t, b, i]))
                    gates[t, b, i] = r
                    gates[t, b, H + i] = z
                    gates[t, b, 2 * H + i] = n
                    hs[t, b, i] = (<real>1.0 - z) * n + z * hprev
    return hs_arr, gates_arr, hn_arr


def gru_seq_backward(real[:, :, ::1] d_hs, real[:, ::1] h0,
                     real[:, :, ::1] hs, real[:, :, ::1] gates,
                     real[:, :, ::1] hn, real[:, ::1] Wh):
    cdef int T = d_hs.shape[0], B = d_hs.shape[1], H = d_hs.shape[2]
    cdef int H3 = 3 * H
    dtype = np.float32 if real is float else np.float64
    d_xp_arr = np.empty((T, B, H3), dtype=dtype)
    d_Wh_arr = np.zeros((H3, H), dtype=dtype)
    carry_arr = np.zeros((B, H), dtype=dtype)
    d_hp_arr = np.empty((B, H3), dtype=dtype)
    cdef real[:, :, ::1] d_xp = d_xp_arr
    cdef real[:, ::1] d_Wh = d_Wh_arr
    cdef real[:, ::1] carry = carry_arr
    cdef real[:, ::1] d_hp = d_hp_arr
    cdef int t, b, i
    cdef real dh, dn, dz, dn_pre, dz_pre, dr, dr_pre, r, z, n, hprev
    cdef real* h_prev_ptr
    with nogil:
        for t in range(T - 1, -1, -1):
            h_prev_ptr = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            for b in range(B):
                for i in range(H):
                    hprev = h_prev_ptr[b * H + i]
                    r = gates[t, b, i]
                    z = gates[t, b, H + i]
                    n = gates[t, b, 2 * H + i]
                    dh = d_hs[t, b, i] + carry[b, i]
                    dn = dh * (<real>1.0 - z)
                    dz = dh * (hprev - n)
                    dn_pre = dn * (<real>1.0 - n * n)
                    dz_pre = dz * z * (<real>1.0 - z)
                    dr = dn_pre * hn[t, b, i]
                    dr_pre = dr * r * (<real>1.0 - r)
                    d_xp[t, b, i] = dr_pre
                    d_xp[t, b, H + i] = dz_pre
                    d_xp[t, b, 2 * H + i] = dn_pre
                    d_hp[b, i] = dr_pre
                    d_hp[b, H + i] = dz_pre
                    d_hp[b, 2 * H + i] = dn_pre * r
                    carry[b, i] = dh * z
            _mm_tn(&d_hp[0, 0], h_prev_ptr, &d_Wh[0, 0], H3, H, B, <real>1.0)
            _mm_nn(&d_hp[0, 0], &Wh[0, 0], &carry[0, 0], B, H, H3, <real>1.0)
    return d_xp_arr, carry_arr, d_Wh_arr
