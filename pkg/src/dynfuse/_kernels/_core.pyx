# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled contraction kernels.

Mirrors ``_fallback`` exactly (same signatures, same array conventions).
The batched kernels drive BLAS dgemm directly on the row-major buffers and
fuse the depth loop, so they skip the temporaries and dispatch overhead of
the numpy path; the single-item kernels are plain loops, which win at the
small shapes they are called with. Single-threaded by design: results must
be reproducible for a fixed input regardless of machine load.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                       double* a, int lda, double* b, int ldb, double beta,
                       double* c, int ldc) noexcept nogil:
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


# Row-major GEMM wrappers (column-major BLAS on transposed views).
cdef inline void rm_nn(double* x, double* y, double* z,
                       int m, int n, int k, double alpha, double beta) noexcept nogil:
    # Z(m,n) = alpha * X(m,k) @ Y(k,n) + beta * Z
    _gemm(b'N', b'N', n, m, k, alpha, y, n, x, k, beta, z, n)


cdef inline void rm_nt(double* x, double* y, double* z,
                       int m, int n, int k, double alpha, double beta) noexcept nogil:
    # Z(m,n) = alpha * X(m,k) @ Y(n,k)^T + beta * Z
    _gemm(b'T', b'N', n, m, k, alpha, y, k, x, k, beta, z, n)


cdef inline void rm_tn(double* x, double* y, double* z,
                       int m, int n, int k, double alpha, double beta) noexcept nogil:
    # Z(m,n) = alpha * X(k,m)^T @ Y(k,n) + beta * Z
    _gemm(b'N', b'T', n, m, k, alpha, y, n, x, m, beta, z, n)


def mode3_contract(double[:, :, ::1] t, double[::1] s):
    cdef Py_ssize_t nz = t.shape[0], p = t.shape[1], q = t.shape[2]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((p, q))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t z, i, j
    cdef double sz
    for z in range(nz):
        sz = s[z]
        if sz == 0.0:
            continue
        for i in range(p):
            for j in range(q):
                o[i, j] += sz * t[z, i, j]
    return out


def mode3_contract_backward(double[:, :, ::1] t, double[::1] s, double[:, ::1] g):
    cdef Py_ssize_t nz = t.shape[0], p = t.shape[1], q = t.shape[2]
    cdef cnp.ndarray[double, ndim=3] dt = np.empty((nz, p, q))
    cdef cnp.ndarray[double, ndim=1] ds = np.zeros(nz)
    cdef double[:, :, ::1] dtv = dt
    cdef double[::1] dsv = ds
    cdef Py_ssize_t z, i, j
    cdef double sz, acc
    for z in range(nz):
        sz = s[z]
        acc = 0.0
        for i in range(p):
            for j in range(q):
                dtv[z, i, j] = g[i, j] * sz
                acc += g[i, j] * t[z, i, j]
        dsv[z] = acc
    return dt, ds


def cp_contract(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double[::1] s):
    cdef Py_ssize_t p = a.shape[0], q = b.shape[0], nz = c.shape[0], r = a.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((p, q))
    cdef cnp.ndarray[double, ndim=1] w = np.zeros(r)
    cdef double[:, ::1] o = out
    cdef double[::1] wv = w
    cdef Py_ssize_t z, i, j, k
    cdef double coef
    for k in range(r):
        for z in range(nz):
            wv[k] += c[z, k] * s[z]
    for k in range(r):
        if wv[k] == 0.0:
            continue
        for i in range(p):
            coef = a[i, k] * wv[k]
            for j in range(q):
                o[i, j] += coef * b[j, k]
    return out


def cp_contract_backward(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                         double[::1] s, double[:, ::1] g):
    cdef Py_ssize_t p = a.shape[0], q = b.shape[0], nz = c.shape[0], r = a.shape[1]
    cdef cnp.ndarray[double, ndim=2] da = np.zeros((p, r))
    cdef cnp.ndarray[double, ndim=2] db = np.zeros((q, r))
    cdef cnp.ndarray[double, ndim=2] dc = np.zeros((nz, r))
    cdef cnp.ndarray[double, ndim=1] ds = np.zeros(nz)
    cdef cnp.ndarray[double, ndim=1] w = np.zeros(r)
    cdef cnp.ndarray[double, ndim=1] h = np.zeros(r)
    cdef double[:, ::1] dav = da, dbv = db, dcv = dc
    cdef double[::1] dsv = ds, wv = w, hv = h
    cdef Py_ssize_t z, i, j, k
    cdef double gb, acc
    for k in range(r):
        for z in range(nz):
            wv[k] += c[z, k] * s[z]
    for k in range(r):
        acc = 0.0
        for i in range(p):
            gb = 0.0
            for j in range(q):
                gb += g[i, j] * b[j, k]
            dav[i, k] = gb * wv[k]
            acc += a[i, k] * gb
        hv[k] = acc
        for j in range(q):
            gb = 0.0
            for i in range(p):
                gb += g[i, j] * a[i, k]
            dbv[j, k] = gb * wv[k]
        for z in range(nz):
            dcv[z, k] = s[z] * hv[k]
            dsv[z] += c[z, k] * hv[k]
    return da, db, dc, ds


def mode3_apply(double[:, :, ::1] t, double[:, ::1] S, double[:, ::1] H):
    """out[b] = (sum_z S[b,z] * t[z]) @ H[b] via one (B, z*p) x (q) GEMM."""
    cdef int nz = <int> t.shape[0], p = <int> t.shape[1], q = <int> t.shape[2]
    cdef int nb = <int> H.shape[0]
    cdef cnp.ndarray[double, ndim=2] proj = np.empty((nb, nz * p))
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((nb, p))
    cdef double[:, ::1] pv = proj, ov = out
    cdef Py_ssize_t bi, z, i
    cdef double sz
    with nogil:
        # proj[b, z*p+i] = sum_q t[z,i,q] * H[b,q]
        rm_nt(&H[0, 0], &t[0, 0, 0], &pv[0, 0], nb, nz * p, q, 1.0, 0.0)
        for bi in range(nb):
            for z in range(nz):
                sz = S[bi, z]
                if sz == 0.0:
                    continue
                for i in range(p):
                    ov[bi, i] += sz * pv[bi, z * p + i]
    return out


def mode3_apply_backward(double[:, :, ::1] t, double[:, ::1] S, double[:, ::1] H,
                         double[:, ::1] dPre):
    cdef int nz = <int> t.shape[0], p = <int> t.shape[1], q = <int> t.shape[2]
    cdef int nb = <int> H.shape[0]
    cdef cnp.ndarray[double, ndim=2] proj = np.empty((nb, nz * p))
    cdef cnp.ndarray[double, ndim=3] dt = np.empty((nz, p, q))
    cdef cnp.ndarray[double, ndim=2] dS = np.zeros((nb, nz))
    cdef cnp.ndarray[double, ndim=2] dH = np.zeros((nb, q))
    cdef cnp.ndarray[double, ndim=2] weighted = np.empty((nb, p))
    cdef double[:, ::1] pv = proj, dSv = dS, dHv = dH, wv = weighted
    cdef double[:, :, ::1] dtv = dt
    cdef Py_ssize_t bi, z, i
    cdef double acc
    with nogil:
        rm_nt(&H[0, 0], &t[0, 0, 0], &pv[0, 0], nb, nz * p, q, 1.0, 0.0)
        for z in range(nz):
            for bi in range(nb):
                acc = 0.0
                for i in range(p):
                    acc += dPre[bi, i] * pv[bi, z * p + i]
                    wv[bi, i] = dPre[bi, i] * S[bi, z]
                dSv[bi, z] = acc
            # dt[z] = weighted^T @ H ; dH += weighted @ t[z]
            rm_tn(&wv[0, 0], &H[0, 0], &dtv[z, 0, 0], p, q, nb, 1.0, 0.0)
            rm_nn(&wv[0, 0], &t[z, 0, 0], &dHv[0, 0], nb, q, p, 1.0, 1.0)
    return dt, dS, dH


def cp_apply(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
             double[:, ::1] S, double[:, ::1] H):
    cdef int p = <int> a.shape[0], q = <int> b.shape[0]
    cdef int nz = <int> c.shape[0], r = <int> a.shape[1]
    cdef int nb = <int> H.shape[0]
    cdef cnp.ndarray[double, ndim=2] mixed = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] gate = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] out = np.empty((nb, p))
    cdef double[:, ::1] mv = mixed, gv = gate, ov = out
    cdef Py_ssize_t bi, k
    with nogil:
        rm_nn(&H[0, 0], &b[0, 0], &mv[0, 0], nb, r, q, 1.0, 0.0)   # U = H @ b
        rm_nn(&S[0, 0], &c[0, 0], &gv[0, 0], nb, r, nz, 1.0, 0.0)  # W = S @ c
        for bi in range(nb):
            for k in range(r):
                mv[bi, k] *= gv[bi, k]
        rm_nt(&mv[0, 0], &a[0, 0], &ov[0, 0], nb, p, r, 1.0, 0.0)  # (U*W) @ a^T
    return out


def cp_apply_backward(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c,
                      double[:, ::1] S, double[:, ::1] H, double[:, ::1] dPre):
    cdef int p = <int> a.shape[0], q = <int> b.shape[0]
    cdef int nz = <int> c.shape[0], r = <int> a.shape[1]
    cdef int nb = <int> H.shape[0]
    cdef cnp.ndarray[double, ndim=2] u = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] g = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] du = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] dw = np.empty((nb, r))
    cdef cnp.ndarray[double, ndim=2] da = np.empty((p, r))
    cdef cnp.ndarray[double, ndim=2] db = np.empty((q, r))
    cdef cnp.ndarray[double, ndim=2] dc = np.empty((nz, r))
    cdef cnp.ndarray[double, ndim=2] dS = np.empty((nb, nz))
    cdef cnp.ndarray[double, ndim=2] dH = np.empty((nb, q))
    cdef double[:, ::1] uv = u, wv = w, gv = g, duv = du, dwv = dw
    cdef double[:, ::1] dav = da, dbv = db, dcv = dc, dSv = dS, dHv = dH
    cdef Py_ssize_t bi, k
    with nogil:
        rm_nn(&H[0, 0], &b[0, 0], &uv[0, 0], nb, r, q, 1.0, 0.0)
        rm_nn(&S[0, 0], &c[0, 0], &wv[0, 0], nb, r, nz, 1.0, 0.0)
        rm_nn(&dPre[0, 0], &a[0, 0], &gv[0, 0], nb, r, p, 1.0, 0.0)
        for bi in range(nb):
            for k in range(r):
                duv[bi, k] = gv[bi, k] * wv[bi, k]
                dwv[bi, k] = gv[bi, k] * uv[bi, k]
                uv[bi, k] *= wv[bi, k]          # reuse as U*W
        rm_tn(&dPre[0, 0], &uv[0, 0], &dav[0, 0], p, r, nb, 1.0, 0.0)
        rm_tn(&H[0, 0], &duv[0, 0], &dbv[0, 0], q, r, nb, 1.0, 0.0)
        rm_nt(&duv[0, 0], &b[0, 0], &dHv[0, 0], nb, q, r, 1.0, 0.0)
        rm_tn(&S[0, 0], &dwv[0, 0], &dcv[0, 0], nz, r, nb, 1.0, 0.0)
        rm_nt(&dwv[0, 0], &c[0, 0], &dSv[0, 0], nb, nz, r, 1.0, 0.0)
    return da, db, dc, dS, dH
