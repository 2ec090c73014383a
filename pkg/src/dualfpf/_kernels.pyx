# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: RK4 matrix sweeps, affine recursions, particle updates.

Semantics match ``dualfpf._pykernels`` exactly; see that module for the
argument conventions.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _matmul(const double[:, ::1] a, const double[:, ::1] b,
                         double[:, ::1] out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for l in range(d):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc


cdef void _riccati_rhs(const double[:, ::1] A, const double[:, ::1] Q,
                       const double[:, ::1] S, const double[:, ::1] P,
                       double[:, ::1] tmp, double[:, ::1] tmp2,
                       double[:, ::1] out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t i, j
    _matmul(A, P, tmp, d)            # AP
    _matmul(S, P, tmp2, d)           # SP
    _matmul(P, tmp2, out, d)         # PSP
    for i in range(d):
        for j in range(d):
            out[i, j] = tmp[i, j] + tmp[j, i] + Q[i, j] - out[i, j]


def riccati_rk4(double[:, :, ::1] A, double[:, :, ::1] Q, double[:, :, ::1] S,
                sigma0, double dt):
    cdef Py_ssize_t n = (A.shape[0] - 1) // 2
    cdef Py_ssize_t d = A.shape[1]
    cdef Py_ssize_t k, i, j, m
    cdef double h = 0.5 * dt
    cdef double w = dt / 6.0
    out_arr = np.empty((n + 1, d, d))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] P = np.array(sigma0, dtype=np.float64, order="C")
    cdef double[:, ::1] Y = np.empty((d, d))
    cdef double[:, ::1] k1 = np.empty((d, d))
    cdef double[:, ::1] k2 = np.empty((d, d))
    cdef double[:, ::1] k3 = np.empty((d, d))
    cdef double[:, ::1] k4 = np.empty((d, d))
    cdef double[:, ::1] t1 = np.empty((d, d))
    cdef double[:, ::1] t2 = np.empty((d, d))
    out_arr[0] = np.asarray(P)
    with nogil:
        for k in range(n):
            m = 2 * k
            _riccati_rhs(A[m], Q[m], S[m], P, t1, t2, k1, d)
            for i in range(d):
                for j in range(d):
                    Y[i, j] = P[i, j] + h * k1[i, j]
            _riccati_rhs(A[m + 1], Q[m + 1], S[m + 1], Y, t1, t2, k2, d)
            for i in range(d):
                for j in range(d):
                    Y[i, j] = P[i, j] + h * k2[i, j]
            _riccati_rhs(A[m + 1], Q[m + 1], S[m + 1], Y, t1, t2, k3, d)
            for i in range(d):
                for j in range(d):
                    Y[i, j] = P[i, j] + dt * k3[i, j]
            _riccati_rhs(A[m + 2], Q[m + 2], S[m + 2], Y, t1, t2, k4, d)
            for i in range(d):
                for j in range(d):
                    Y[i, j] = P[i, j] + w * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            for i in range(d):
                for j in range(d):
                    P[i, j] = 0.5 * (Y[i, j] + Y[j, i])
                    out[k + 1, i, j] = P[i, j]
    return out_arr


def backward_transition_rk4(double[:, :, ::1] M, double dt):
    cdef Py_ssize_t n = (M.shape[0] - 1) // 2
    cdef Py_ssize_t d = M.shape[1]
    cdef Py_ssize_t last = M.shape[0] - 1
    cdef Py_ssize_t k, i, j, m
    cdef double h = 0.5 * dt
    cdef double w = dt / 6.0
    out_arr = np.empty((n + 1, d, d))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] X = np.eye(d)
    cdef double[:, ::1] Y = np.empty((d, d))
    cdef double[:, ::1] k1 = np.empty((d, d))
    cdef double[:, ::1] k2 = np.empty((d, d))
    cdef double[:, ::1] k3 = np.empty((d, d))
    cdef double[:, ::1] k4 = np.empty((d, d))
    out_arr[n] = np.asarray(X)
    with nogil:
        for k in range(n):
            m = last - 2 * k
            # reversed time: dX/ds = -M(T - s) X
            _matmul(M[m], X, k1, d)
            for i in range(d):
                for j in range(d):
                    k1[i, j] = -k1[i, j]
                    Y[i, j] = X[i, j] + h * k1[i, j]
            _matmul(M[m - 1], Y, k2, d)
            for i in range(d):
                for j in range(d):
                    k2[i, j] = -k2[i, j]
                    Y[i, j] = X[i, j] + h * k2[i, j]
            _matmul(M[m - 1], Y, k3, d)
            for i in range(d):
                for j in range(d):
                    k3[i, j] = -k3[i, j]
                    Y[i, j] = X[i, j] + dt * k3[i, j]
            _matmul(M[m - 2], Y, k4, d)
            for i in range(d):
                for j in range(d):
                    X[i, j] = X[i, j] + w * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] - k4[i, j])
                    out[n - k - 1, i, j] = X[i, j]
    return out_arr


def affine_recursion(double[:, :, ::1] F, double[:, ::1] b, x0):
    cdef Py_ssize_t n = F.shape[0]
    cdef Py_ssize_t d = F.shape[1]
    cdef Py_ssize_t k, i, l
    cdef double acc
    out_arr = np.empty((n + 1, d))
    cdef double[:, ::1] out = out_arr
    out_arr[0] = x0
    with nogil:
        for k in range(n):
            for i in range(d):
                acc = 0.0
                for l in range(d):
                    acc += F[k, i, l] * out[k, l]
                out[k + 1, i] = acc + b[k, i]
    return out_arr


def particle_update(double[:, ::1] X, double[:, ::1] F, double[::1] g, double[::1] kdz,
                    zb, Bmat, zw, Wmat, double dt):
    cdef Py_ssize_t N = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t p, i, l, nb = 0, nw = 0
    cdef double acc
    cdef bint use_b = zb is not None
    cdef bint use_w = zw is not None
    cdef double[:, ::1] ZB = zb if use_b else np.zeros((1, 1))
    cdef double[:, ::1] BM = Bmat if use_b else np.zeros((1, 1))
    cdef double[:, ::1] ZW = zw if use_w else np.zeros((1, 1))
    cdef double[:, ::1] WM = Wmat if use_w else np.zeros((1, 1))
    if use_b:
        nb = ZB.shape[1]
    if use_w:
        nw = ZW.shape[1]
    out_arr = np.empty((N, d))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(N):
            for i in range(d):
                acc = 0.0
                for l in range(d):
                    acc += F[i, l] * X[p, l]
                acc = X[p, i] + (acc + g[i]) * dt + kdz[i]
                for l in range(nb):
                    acc += BM[i, l] * ZB[p, l]
                for l in range(nw):
                    acc += WM[i, l] * ZW[p, l]
                out[p, i] = acc
    return out_arr


def moments(double[:, ::1] X):
    cdef Py_ssize_t N = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t p, i, j
    mean_arr = np.zeros(d)
    cov_arr = np.zeros((d, d))
    cdef double[::1] mean = mean_arr
    cdef double[:, ::1] cov = cov_arr
    cdef double[::1] dev = np.empty(d)
    with nogil:
        for p in range(N):
            for i in range(d):
                mean[i] += X[p, i]
        for i in range(d):
            mean[i] /= N
        for p in range(N):
            for i in range(d):
                dev[i] = X[p, i] - mean[i]
            for i in range(d):
                for j in range(i, d):
                    cov[i, j] += dev[i] * dev[j]
        if N > 1:
            for i in range(d):
                for j in range(i, d):
                    cov[i, j] /= N - 1
                    cov[j, i] = cov[i, j]
    if N < 2:
        cov_arr[:] = np.nan
    return mean_arr, cov_arr
