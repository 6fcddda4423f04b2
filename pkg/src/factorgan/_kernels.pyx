# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-layer, Adam and power-iteration kernels.

Matrix products go through the BLAS that scipy ships (``cython_blas``); the
elementwise parts (bias, activation, Adam) are fused loops so a layer costs a
single Python call. Signatures mirror :mod:`factorgan._fallback` exactly.
"""
import numpy as np

from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm, dgemv, dnrm2

cdef int ACT_IDENTITY = 0
cdef int ACT_RELU = 1
cdef int ACT_LEAKY = 2
cdef int ACT_SIGMOID = 3


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, int act, double slope):
    """Return ``(z, a)`` with ``z = x @ w.T + b`` and ``a = act(z)``."""
    cdef int n = x.shape[0], n_in = x.shape[1], n_out = w.shape[0]
    if w.shape[1] != n_in or b.shape[0] != n_out:
        raise ValueError("dense_forward: shape mismatch")
    z_arr = np.empty((n, n_out), dtype=np.float64)
    a_arr = np.empty((n, n_out), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] a = a_arr
    cdef double alpha = 1.0, beta = 0.0
    cdef char ta = b'T', tb = b'N'
    cdef int i, j
    cdef double v
    if n == 0:
        return z_arr, a_arr
    if n_in == 0:
        z_arr[...] = 0.0
    else:
        # row-major z (n x out) is column-major z.T = w @ x.T
        dgemm(&ta, &tb, &n_out, &n, &n_in, &alpha, &w[0, 0], &n_in,
              &x[0, 0], &n_in, &beta, &z[0, 0], &n_out)
    with nogil:
        for i in range(n):
            for j in range(n_out):
                v = z[i, j] + b[j]
                z[i, j] = v
                if act == ACT_RELU:
                    a[i, j] = v if v > 0 else 0.0
                elif act == ACT_LEAKY:
                    a[i, j] = v if v > 0 else slope * v
                elif act == ACT_SIGMOID:
                    a[i, j] = _sigmoid(v)
                else:
                    a[i, j] = v
    return z_arr, a_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] z, double[:, ::1] a,
                   double[:, ::1] grad_a, int act, double slope):
    """Return ``(dw, db, dx)`` for one layer given the gradient w.r.t. its activation."""
    cdef int n = x.shape[0], n_in = x.shape[1], n_out = w.shape[0]
    if grad_a.shape[0] != n or grad_a.shape[1] != n_out:
        raise ValueError("dense_backward: upstream gradient shape mismatch")
    gz_arr = np.empty((n, n_out), dtype=np.float64)
    dw_arr = np.zeros((n_out, n_in), dtype=np.float64)
    db_arr = np.zeros(n_out, dtype=np.float64)
    dx_arr = np.zeros((n, n_in), dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double alpha = 1.0, beta = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef int i, j
    cdef double g, s
    with nogil:
        for i in range(n):
            for j in range(n_out):
                g = grad_a[i, j]
                if act == ACT_RELU:
                    g = g if z[i, j] > 0 else 0.0
                elif act == ACT_LEAKY:
                    g = g if z[i, j] > 0 else slope * g
                elif act == ACT_SIGMOID:
                    s = a[i, j]
                    g = g * s * (1.0 - s)
                gz[i, j] = g
                db[j] += g
    if n == 0 or n_in == 0:
        return dw_arr, db_arr, dx_arr
    # column-major dw.T (in x out) = x.T @ gz
    dgemm(&tn, &tt, &n_in, &n_out, &n, &alpha, &x[0, 0], &n_in,
          &gz[0, 0], &n_out, &beta, &dw[0, 0], &n_in)
    # column-major dx.T (in x n) = w.T @ gz.T
    dgemm(&tn, &tn, &n_in, &n, &n_out, &alpha, &w[0, 0], &n_in,
          &gz[0, 0], &n_out, &beta, &dx[0, 0], &n_in)
    return dw_arr, db_arr, dx_arr


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long step):
    """Bias-corrected Adam update of flat arrays, in place. ``step`` is 1-based."""
    cdef Py_ssize_t i, size = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double gi, mhat, vhat
    with nogil:
        for i in range(size):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            mhat = m[i] / bc1
            vhat = v[i] / bc2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)


def power_iteration(double[:, ::1] w, double[::1] u, double[::1] v, int n_iter):
    """Advance ``u``/``v`` in place by ``n_iter`` iterations; return ``u.T @ w @ v``."""
    cdef int n_out = w.shape[0], n_in = w.shape[1], one = 1, k, i
    cdef double alpha = 1.0, beta = 0.0, nrm, sigma = 0.0
    cdef char tn = b'N', tt = b'T'
    tmp_arr = np.empty(n_out, dtype=np.float64)
    cdef double[::1] tmp = tmp_arr
    for k in range(n_iter):
        # row-major w is column-major w.T (in x out): v = w.T u is op 'N'
        dgemv(&tn, &n_in, &n_out, &alpha, &w[0, 0], &n_in, &u[0], &one, &beta, &v[0], &one)
        nrm = dnrm2(&n_in, &v[0], &one)
        if nrm == 0.0:
            raise ZeroDivisionError("power iteration hit a zero vector")
        for i in range(n_in):
            v[i] /= nrm
        dgemv(&tt, &n_in, &n_out, &alpha, &w[0, 0], &n_in, &v[0], &one, &beta, &u[0], &one)
        nrm = dnrm2(&n_out, &u[0], &one)
        if nrm == 0.0:
            raise ZeroDivisionError("power iteration hit a zero vector")
        for i in range(n_out):
            u[i] /= nrm
    dgemv(&tt, &n_in, &n_out, &alpha, &w[0, 0], &n_in, &v[0], &one, &beta, &tmp[0], &one)
    for i in range(n_out):
        sigma += u[i] * tmp[i]
    return sigma
