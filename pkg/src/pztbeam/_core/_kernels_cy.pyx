# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython implementations of the hot kernels (RK4 plant advance, Hildreth sweeps).

Twin of `_kernels_py`; same signatures and semantics.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def rk4_modal_steps(double[:, ::1] minv_k, double[:, ::1] minv_d,
                    double[::1] minv_f, double[::1] w0, double[::1] wd0,
                    double h, int nsub):
    """Advance the modal plant by `nsub` classical RK4 substeps of size h."""
    cdef int n = w0.shape[0]
    cdef cnp.ndarray[double, ndim=1] w_arr = np.array(w0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] wd_arr = np.array(wd0, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef double[::1] wd = wd_arr
    cdef cnp.ndarray[double, ndim=1] scratch = np.zeros(10 * n, dtype=np.float64)
    cdef double[::1] a1 = scratch[0:n]
    cdef double[::1] a2 = scratch[n:2 * n]
    cdef double[::1] a3 = scratch[2 * n:3 * n]
    cdef double[::1] a4 = scratch[3 * n:4 * n]
    cdef double[::1] k2w = scratch[4 * n:5 * n]
    cdef double[::1] k3w = scratch[5 * n:6 * n]
    cdef double[::1] k4w = scratch[6 * n:7 * n]
    cdef double[::1] pw = scratch[7 * n:8 * n]
    cdef double[::1] wn = scratch[8 * n:9 * n]
    cdef double[::1] wdn = scratch[9 * n:10 * n]
    cdef int s, i, j
    cdef double acc, h6 = h / 6.0

    for s in range(nsub):
        for i in range(n):
            acc = minv_f[i]
            for j in range(n):
                acc -= minv_d[i, j] * wd[j] + minv_k[i, j] * w[j]
            a1[i] = acc
        for i in range(n):
            k2w[i] = wd[i] + 0.5 * h * a1[i]
            pw[i] = w[i] + 0.5 * h * wd[i]
        for i in range(n):
            acc = minv_f[i]
            for j in range(n):
                acc -= minv_d[i, j] * k2w[j] + minv_k[i, j] * pw[j]
            a2[i] = acc
        for i in range(n):
            k3w[i] = wd[i] + 0.5 * h * a2[i]
            pw[i] = w[i] + 0.5 * h * k2w[i]
        for i in range(n):
            acc = minv_f[i]
            for j in range(n):
                acc -= minv_d[i, j] * k3w[j] + minv_k[i, j] * pw[j]
            a3[i] = acc
        for i in range(n):
            k4w[i] = wd[i] + h * a3[i]
            pw[i] = w[i] + h * k3w[i]
        for i in range(n):
            acc = minv_f[i]
            for j in range(n):
                acc -= minv_d[i, j] * k4w[j] + minv_k[i, j] * pw[j]
            a4[i] = acc
        for i in range(n):
            wn[i] = w[i] + h6 * (wd[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i])
            wdn[i] = wd[i] + h6 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
        for i in range(n):
            w[i] = wn[i]
            wd[i] = wdn[i]
    return w_arr, wd_arr


def hildreth_sweeps(double[:, ::1] h_mat, double[::1] k_vec,
                    double[::1] lam, int nsweeps):
    """Cyclic coordinate-ascent sweeps on the Hildreth dual; lam updated in place."""
    cdef int n = lam.shape[0]
    cdef int s, i, j
    cdef double wi, new, change, last = 0.0

    for s in range(nsweeps):
        last = 0.0
        for i in range(n):
            wi = k_vec[i]
            for j in range(n):
                wi += h_mat[i, j] * lam[j]
            wi -= h_mat[i, i] * lam[i]
            new = -wi / h_mat[i, i]
            if new < 0.0:
                new = 0.0
            change = new - lam[i]
            if change < 0.0:
                change = -change
            if change > last:
                last = change
            lam[i] = new
    return last
