"""Pure-numpy implementations of the hot kernels.

Signature-compatible with the Cython module `_kernels_cy`; selected at import
time by `pztbeam._core` when the extension is unavailable or when
PZTBEAM_PURE_PY=1 is set.
"""
import numpy as np

BACKEND = "python"


def rk4_modal_steps(minv_k, minv_d, minv_f, w, wd, h, nsub):
    """Advance the modal plant by `nsub` classical RK4 substeps of size h.

    Integrates wddot = minv_f - minv_d @ wd - minv_k @ w with the forcing
    term held constant (zero-order hold over the enclosing sample).
    Returns new (w, wd) arrays; the inputs are not modified.
    """
    w = w.copy()
    wd = wd.copy()
    for _ in range(nsub):
        a1 = minv_f - minv_d @ wd - minv_k @ w
        k2w = wd + 0.5 * h * a1
        a2 = minv_f - minv_d @ k2w - minv_k @ (w + 0.5 * h * wd)
        k3w = wd + 0.5 * h * a2
        a3 = minv_f - minv_d @ k3w - minv_k @ (w + 0.5 * h * k2w)
        k4w = wd + h * a3
        a4 = minv_f - minv_d @ k4w - minv_k @ (w + h * k3w)
        w_new = w + (h / 6.0) * (wd + 2.0 * k2w + 2.0 * k3w + k4w)
        wd_new = wd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w, wd = w_new, wd_new
    return w, wd


def hildreth_sweeps(h_mat, k_vec, lam, nsweeps):
    """Run `nsweeps` cyclic coordinate-ascent sweeps on the Hildreth dual.

    Maximizes -0.5 lam' H lam - k' lam over lam >= 0 one coordinate at a
    time. `lam` is updated in place; returns the largest absolute
    coordinate change seen in the final sweep.
    """
    n = lam.shape[0]
    last = 0.0
    for _ in range(nsweeps):
        last = 0.0
        for i in range(n):
            wi = h_mat[i] @ lam - h_mat[i, i] * lam[i] + k_vec[i]
            new = -wi / h_mat[i, i]
            if new < 0.0:
                new = 0.0
            change = abs(new - lam[i])
            if change > last:
                last = change
            lam[i] = new
    return last
