#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-python fallback.

The two hot loops in a closed-loop episode are the RK4 substep integration
(32 substeps per control sample for the reference beam) and the Hildreth dual
coordinate-ascent sweeps inside the box-QP solver (one QP per sample).

Usage: python benchmarks/bench_core.py [--repeats N]
"""
import argparse
import time

import numpy as np

from pztbeam._core import _kernels_py

try:
    from pztbeam._core import _kernels_cy
except ImportError:
    _kernels_cy = None


def time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def rk4_case(n_modes=3, nsub=32):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((n_modes, n_modes))
    minv_k = np.ascontiguousarray(a.T @ a + 100.0 * np.eye(n_modes))
    minv_d = np.ascontiguousarray(0.1 * np.eye(n_modes))
    minv_f = rng.standard_normal(n_modes)
    w = rng.standard_normal(n_modes)
    wd = rng.standard_normal(n_modes)
    return (minv_k, minv_d, minv_f, w, wd, 0.01 / nsub, nsub)


def hildreth_case(d=15, nsweeps=64):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((d, d))
    pinv = np.linalg.inv(a.T @ a + np.eye(d))
    h = np.block([[pinv, -pinv], [-pinv, pinv]])
    h = np.ascontiguousarray(0.5 * (h + h.T))
    k = np.ascontiguousarray(rng.standard_normal(2 * d))
    return (h, k, nsweeps)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    backends = [("python", _kernels_py)]
    if _kernels_cy is not None:
        backends.append(("cython", _kernels_cy))
    else:
        print("compiled kernels unavailable; benchmarking the fallback only")

    rk4_args = rk4_case()
    hil_args = hildreth_case()

    print(f"{'kernel':<34}" + "".join(f"{name:>12}" for name, _ in backends)
          + ("       speedup" if len(backends) == 2 else ""))
    rows = [
        ("rk4_modal_steps (3 modes, 32 sub)",
         lambda impl: impl.rk4_modal_steps(*rk4_args)),
        ("hildreth_sweeps (d=15, 64 sweeps)",
         lambda impl: (impl.hildreth_sweeps(hil_args[0], hil_args[1],
                                            np.zeros(30), hil_args[2]))),
    ]
    for label, call in rows:
        times = [time_call(lambda impl=impl: call(impl), args.repeats)
                 for _, impl in backends]
        line = f"{label:<34}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            line += f"    {times[0] / times[1]:>8.1f}x"
        print(line)

    # cross-check: both backends must agree
    if _kernels_cy is not None:
        w_py, wd_py = _kernels_py.rk4_modal_steps(*rk4_args)
        w_cy, wd_cy = _kernels_cy.rk4_modal_steps(*rk4_args)
        assert np.allclose(w_py, w_cy, rtol=1e-12)
        lam_py, lam_cy = np.zeros(30), np.zeros(30)
        _kernels_py.hildreth_sweeps(hil_args[0], hil_args[1], lam_py, 64)
        _kernels_cy.hildreth_sweeps(hil_args[0], hil_args[1], lam_cy, 64)
        assert np.allclose(lam_py, lam_cy, rtol=1e-10)
        print("backend agreement verified")


if __name__ == "__main__":
    main()
