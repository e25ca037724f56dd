"""The compiled kernels and the pure-python fallback agree numerically."""
import numpy as np
import pytest

from pztbeam._core import _kernels_py, backend_name

try:
    from pztbeam._core import _kernels_cy
except ImportError:
    _kernels_cy = None

needs_ext = pytest.mark.skipif(_kernels_cy is None,
                               reason="compiled kernels unavailable")


@needs_ext
class TestBackendEquivalence:
    def test_rk4_agreement(self):
        rng = np.random.default_rng(0)
        n = 4
        a = rng.standard_normal((n, n))
        minv_k = np.ascontiguousarray(a.T @ a + np.eye(n))
        minv_d = np.ascontiguousarray(0.05 * np.eye(n))
        minv_f = rng.standard_normal(n)
        w = rng.standard_normal(n)
        wd = rng.standard_normal(n)
        w_py, wd_py = _kernels_py.rk4_modal_steps(minv_k, minv_d, minv_f,
                                                  w.copy(), wd.copy(), 1e-3, 64)
        w_cy, wd_cy = _kernels_cy.rk4_modal_steps(minv_k, minv_d, minv_f,
                                                  w.copy(), wd.copy(), 1e-3, 64)
        np.testing.assert_allclose(w_cy, w_py, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(wd_cy, wd_py, rtol=1e-12, atol=1e-15)

    def test_hildreth_agreement(self):
        rng = np.random.default_rng(1)
        d = 6
        a = rng.standard_normal((d, d))
        pinv = np.linalg.inv(a.T @ a + np.eye(d))
        h = np.ascontiguousarray(np.block([[pinv, -pinv], [-pinv, pinv]]))
        h = np.ascontiguousarray(0.5 * (h + h.T))
        k = np.ascontiguousarray(rng.standard_normal(2 * d))
        lam_py = np.zeros(2 * d)
        lam_cy = np.zeros(2 * d)
        delta_py = _kernels_py.hildreth_sweeps(h, k, lam_py, 50)
        delta_cy = _kernels_cy.hildreth_sweeps(h, k, lam_cy, 50)
        np.testing.assert_allclose(lam_cy, lam_py, rtol=1e-10, atol=1e-13)
        assert delta_cy == pytest.approx(delta_py, rel=1e-8, abs=1e-13)

    def test_inputs_not_mutated_by_rk4(self):
        rng = np.random.default_rng(2)
        n = 3
        minv_k = np.ascontiguousarray(np.eye(n))
        minv_d = np.ascontiguousarray(np.zeros((n, n)))
        minv_f = np.zeros(n)
        w = rng.standard_normal(n)
        wd = rng.standard_normal(n)
        w0, wd0 = w.copy(), wd.copy()
        for impl in (_kernels_py, _kernels_cy):
            impl.rk4_modal_steps(minv_k, minv_d, minv_f, w, wd, 1e-3, 10)
            np.testing.assert_array_equal(w, w0)
            np.testing.assert_array_equal(wd, wd0)


def test_backend_name_reports():
    assert backend_name() in ("cython", "python")
