"""Mode basis and modal assembly against independent oracles.

Oracles: plain bisection on cos(x)cosh(x) + 1 for the roots, trapezoid
quadrature for the integrals, the Euler-Bernoulli closed form for the
frequencies, and central finite differences for the shape derivatives.
"""
import numpy as np
import pytest

from pztbeam.errors import ConfigError
from pztbeam.modal import (BeamProperties, ModeBasis, assemble_modal_system,
                           mode_shape, project_distributed_load, solve_mode_roots)


def bisect_root(lo, hi, tol=1e-13):
    f = lambda x: np.cos(x) * np.cosh(x) + 1.0
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if flo * fm <= 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


class TestRoots:
    def test_first_root_against_bisection(self):
        assert solve_mode_roots(1)[0] == pytest.approx(bisect_root(1.0, 3.0), abs=1e-10)

    def test_first_three_against_bisection_oracle(self):
        expected = [bisect_root(*b) for b in ((1.0, 3.0), (4.0, 6.0), (7.0, 9.0))]
        got = solve_mode_roots(3)
        np.testing.assert_allclose(got, expected, atol=1e-10)
        np.testing.assert_allclose(
            got, [1.87510407, 4.69409113, 7.85475744], atol=1e-6
        )

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            solve_mode_roots(0)

    def test_residual_small_at_every_root(self):
        roots = solve_mode_roots(6)
        # absolute residual is float-representable up to the 4th root; beyond,
        # cosh amplifies the one-ulp x error past 1e-10, so check the
        # sech-normalized residual there
        for x in roots[:4]:
            assert abs(np.cos(x) * np.cosh(x) + 1.0) < 1e-10
        for x in roots[4:]:
            assert abs(np.cos(x) + 1.0 / np.cosh(x)) < 1e-12

    def test_roots_strictly_increasing(self):
        roots = solve_mode_roots(6)
        assert np.all(np.diff(roots) > 0)


@pytest.fixture(scope="module")
def basis():
    return ModeBasis.build(1.0, 4)


class TestModeShape:

    def test_clamped_end(self, basis):
        for s in range(1, 5):
            assert mode_shape(basis, s, 0.0) == pytest.approx(0.0, abs=1e-9)
            assert mode_shape(basis, s, 0.0, 1) == pytest.approx(0.0, abs=1e-9)

    def test_free_end_zero_moment(self, basis):
        assert abs(mode_shape(basis, 1, 1.0, 2)) < 1e-6

    def test_tip_value_is_two(self, basis):
        assert mode_shape(basis, 1, 1.0) == pytest.approx(2.0, abs=1e-6)

    def test_orthogonality(self, basis):
        y = np.linspace(0.0, 1.0, 20001)
        shapes = basis.shape_matrix(y)
        gram = np.trapezoid(shapes[:, :, None] * shapes[:, None, :], y, axis=0)
        diag = np.diag(gram)
        off = gram - np.diag(diag)
        assert np.max(np.abs(off)) < 1e-6 * np.min(np.abs(diag))

    def test_domain_error(self, basis):
        with pytest.raises(ValueError):
            mode_shape(basis, 1, 1.5)
        with pytest.raises(ValueError):
            mode_shape(basis, 1, -0.1)
        with pytest.raises(ValueError):
            mode_shape(basis, 9, 0.5)

    def test_derivatives_match_finite_differences(self, basis):
        h = 1e-6
        y = np.linspace(0.05, 0.95, 19)
        for s in range(1, 5):
            fd1 = (mode_shape(basis, s, y + h) - mode_shape(basis, s, y - h)) / (2 * h)
            np.testing.assert_allclose(mode_shape(basis, s, y, 1), fd1, rtol=1e-4)
            fd2 = (
                mode_shape(basis, s, y + h, 1) - mode_shape(basis, s, y - h, 1)
            ) / (2 * h)
            np.testing.assert_allclose(mode_shape(basis, s, y, 2), fd2, rtol=1e-4)


class TestAssembly:
    def test_mass_per_length_and_rigidity(self, plant):
        assert plant.beam.mass_per_length == pytest.approx(1.62, rel=1e-12)
        assert plant.beam.flexural_rigidity == pytest.approx(
            6.9e10 * (2e-3) ** 3 / (12 * (1 - 0.33**2)), rel=1e-12
        )
        assert plant.beam.flexural_rigidity == pytest.approx(51.62, rel=1e-3)

    def test_first_frequency_closed_form(self, plant):
        # Euler-Bernoulli: omega = (beta L)^2 sqrt(EI/mu) / L^2
        ei = plant.beam.bending_stiffness
        mu = plant.beam.mass_per_length
        f1 = plant.basis.roots[0] ** 2 * np.sqrt(ei / mu) / (2 * np.pi)
        assert plant.system.natural_frequencies[0] / (2 * np.pi) == pytest.approx(
            f1, rel=1e-9
        )
        assert f1 == pytest.approx(1.73, rel=5e-3)

    def test_rayleigh_quotient_per_mode(self, plant):
        ei = plant.beam.bending_stiffness
        mu = plant.beam.mass_per_length
        m = plant.system.mass_matrix
        k = plant.system.stiffness_matrix
        for s in range(3):
            closed = plant.basis.roots[s] ** 4 * ei / mu
            assert k[s, s] / m[s, s] == pytest.approx(closed, rel=1e-6)

    def test_frequencies_strictly_increasing(self, plant):
        assert np.all(np.diff(plant.system.natural_frequencies) > 0)

    def test_quadrature_convergence(self, plant):
        a = assemble_modal_system(plant.beam, plant.basis, 64)
        b = assemble_modal_system(plant.beam, plant.basis, 128)
        for attr in ("mass_matrix", "stiffness_matrix"):
            ma, mb = getattr(a, attr), getattr(b, attr)
            scale = np.max(np.abs(mb))
            assert np.max(np.abs(ma - mb)) < 1e-9 * scale

    def test_damping_matrix_diagonal(self, plant):
        d = plant.system.damping_matrix
        assert np.all(d == np.diag(np.diag(d)))
        omega = plant.system.natural_frequencies
        expected = 2 * 0.005 * omega * np.diag(plant.system.mass_matrix)
        np.testing.assert_allclose(np.diag(d), expected, rtol=1e-9)

    def test_insufficient_quadrature_rejected(self, plant):
        with pytest.raises(ConfigError):
            assemble_modal_system(plant.beam, plant.basis, 16)

    def test_length_mismatch_rejected(self, plant):
        other = ModeBasis.build(2.0, 3)
        with pytest.raises(ValueError):
            assemble_modal_system(plant.beam, other)


class TestBeamValidation:
    def test_bad_fields_rejected(self):
        good = dict(width=0.3, length=1.0, thickness=2e-3, youngs_modulus=6.9e10,
                    poisson_ratio=0.33, density=2.7e3, damping_ratios=(0.005,),
                    mode_count=1)
        for field, value in [("length", -1.0), ("width", 0.0),
                             ("poisson_ratio", 0.6), ("density", -2.0)]:
            bad = dict(good, **{field: value})
            with pytest.raises(ValueError):
                BeamProperties(**bad)
        with pytest.raises(ValueError):
            BeamProperties(**dict(good, damping_ratios=(-0.01,)))


class TestLoadProjection:
    def test_zero_load(self, plant):
        f = project_distributed_load(plant.basis)
        np.testing.assert_array_equal(f, np.zeros(3))

    def test_unit_tip_force_mode1(self, plant):
        f = project_distributed_load(plant.basis, point_forces=[(1.0, 1.0)])
        assert f[0] == pytest.approx(2.0, abs=1e-6)

    def test_uniform_pressure_vs_trapezoid_oracle(self, plant):
        # trapezoid converged at 1e5 points (its 1e4-point error is ~2e-8 for
        # mode 1, right at the assertion level)
        f = project_distributed_load(plant.basis, pressure=lambda y: 1.0)
        y = np.linspace(0.0, 1.0, 100001)
        for s in range(1, 4):
            oracle = np.trapezoid(mode_shape(plant.basis, s, y), y)
            assert f[s - 1] == pytest.approx(oracle, rel=1e-8)

    def test_point_force_outside_rejected(self, plant):
        with pytest.raises(ValueError):
            project_distributed_load(plant.basis, point_forces=[(1.0, 1.5)])
