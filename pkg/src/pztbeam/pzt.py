"""Piezo patch actuation and sensing: moment coefficients, influence vectors,
generalized control forces and strain-sensor readings.

Patch bending moment per volt follows from the stress/strain force balance of
the bonded patch; the per-volt modal force of patch j is

    influence_s = 0.5 * P_y / (a_j b_j) * C_s,   C_s = int psi_s'' dxi

with the curvature integral taken in the normalized coordinate xi = y / L
over the patch span and evaluated in closed form as the difference of first
derivatives at the patch edges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SaturationError
from .modal import mode_shape


@dataclass(frozen=True)
class PztPatch:
    """One bonded piezo patch: geometry, material, placement, drive limit."""

    width: float
    span: float
    thickness: float
    youngs_modulus: float
    d31: float
    center_x: float
    center_y: float
    voltage_limit: float = 100.0

    def __post_init__(self):
        for name in ("width", "span", "thickness", "youngs_modulus"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"patch {name} must be strictly positive")
        if self.voltage_limit <= 0.0:
            raise ValueError("voltage_limit must be strictly positive")

    def edges(self):
        """(y_lo, y_hi) of the patch along the beam."""
        return self.center_y - 0.5 * self.span, self.center_y + 0.5 * self.span


def moment_coefficient(beam, patch):
    """Patch bending moment per volt, P_y (N m / V)."""
    e0h0 = beam.youngs_modulus * beam.thickness
    ejhj = patch.youngs_modulus * patch.thickness
    lead = (
        patch.d31
        * beam.youngs_modulus
        * beam.thickness
        * patch.youngs_modulus
        * (patch.thickness + beam.thickness)
        / (2.0 * (e0h0 + ejhj) ** 2)
    )
    return lead * (e0h0 * patch.width + ejhj * beam.width)


@dataclass(frozen=True)
class StrainCouplingState:
    """Strain/stress balance of one energized patch and the bonded beam fiber."""

    strain_pzt: float
    strain_beam: float
    stress: float
    moment_coefficient: float
    patch_moment: float
    pzt_strain_energy: float

    def balance_residual(self, beam, patch):
        """Force-balance residual, relative to the patch membrane force."""
        fp = patch.youngs_modulus * patch.thickness * patch.span
        fb = beam.youngs_modulus * beam.thickness * beam.length
        res = fp * (self.strain_pzt + self.strain_beam) + fb * self.strain_beam
        scale = max(abs(fp * self.strain_pzt), 1e-300)
        return abs(res) / scale


def strain_coupling(beam, patch, voltage, basis=None, modal_coords=None):
    """Strain, stress, moment and strain-energy state for one patch at `voltage`.

    The beam fiber strain solves the membrane force balance exactly, so the
    balance residual is zero to rounding.  The strain energy needs the beam
    curvature, so it is zero unless a basis and modal coordinates are given.
    """
    eps_p = patch.d31 * voltage * patch.thickness / patch.span
    fp = patch.youngs_modulus * patch.thickness * patch.span
    fb = beam.youngs_modulus * beam.thickness * beam.length
    eps_b = -fp * eps_p / (fp + fb)
    p_y = moment_coefficient(beam, patch)
    energy = 0.0
    if basis is not None and modal_coords is not None:
        y_lo, y_hi = patch.edges()
        slope_jump = np.array(
            [
                mode_shape(basis, s, y_hi, 1) - mode_shape(basis, s, y_lo, 1)
                for s in range(1, len(modal_coords) + 1)
            ]
        )
        energy = -0.5 * p_y * voltage * patch.width * float(modal_coords @ slope_jump)
    return StrainCouplingState(
        strain_pzt=eps_p,
        strain_beam=eps_b,
        stress=patch.youngs_modulus * (eps_b + eps_p),
        moment_coefficient=p_y,
        patch_moment=p_y * voltage,
        pzt_strain_energy=energy,
    )


def curvature_span_integral(basis, patch):
    """C_s = int psi_s''(xi) dxi over the patch span, xi = y / L, per mode.

    Closed form: L * (psi_s'(y_hi) - psi_s'(y_lo)).  Raises ValueError if the
    patch overhangs the beam.
    """
    y_lo, y_hi = patch.edges()
    if y_lo < 0.0 or y_hi > basis.length:
        raise ValueError(
            f"patch [{y_lo}, {y_hi}] overhangs the beam [0, {basis.length}]"
        )
    return np.array(
        [
            basis.length * (mode_shape(basis, s, y_hi, 1) - mode_shape(basis, s, y_lo, 1))
            for s in range(1, basis.mode_count + 1)
        ]
    )


def actuation_influence(basis, beam, patch):
    """Per-volt modal force vector of one patch (n_s)."""
    p_y = moment_coefficient(beam, patch)
    c = curvature_span_integral(basis, patch)
    return 0.5 * p_y / (patch.width * patch.span) * c


@dataclass(frozen=True)
class PztArray:
    """Patch set with precomputed influence and sensing matrices."""

    patches: tuple
    influence_matrix: np.ndarray  # (n_s, m): modal force per volt
    sensing_matrix: np.ndarray  # (m, n_s): patch-mean curvature per unit W_s

    @classmethod
    def build(cls, basis, beam, patches):
        patches = tuple(patches)
        influence = np.column_stack(
            [actuation_influence(basis, beam, p) for p in patches]
        )
        sensing = np.vstack(
            [
                curvature_span_integral(basis, p) / (p.span / basis.length)
                for p in patches
            ]
        )
        return cls(patches=patches, influence_matrix=influence, sensing_matrix=sensing)

    @property
    def count(self):
        return len(self.patches)

    @property
    def voltage_limits(self):
        return np.array([p.voltage_limit for p in self.patches])

    def clip(self, voltages):
        lim = self.voltage_limits
        return np.clip(voltages, -lim, lim)


def control_force(array, voltages):
    """Generalized modal force of the array at the given patch voltages.

    Hard-asserts the drive limits; controllers are expected to pre-clip.
    """
    voltages = np.asarray(voltages, dtype=float)
    lim = array.voltage_limits
    over = np.abs(voltages) > lim * (1.0 + 1e-12)
    if np.any(over):
        j = int(np.argmax(over))
        raise SaturationError(
            f"voltage {voltages[j]:.6g} V on patch {j} exceeds limit {lim[j]:.6g} V"
        )
    return array.influence_matrix @ voltages


def sensor_reading(array, modal_coords, noise_std=0.0, rng=None):
    """Patch-mean curvature readings plus additive Gaussian noise.

    reading_j = sum_s W_s C_s(j) / span_xi(j) + N(0, noise_std^2); the noise
    stream is owned by the caller through `rng`.
    """
    reading = array.sensing_matrix @ np.asarray(modal_coords, dtype=float)
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        reading = reading + noise_std * rng.standard_normal(array.count)
    return reading
