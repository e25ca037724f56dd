"""Clamped-free beam mode basis and modal mass/damping/stiffness assembly.

The transverse deflection is expanded on the cantilever eigenfunctions

    psi_s(y) = cosh(b y) - cos(b y) - sigma_s (sinh(b y) - sin(b y))

with b = root_s / L and sigma_s = (cosh r + cos r)/(sinh r + sin r) at
r = root_s, where root_s are the positive solutions of
cos(x) cosh(x) + 1 = 0.  With this normalization psi_s(L) = 2 (-1)^(s+1)
and the shapes are orthogonal on [0, L].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ConvergenceError

DEFAULT_QUADRATURE_POINTS = 64


@dataclass(frozen=True)
class BeamProperties:
    """Geometry and material of one appendage beam, plus modal damping."""

    width: float
    length: float
    thickness: float
    youngs_modulus: float
    poisson_ratio: float
    density: float
    damping_ratios: tuple
    mode_count: int

    def __post_init__(self):
        for name in ("width", "length", "thickness", "youngs_modulus", "density"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"beam {name} must be strictly positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        object.__setattr__(self, "damping_ratios", tuple(float(z) for z in self.damping_ratios))
        if len(self.damping_ratios) != self.mode_count:
            raise ValueError("damping_ratios must have one entry per mode")
        if any(z < 0.0 for z in self.damping_ratios):
            raise ValueError("damping ratios must be nonnegative")

    @property
    def mass_per_length(self):
        """mu = rho * width * thickness (kg/m)."""
        return self.density * self.width * self.thickness

    @property
    def flexural_rigidity(self):
        """Plate-type rigidity E h^3 / (12 (1 - nu^2)) per unit width (N m)."""
        h = self.thickness
        return self.youngs_modulus * h**3 / (12.0 * (1.0 - self.poisson_ratio**2))

    @property
    def bending_stiffness(self):
        """Effective beam rigidity EI = flexural_rigidity * width (N m^2)."""
        return self.flexural_rigidity * self.width


def _characteristic(x):
    # cos(x) + sech(x) = 0 is the well-conditioned form of cos(x)cosh(x) = -1
    return np.cos(x) + 1.0 / np.cosh(x)


def solve_mode_roots(count):
    """First `count` positive roots of cos(x) cosh(x) + 1 = 0, ascending.

    Each root is bracketed around the asymptote (2s-1) pi/2 and refined by
    Brent's method on the sech-normalized characteristic.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    roots = []
    for s in range(1, count + 1):
        center = (2 * s - 1) * np.pi / 2.0
        lo, hi = center - 0.7, center + 0.7
        try:
            root = brentq(_characteristic, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
        except (ValueError, RuntimeError) as exc:
            raise ConvergenceError(f"mode root {s} did not converge: {exc}") from exc
        if abs(_characteristic(root)) > 1e-12:
            raise ConvergenceError(f"mode root {s} residual too large")
        roots.append(root)
    return np.asarray(roots)


@dataclass(frozen=True)
class ModeBasis:
    """Cantilever eigenfunction basis: roots (beta_s * L), sigmas, length."""

    roots: np.ndarray
    sigma: np.ndarray
    length: float

    @classmethod
    def build(cls, length, count):
        roots = solve_mode_roots(count)
        sigma = (np.cosh(roots) + np.cos(roots)) / (np.sinh(roots) + np.sin(roots))
        return cls(roots=roots, sigma=sigma, length=float(length))

    @property
    def mode_count(self):
        return len(self.roots)

    def shape(self, s, y, derivative_order=0):
        return mode_shape(self, s, y, derivative_order)

    def shape_matrix(self, y, derivative_order=0):
        """(len(y), n_s) matrix of mode shapes evaluated at points y."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.column_stack(
            [mode_shape(self, s, y, derivative_order) for s in range(1, self.mode_count + 1)]
        )


def mode_shape(basis, s, y, derivative_order=0):
    """psi_s(y) or its 1st/2nd spatial derivative (s is 1-based).

    Raises ValueError for y outside [0, L] or a bad mode index.
    """
    if not 1 <= s <= basis.mode_count:
        raise ValueError(f"mode index {s} outside 1..{basis.mode_count}")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0) or np.any(y_arr > basis.length):
        raise ValueError(f"y outside [0, {basis.length}]")
    beta = basis.roots[s - 1] / basis.length
    sig = basis.sigma[s - 1]
    a = beta * y_arr
    if derivative_order == 0:
        val = np.cosh(a) - np.cos(a) - sig * (np.sinh(a) - np.sin(a))
    elif derivative_order == 1:
        val = beta * (np.sinh(a) + np.sin(a) - sig * (np.cosh(a) - np.cos(a)))
    elif derivative_order == 2:
        val = beta**2 * (np.cosh(a) + np.cos(a) - sig * (np.sinh(a) + np.sin(a)))
    else:
        raise ValueError("derivative_order must be 0, 1 or 2")
    if np.isscalar(y):
        return float(val)
    return val


@dataclass(frozen=True)
class ModalSystem:
    """Assembled modal matrices of one beam (Lagrangian form M wdd + D wd + K w = F)."""

    mass_matrix: np.ndarray
    damping_matrix: np.ndarray
    stiffness_matrix: np.ndarray
    flexural_rigidity: float
    mass_per_length: float
    natural_frequencies: np.ndarray = field(init=False)

    def __post_init__(self):
        m, k, d = self.mass_matrix, self.stiffness_matrix, self.damping_matrix
        if not np.allclose(m, m.T, rtol=1e-12, atol=0.0):
            raise ValueError("mass matrix must be symmetric")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError as exc:
            raise ValueError("mass matrix must be positive definite") from exc
        if not np.allclose(k, k.T, rtol=1e-12, atol=0.0):
            raise ValueError("stiffness matrix must be symmetric")
        if np.min(np.linalg.eigvalsh(k)) < -1e-9 * max(1.0, np.linalg.norm(k)):
            raise ValueError("stiffness matrix must be positive semidefinite")
        off = d - np.diag(np.diag(d))
        if np.any(off != 0.0) or np.any(np.diag(d) < 0.0):
            raise ValueError("damping matrix must be diagonal with nonnegative entries")
        import scipy.linalg

        omega2 = scipy.linalg.eigh(k, m, eigvals_only=True)
        omega = np.sqrt(np.clip(omega2, 0.0, None))
        if np.any(np.diff(omega) <= 0.0):
            raise ValueError("natural frequencies must be strictly increasing")
        object.__setattr__(self, "natural_frequencies", omega)

    @property
    def mode_count(self):
        return self.mass_matrix.shape[0]

    def energy(self, w, wd):
        """Total mechanical energy 0.5 (wd' M wd + w' K w)."""
        return 0.5 * (wd @ self.mass_matrix @ wd + w @ self.stiffness_matrix @ w)


def gauss_legendre_nodes(length, points):
    """Gauss-Legendre nodes and weights mapped onto [0, length]."""
    x, wgt = np.polynomial.legendre.leggauss(points)
    return 0.5 * length * (x + 1.0), 0.5 * length * wgt


def assemble_modal_system(beam, basis, quadrature_points=DEFAULT_QUADRATURE_POINTS):
    """Assemble M, D, K for `beam` on `basis` by Gauss-Legendre quadrature.

    M_rs = mu int psi_r psi_s dy, K_rs = EI int psi_r'' psi_s'' dy, and the
    damping matrix is diag(2 zeta_s omega_s M_ss) with omega_s^2 = K_ss/M_ss.
    """
    if abs(basis.length - beam.length) > 1e-12 * beam.length:
        raise ValueError("basis length does not match beam length")
    n = beam.mode_count
    if basis.mode_count < n:
        raise ValueError("basis has fewer modes than the beam requests")
    if quadrature_points < 10 * n:
        raise ConfigError(
            "quadrature_points",
            f"{quadrature_points} nodes undersample the mode-{n} curvature; need >= {10 * n}",
        )
    y, wgt = gauss_legendre_nodes(beam.length, quadrature_points)
    shapes = np.column_stack([mode_shape(basis, s, y, 0) for s in range(1, n + 1)])
    curvs = np.column_stack([mode_shape(basis, s, y, 2) for s in range(1, n + 1)])
    mu = beam.mass_per_length
    ei = beam.bending_stiffness
    mass = mu * (shapes.T * wgt) @ shapes
    stiff = ei * (curvs.T * wgt) @ curvs
    mass = 0.5 * (mass + mass.T)
    stiff = 0.5 * (stiff + stiff.T)
    omega = np.sqrt(np.diag(stiff) / np.diag(mass))
    damp = np.diag(2.0 * np.asarray(beam.damping_ratios) * omega * np.diag(mass))
    return ModalSystem(
        mass_matrix=mass,
        damping_matrix=damp,
        stiffness_matrix=stiff,
        flexural_rigidity=beam.flexural_rigidity,
        mass_per_length=mu,
    )


def project_distributed_load(basis, pressure=None, point_forces=(),
                             quadrature_points=DEFAULT_QUADRATURE_POINTS):
    """Modal force vector of a distributed load p(y) plus point forces.

    F_s = int_0^L p(y) psi_s(y) dy + sum_r tau_r psi_s(y_r).  The modal
    viscous dissipation is not part of this projection; it lives in the
    assembled damping matrix.
    """
    n = basis.mode_count
    force = np.zeros(n)
    if pressure is not None:
        y, wgt = gauss_legendre_nodes(basis.length, quadrature_points)
        p = np.asarray([pressure(yi) for yi in y], dtype=float)
        for s in range(1, n + 1):
            force[s - 1] = np.sum(wgt * p * mode_shape(basis, s, y, 0))
    for tau, y_r in point_forces:
        if not 0.0 <= y_r <= basis.length:
            raise ValueError(f"point force location {y_r} outside [0, {basis.length}]")
        for s in range(1, n + 1):
            force[s - 1] += tau * mode_shape(basis, s, y_r, 0)
    return force
