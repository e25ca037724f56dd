"""Receding-horizon controller: ZOH discretization, condensed QP, first move.

The finite-horizon cost

    0.5 sum_{j=1..N_r} (y(k+j) - r(k+j))' K_y (y(k+j) - r(k+j))
                       + S(k+j-1)' K_s S(k+j-1)

is condensed onto the N_c free control blocks (moves frozen after the control
horizon), giving a dense box QP in the stacked voltages solved by qp.solve_box_qp.
The plant here is linear, so the one-step matrices are state-independent; they
are still served through a state-map hook so a nonlinear variant can be
slotted in without touching the condensing code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DivergenceError
from .qp import QpProblem, solve_box_qp


@dataclass(frozen=True)
class DiscreteModel:
    """Exact ZOH discretization of the modal plant with PZT inputs."""

    a: np.ndarray  # (2n, 2n)
    b: np.ndarray  # (2n, m)
    c: np.ndarray  # (m, 2n) sensor map
    d: np.ndarray  # (m, m), zero: no direct voltage feedthrough to strain
    dt: float

    @property
    def state_dim(self):
        return self.a.shape[0]

    @property
    def input_dim(self):
        return self.b.shape[1]

    def matrices_at(self, state):
        """State-map hook of the one-step matrices (constant for this plant)."""
        return self.a, self.b


def discretize(system, array, dt):
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = system.mode_count
    m = array.count
    minv = np.linalg.inv(system.mass_matrix)
    a_cont = np.zeros((2 * n, 2 * n))
    a_cont[:n, n:] = np.eye(n)
    a_cont[n:, :n] = -minv @ system.stiffness_matrix
    a_cont[n:, n:] = -minv @ system.damping_matrix
    l_cont = np.zeros((2 * n, m))
    l_cont[n:, :] = minv @ array.influence_matrix
    aug = np.zeros((2 * n + m, 2 * n + m))
    aug[: 2 * n, : 2 * n] = a_cont
    aug[: 2 * n, 2 * n :] = l_cont
    phi = scipy.linalg.expm(aug * dt)
    if not np.all(np.isfinite(phi)):
        raise DivergenceError("matrix exponential did not converge")
    c = np.zeros((m, 2 * n))
    c[:, :n] = array.sensing_matrix
    return DiscreteModel(
        a=phi[: 2 * n, : 2 * n],
        b=phi[: 2 * n, 2 * n :],
        c=c,
        d=np.zeros((m, m)),
        dt=dt,
    )


@dataclass(frozen=True)
class NmpcConfig:
    """Horizons, weights and bounds of the receding-horizon problem."""

    prediction_horizon: int
    control_horizon: int
    state_weight: np.ndarray  # (2n, 2n) PSD
    control_weight: np.ndarray  # (m, m) PD
    dt: float = 0.01
    s_min: np.ndarray = None  # per-step lower bounds on scaling @ S
    s_max: np.ndarray = None
    scaling: np.ndarray = None  # positive diagonal (m,)
    qp_tol: float = 1e-8
    qp_max_iter: int = None

    def __post_init__(self):
        if not 1 <= self.control_horizon <= self.prediction_horizon:
            raise ValueError("need 1 <= control_horizon <= prediction_horizon")
        ky = np.asarray(self.state_weight, dtype=float)
        ks = np.asarray(self.control_weight, dtype=float)
        if np.min(np.linalg.eigvalsh(0.5 * (ky + ky.T))) < -1e-12:
            raise ValueError("state weight must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (ks + ks.T))) <= 0.0:
            raise ValueError("control weight must be positive definite")
        object.__setattr__(self, "state_weight", ky)
        object.__setattr__(self, "control_weight", ks)

    @classmethod
    def from_weights(cls, n_modes, n_inputs, coord_weight=10.0, rate_weight=1.0,
                     control_weight=1e-3, prediction_horizon=10, control_horizon=5,
                     dt=0.01, voltage_limit=100.0, mode_frequencies=None, **kwargs):
        """Diagonal weights; with `mode_frequencies` the coordinate weights are
        stiffness-scaled, coord_weight * (omega_s/omega_1)^2, so every mode is
        penalized per unit amplitude-energy rather than per unit amplitude."""
        coord = np.full(n_modes, float(coord_weight))
        if mode_frequencies is not None:
            omega = np.asarray(mode_frequencies, dtype=float)
            coord = coord * (omega / omega[0]) ** 2
        ky = np.diag(np.concatenate([coord, np.full(n_modes, float(rate_weight))]))
        ks = float(control_weight) * np.eye(n_inputs)
        lim = np.full(n_inputs, float(voltage_limit))
        return cls(
            prediction_horizon=prediction_horizon,
            control_horizon=control_horizon,
            state_weight=ky,
            control_weight=ks,
            dt=dt,
            s_min=-lim,
            s_max=lim,
            **kwargs,
        )


def expand_moves(stacked, config, n_inputs):
    """Expand the N_c stacked blocks to the full N_r schedule (move blocking)."""
    blocks = stacked.reshape(config.control_horizon, n_inputs)
    idx = np.minimum(np.arange(config.prediction_horizon), config.control_horizon - 1)
    return blocks[idx]


def _stacked_matrices(model, config, state):
    """Prediction stack: y_pred = F y(k) + G U with frozen tail moves."""
    a, b = model.matrices_at(state)
    n = model.state_dim
    m = model.input_dim
    nr, nc = config.prediction_horizon, config.control_horizon
    pows = [np.eye(n)]
    for _ in range(nr):
        pows.append(a @ pows[-1])
    f_mat = np.vstack([pows[j] for j in range(1, nr + 1)])
    g_mat = np.zeros((nr * n, nc * m))
    for j in range(1, nr + 1):
        for i in range(min(j, nc)):
            blk = pows[j - 1 - i] @ b
            if i == nc - 1:
                # frozen tail: all steps i' >= nc-1 reuse the last block
                acc = np.zeros_like(blk)
                for i2 in range(nc - 1, j):
                    acc += pows[j - 1 - i2] @ b
                blk = acc
            g_mat[(j - 1) * n : j * n, i * m : (i + 1) * m] = blk
    return f_mat, g_mat


def _stacked_weights(model, config):
    nr, nc = config.prediction_horizon, config.control_horizon
    ky_big = np.kron(np.eye(nr), config.state_weight)
    reps = np.ones(nc)
    reps[-1] = nr - nc + 1
    ks_big = np.kron(np.diag(reps), config.control_weight)
    return ky_big, ks_big


def _stack_reference(reference, nr, n):
    if reference is None:
        return np.zeros(nr * n)
    ref = np.asarray(reference, dtype=float)
    if ref.shape == (n,):
        return np.tile(ref, nr)
    if ref.shape == (nr, n):
        return ref.reshape(nr * n)
    raise ValueError(f"reference shape {ref.shape} not ({n},) or ({nr},{n})")


def build_condensed_qp(model, config, state, reference=None):
    """Condense the finite-horizon problem at `state` into a box QpProblem."""
    n = model.state_dim
    m = model.input_dim
    state = np.asarray(state, dtype=float)
    if state.shape != (n,):
        raise ValueError(f"state shape {state.shape}, expected ({n},)")
    f_mat, g_mat = _stacked_matrices(model, config, state)
    ky_big, ks_big = _stacked_weights(model, config)
    gt_ky = g_mat.T @ ky_big
    hessian = gt_ky @ g_mat + ks_big
    err = f_mat @ state - _stack_reference(reference, config.prediction_horizon, n)
    gradient = gt_ky @ err
    nc = config.control_horizon
    s_min = np.tile(config.s_min, nc)
    s_max = np.tile(config.s_max, nc)
    scaling = None
    if config.scaling is not None:
        scaling = np.tile(np.asarray(config.scaling, dtype=float), nc)
    return QpProblem(
        hessian=0.5 * (hessian + hessian.T),
        gradient=gradient,
        lower=s_min,
        upper=s_max,
        scaling=scaling,
    )


def predicted_cost(model, config, state, stacked, reference=None):
    """Full horizon cost (state tracking + control effort) of a stacked plan."""
    f_mat, g_mat = _stacked_matrices(model, config, state)
    ky_big, ks_big = _stacked_weights(model, config)
    err = f_mat @ np.asarray(state, dtype=float) + g_mat @ stacked
    err = err - _stack_reference(reference, config.prediction_horizon, model.state_dim)
    return 0.5 * float(err @ ky_big @ err + stacked @ ks_big @ stacked)


def compute_control(model, config, state, reference=None, warm_start=None):
    """Solve the condensed QP and return (first move, diagnostics, solution).

    Diagnostics carry the predicted horizon cost, the KKT residual and the
    sweep count.  ConvergenceError from the QP propagates (the episode
    controller decides the fallback policy).
    """
    problem = build_condensed_qp(model, config, state, reference)
    solution = solve_box_qp(
        problem, tol=config.qp_tol, max_iter=config.qp_max_iter, warm_start=warm_start
    )
    move = solution.minimizer[: model.input_dim].copy()
    diagnostics = {
        "cost": predicted_cost(model, config, state, solution.minimizer, reference),
        "residual": solution.kkt_residual,
        "iterations": solution.iterations,
        "fallback": False,
    }
    return move, diagnostics, solution


class NmpcController:
    """Episode-facing wrapper: full-state feedback, dual warm starting.

    On QP non-convergence the controller applies the previous move (clipped)
    and flags the sample in its diagnostics.
    """

    def __init__(self, model, config, voltage_limits, reference=None):
        self.model = model
        self.config = config
        self.limits = np.asarray(voltage_limits, dtype=float)
        self.reference = reference
        self.last_diagnostics = None
        self._prev_solution = None
        self._prev_move = np.zeros(model.input_dim)

    def reset(self):
        self.last_diagnostics = None
        self._prev_solution = None
        self._prev_move = np.zeros(self.model.input_dim)

    def _shifted_warm_start(self):
        if self._prev_solution is None:
            return None
        m = self.model.input_dim
        lo = np.concatenate([self._prev_solution.lam_lower[m:],
                             self._prev_solution.lam_lower[-m:]])
        up = np.concatenate([self._prev_solution.lam_upper[m:],
                             self._prev_solution.lam_upper[-m:]])
        return lo, up

    def __call__(self, t, reading, state):
        y = np.concatenate([state.w, state.wd])
        try:
            move, diagnostics, solution = compute_control(
                self.model, self.config, y, self.reference, self._shifted_warm_start()
            )
            self._prev_solution = solution
        except ConvergenceError as exc:
            move = np.clip(self._prev_move, -self.limits, self.limits)
            diagnostics = {
                "cost": np.nan,
                "residual": exc.residual if exc.residual is not None else np.nan,
                "iterations": exc.best.iterations if exc.best is not None else 0,
                "fallback": True,
            }
            self._prev_solution = None
        self._prev_move = move
        self.last_diagnostics = diagnostics
        return np.clip(move, -self.limits, self.limits)
