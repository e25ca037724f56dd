"""Time-domain plant: disturbance models, RK4 stepping and episode runner.

Inputs are held constant over each sample (zero-order hold); inside a sample
the modal equations are advanced with RK4 substeps sized so that
omega_max * h <= 0.06, which keeps the highest retained mode accurate instead
of numerically damped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import DivergenceError
from .modal import mode_shape
from .pzt import control_force, sensor_reading

MAX_PHASE_PER_SUBSTEP = 0.06


@dataclass(frozen=True)
class PlantState:
    """Modal coordinates and rates at one instant."""

    w: np.ndarray
    wd: np.ndarray
    t: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.wd))):
            raise ValueError("plant state must be finite")

    @classmethod
    def zero(cls, mode_count, t=0.0):
        return cls(w=np.zeros(mode_count), wd=np.zeros(mode_count), t=t)


@dataclass(frozen=True)
class DisturbanceScenario:
    """External point-force disturbance applied at y = application_point."""

    kind: str = "none"
    white_noise_std: float = 0.1
    bandwidth: float = 5.0
    impulse_magnitude: float = 10.0
    impulse_time: float = 1.0
    sinusoid_amplitude: float = 0.5
    sinusoid_frequency: float = 1.0
    application_point: float = 1.0
    seed: int = 0

    KINDS = ("none", "random_vibration", "impulse", "sinusoid")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "random_vibration":
            if self.white_noise_std <= 0.0 or self.bandwidth <= 0.0:
                raise ValueError("random_vibration needs positive std and bandwidth")
        if self.kind == "impulse":
            if not 5.0 <= self.impulse_magnitude <= 20.0:
                raise ValueError("impulse magnitude outside the 5..20 N range")
            if self.impulse_time < 0.0:
                raise ValueError("impulse time must be nonnegative")
        if self.kind == "sinusoid":
            if not 0.2 <= self.sinusoid_amplitude <= 1.0:
                raise ValueError("sinusoid amplitude outside the 0.2..1 N range")
            if not 0.5 <= self.sinusoid_frequency <= 2.0:
                raise ValueError("sinusoid frequency outside the 0.5..2 Hz range")


class DisturbanceState:
    """Owns the disturbance RNG stream and the low-pass filter memory."""

    def __init__(self, rng):
        self.rng = rng
        self.filtered = 0.0


def disturbance_force(scenario, t, dt, state):
    """Point disturbance force (N) for the sample starting at t, width dt.

    The impulse is discretized as magnitude/dt over the single sample whose
    interval contains impulse_time, so the transferred momentum is exactly
    the stated magnitude regardless of dt.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if scenario.kind == "none":
        return 0.0
    if scenario.kind == "sinusoid":
        return scenario.sinusoid_amplitude * math.sin(
            2.0 * math.pi * scenario.sinusoid_frequency * t
        )
    if scenario.kind == "impulse":
        k = int(round(t / dt))
        k_imp = int(math.floor(scenario.impulse_time / dt + 1e-9))
        return scenario.impulse_magnitude / dt if k == k_imp else 0.0
    # random_vibration: white Gaussian through a one-pole low-pass at `bandwidth`
    draw = scenario.white_noise_std * state.rng.standard_normal()
    a = math.exp(-2.0 * math.pi * scenario.bandwidth * dt)
    state.filtered = a * state.filtered + (1.0 - a) * draw
    return state.filtered


def substep_count(system, dt):
    """Substeps needed to keep omega_max * h below the accuracy budget."""
    omega_max = float(system.natural_frequencies[-1])
    return max(1, int(math.ceil(omega_max * dt / MAX_PHASE_PER_SUBSTEP)))


class _Stepper:
    """Per-episode stepping context; caches the M^-1-premultiplied matrices."""

    def __init__(self, system, dt, substeps=None):
        self.system = system
        self.dt = dt
        self.substeps = substeps if substeps is not None else substep_count(system, dt)
        minv = np.linalg.inv(system.mass_matrix)
        self._minv = minv
        self._minv_k = np.ascontiguousarray(minv @ system.stiffness_matrix)
        self._minv_d = np.ascontiguousarray(minv @ system.damping_matrix)

    def advance(self, state, modal_force, step_index=None):
        w, wd = _core.rk4_modal_steps(
            self._minv_k,
            self._minv_d,
            np.ascontiguousarray(self._minv @ np.asarray(modal_force, dtype=float)),
            np.ascontiguousarray(state.w, dtype=float),
            np.ascontiguousarray(state.wd, dtype=float),
            self.dt / self.substeps,
            self.substeps,
        )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(wd))):
            where = f"step {step_index}" if step_index is not None else f"t={state.t:.6g}"
            raise DivergenceError(f"plant state diverged at {where}")
        return PlantState(w=w, wd=wd, t=state.t + self.dt)


def step(system, state, modal_force, dt, substeps=None, step_index=None):
    """Advance one sample with the modal force held constant (ZOH)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return _Stepper(system, dt, substeps).advance(state, modal_force, step_index)


class ZeroController:
    """Outputs zero voltages; the open-loop baseline."""

    def __init__(self, count):
        self.count = count

    def reset(self):
        pass

    def __call__(self, t, reading, state):
        return np.zeros(self.count)


class RandomVoltageController:
    """Band-limited Gaussian voltage excitation for system identification."""

    def __init__(self, count, std, bandwidth, dt, voltage_limits, seed=0):
        self.count = count
        self.std = std
        self.bandwidth = bandwidth
        self.dt = dt
        self.limits = np.asarray(voltage_limits, dtype=float)
        self.seed = seed
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        self._filtered = np.zeros(self.count)

    def __call__(self, t, reading, state):
        draw = self.std * self._rng.standard_normal(self.count)
        a = math.exp(-2.0 * math.pi * self.bandwidth * self.dt)
        self._filtered = a * self._filtered + (1.0 - a) * draw
        return np.clip(self._filtered, -self.limits, self.limits)


@dataclass
class Trajectory:
    """Uniformly sampled episode record (one row per control sample)."""

    dt: float
    times: np.ndarray
    w: np.ndarray
    wd: np.ndarray
    voltages: np.ndarray
    readings: np.ndarray
    disturbance: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def sample_count(self):
        return len(self.times)

    def tip_displacement(self, basis):
        """Reconstructed transverse tip deflection u(L, t)."""
        psi_tip = np.array(
            [mode_shape(basis, s, basis.length) for s in range(1, self.w.shape[1] + 1)]
        )
        return self.w @ psi_tip

    def modal_force(self, array):
        """Applied PZT modal force history F_c(t) (n_samples, n_s)."""
        return self.voltages @ array.influence_matrix.T


def run_episode(basis, system, array, scenario, controller, duration, dt,
                noise_std=0.0, initial_state=None, substeps=None,
                system_updates=()):
    """Run one closed-loop episode and record everything.

    Per sample: read sensors (noisy), query the controller, clip to the drive
    limits, add the projected disturbance and advance the plant.  Identical
    scenario seeds give bitwise-identical noise and disturbance streams, so
    controller comparisons under a shared seed are paired.

    `system_updates` is a sequence of (time, ModalSystem) swaps applied when
    the simulation clock reaches each time (used for robustness studies).
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    n_steps = int(round(duration / dt))
    n_modes = system.mode_count
    m = array.count

    if not 0.0 <= scenario.application_point <= basis.length:
        raise ValueError("disturbance application point outside the beam")
    psi_dist = np.array(
        [mode_shape(basis, s, scenario.application_point) for s in range(1, n_modes + 1)]
    )

    seq = np.random.SeedSequence(scenario.seed)
    dist_seed, sense_seed = seq.spawn(2)
    dist_state = DisturbanceState(np.random.default_rng(dist_seed))
    sense_rng = np.random.default_rng(sense_seed)

    controller.reset()
    state = initial_state if initial_state is not None else PlantState.zero(n_modes)

    times = np.empty(n_steps)
    w_hist = np.empty((n_steps, n_modes))
    wd_hist = np.empty((n_steps, n_modes))
    v_hist = np.empty((n_steps, m))
    z_hist = np.empty((n_steps, m))
    fd_hist = np.empty(n_steps)
    qp_cost = np.full(n_steps, np.nan)
    qp_iters = np.zeros(n_steps)
    qp_residual = np.full(n_steps, np.nan)
    has_diag = False

    updates = sorted(system_updates, key=lambda item: item[0])
    update_idx = 0
    stepper = _Stepper(system, dt, substeps)

    for k in range(n_steps):
        t = k * dt
        while update_idx < len(updates) and t >= updates[update_idx][0] - 1e-12:
            stepper = _Stepper(updates[update_idx][1], dt, substeps)
            update_idx += 1
        z = sensor_reading(array, state.w, noise_std, sense_rng)
        v_raw = np.asarray(controller(t, z, state), dtype=float)
        if v_raw.shape != (m,):
            raise ValueError(
                f"controller returned shape {v_raw.shape}, expected ({m},)"
            )
        v = array.clip(v_raw)
        fd = disturbance_force(scenario, t, dt, dist_state)
        force = control_force(array, v) + fd * psi_dist
        times[k] = t
        w_hist[k] = state.w
        wd_hist[k] = state.wd
        v_hist[k] = v
        z_hist[k] = z
        fd_hist[k] = fd
        diag = getattr(controller, "last_diagnostics", None)
        if diag is not None:
            qp_cost[k] = diag.get("cost", np.nan)
            qp_iters[k] = diag.get("iterations", 0)
            qp_residual[k] = diag.get("residual", np.nan)
            has_diag = True
        try:
            state = stepper.advance(state, force, k)
        except DivergenceError as exc:
            exc.partial = Trajectory(
                dt=dt,
                times=times[: k + 1],
                w=w_hist[: k + 1],
                wd=wd_hist[: k + 1],
                voltages=v_hist[: k + 1],
                readings=z_hist[: k + 1],
                disturbance=fd_hist[: k + 1],
            )
            raise

    diagnostics = {}
    if has_diag:
        diagnostics = {
            "qp_cost": qp_cost,
            "qp_iters": qp_iters,
            "qp_residual": qp_residual,
        }
    return Trajectory(
        dt=dt,
        times=times,
        w=w_hist,
        wd=wd_hist,
        voltages=v_hist,
        readings=z_hist,
        disturbance=fd_hist,
        diagnostics=diagnostics,
    )
