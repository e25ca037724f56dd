"""PD baseline on the strain readings, with a filtered derivative.

V = -Kp z - Kd zdot_f, zdot_f from a one-pole low-pass on the finite
difference of the readings.  With d31 < 0 the stabilizing scalar gains on
this plant are negative (collocated patch force opposes +V curvature), which
the grid tuner finds on its own; the frozen defaults live in config.py.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PdGains:
    proportional: np.ndarray  # (m, n_z) volts per reading unit
    derivative: np.ndarray  # (m, n_z) volt-seconds per reading unit
    derivative_filter_cutoff: float = 50.0

    def __post_init__(self):
        kp = np.atleast_2d(np.asarray(self.proportional, dtype=float))
        kd = np.atleast_2d(np.asarray(self.derivative, dtype=float))
        if not (np.all(np.isfinite(kp)) and np.all(np.isfinite(kd))):
            raise ValueError("gains must be finite")
        if self.derivative_filter_cutoff <= 0.0:
            raise ValueError("derivative filter cutoff must be positive")
        object.__setattr__(self, "proportional", kp)
        object.__setattr__(self, "derivative", kd)

    @classmethod
    def scalar(cls, kp, kd, channels, derivative_filter_cutoff=50.0):
        eye = np.eye(channels)
        return cls(kp * eye, kd * eye, derivative_filter_cutoff)


def pd_control(gains, reading, reading_rate):
    """Unclipped PD law; linear in (reading, reading_rate)."""
    return -(gains.proportional @ reading) - (gains.derivative @ reading_rate)


class PdController:
    """Episode controller owning the derivative filter state."""

    def __init__(self, gains, voltage_limits, dt):
        self.gains = gains
        self.limits = np.asarray(voltage_limits, dtype=float)
        self.dt = dt
        self._alpha = math.exp(-2.0 * math.pi * gains.derivative_filter_cutoff * dt)
        self.reset()

    def reset(self):
        self._prev = None
        self._rate = None
        self.last_diagnostics = None

    def __call__(self, t, reading, state):
        reading = np.asarray(reading, dtype=float)
        if self._prev is None:
            self._rate = np.zeros_like(reading)
        else:
            raw = (reading - self._prev) / self.dt
            self._rate = self._alpha * self._rate + (1.0 - self._alpha) * raw
        self._prev = reading
        v = pd_control(self.gains, reading, self._rate)
        return np.clip(v, -self.limits, self.limits)


def tune_pd_gains(run_scenario, kp_values, kd_values, cutoff=50.0):
    """Grid search over scalar (kp, kd) pairs; best settling time wins,
    RMS tip displacement breaks ties.

    `run_scenario(gains)` must run the closed-loop episode and return
    (settling_time, settled, rms_tip).  Returns (kp, kd, results) with the
    full grid in `results` for the record.
    """
    results = []
    best = None
    for kp in kp_values:
        for kd in kd_values:
            try:
                settle, settled, rms = run_scenario(kp, kd, cutoff)
            except Exception:
                settle, settled, rms = math.inf, False, math.inf
            key = (0 if settled else 1, settle if settled else math.inf, rms)
            results.append((kp, kd, settle, settled, rms))
            if best is None or key < best[0]:
                best = (key, kp, kd)
    return best[1], best[2], results
