"""Episode metrics: per-mode RMS, peak tip deflection, 2%-band settling time,
control energy, reduction versus open loop, plus spectral helpers for the
controller comparisons.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    controller: str
    rms_modal: tuple
    peak_tip: float
    settling_time_2pct: float  # nan when not settled
    settled: bool
    control_energy: float
    amplitude_reduction_vs_open_loop: float  # nan without an open-loop companion
    stable: bool
    max_qp_residual: float = math.nan
    train_mse: float = math.nan
    val_mse: float = math.nan
    test_mse: float = math.nan

    FIELDS = (
        "controller", "rms_modal", "peak_tip", "settling_time_2pct", "settled",
        "control_energy", "amplitude_reduction_vs_open_loop", "stable",
        "max_qp_residual", "train_mse", "val_mse", "test_mse",
    )


def settling_time_2pct(times, tip):
    """First time after which |tip| stays within 2% of its peak magnitude.

    Returns (time, settled); (nan, False) when the signal never settles
    within the record.
    """
    tip = np.abs(np.asarray(tip, dtype=float))
    peak = tip.max()
    if peak == 0.0:
        return float(times[0]), True
    band = 0.02 * peak
    outside = np.nonzero(tip > band)[0]
    if len(outside) == 0:
        return float(times[0]), True
    last = outside[-1]
    if last == len(tip) - 1:
        return math.nan, False
    return float(times[last + 1]), True


def moving_rms(signal, window):
    """Centered-right moving RMS over `window` samples."""
    sq = np.asarray(signal, dtype=float) ** 2
    kernel = np.ones(window) / window
    return np.sqrt(np.convolve(sq, kernel, mode="valid"))


def is_stable(times, tip, dt, after=0.0, window_seconds=1.0, slack=1.05):
    """Bounded response whose 1 s moving RMS decays after the disturbance window.

    The moving RMS may wiggle by `slack` locally; it must never grow past
    slack * its running minimum.
    """
    if not np.all(np.isfinite(tip)):
        return False
    mask = times >= after
    sig = np.asarray(tip)[mask]
    window = max(1, int(round(window_seconds / dt)))
    if len(sig) <= window:
        return True
    rms = moving_rms(sig, window)
    running_min = np.minimum.accumulate(rms)
    floor = max(1e-12, 1e-6 * rms[0])
    return bool(np.all(rms <= slack * np.maximum(running_min, floor)))


def highpass_power(signal, dt, cutoff_hz):
    """Total spectral power of `signal` above cutoff_hz (rfft periodogram)."""
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    spec = np.fft.rfft(sig - sig.mean(axis=0), axis=0)
    freqs = np.fft.rfftfreq(sig.shape[0], dt)
    power = np.abs(spec) ** 2
    return float(power[freqs > cutoff_hz].sum())


def compute_metrics(traj, basis, controller="none", open_loop=None,
                    disturbance_time=0.0):
    """MetricsReport of one trajectory; pass the open-loop companion run to
    fill the amplitude-reduction field."""
    tip = traj.tip_displacement(basis)
    rms_modal = tuple(np.sqrt(np.mean(traj.w**2, axis=0)))
    settle, settled = settling_time_2pct(traj.times, tip)
    energy = float(np.sum(traj.voltages**2) * traj.dt)
    reduction = math.nan
    if open_loop is not None:
        tip_open = open_loop.tip_displacement(basis)
        rms_closed = float(np.sqrt(np.mean(tip**2)))
        rms_open = float(np.sqrt(np.mean(tip_open**2)))
        reduction = 1.0 - rms_closed / rms_open if rms_open > 0.0 else 0.0
    qp_res = math.nan
    if "qp_residual" in traj.diagnostics:
        finite = traj.diagnostics["qp_residual"]
        finite = finite[np.isfinite(finite)]
        if len(finite):
            qp_res = float(np.max(finite))
    return MetricsReport(
        controller=controller,
        rms_modal=rms_modal,
        peak_tip=float(np.max(np.abs(tip))),
        settling_time_2pct=settle,
        settled=settled,
        control_energy=energy,
        amplitude_reduction_vs_open_loop=reduction,
        stable=is_stable(traj.times, tip, traj.dt, after=disturbance_time + 1.0),
        max_qp_residual=qp_res,
    )
