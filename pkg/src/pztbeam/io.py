"""CSV serialization (17 significant digits, byte-stable) and atomic writes."""
from __future__ import annotations

import os
import tempfile

import numpy as np

from .metrics import MetricsReport
from .plant import Trajectory


def format_float(x):
    """Floating-point field with 17 significant digits (round-trip exact)."""
    return f"{x:.17g}"


def write_text_atomic(path, text):
    """Write-temp-then-rename so partial files never appear under `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_columns(n_modes, n_patches, with_qp):
    cols = ["t"]
    cols += [f"W_{s}" for s in range(1, n_modes + 1)]
    cols += [f"Wdot_{s}" for s in range(1, n_modes + 1)]
    cols += [f"V_{j}" for j in range(1, n_patches + 1)]
    cols += [f"z_{j}" for j in range(1, n_patches + 1)]
    cols += ["Fd"]
    if with_qp:
        cols += ["qp_cost", "qp_iters", "qp_residual"]
    return cols


def trajectory_to_csv(traj):
    """Header plus one row per sample; floats at 17 significant digits."""
    n_modes = traj.w.shape[1]
    n_patches = traj.voltages.shape[1]
    with_qp = "qp_cost" in traj.diagnostics
    lines = [",".join(trajectory_columns(n_modes, n_patches, with_qp))]
    for k in range(traj.sample_count):
        row = [traj.times[k], *traj.w[k], *traj.wd[k], *traj.voltages[k],
               *traj.readings[k], traj.disturbance[k]]
        if with_qp:
            row += [traj.diagnostics["qp_cost"][k],
                    traj.diagnostics["qp_iters"][k],
                    traj.diagnostics["qp_residual"][k]]
        lines.append(",".join(format_float(x) for x in row))
    return "\n".join(lines) + "\n"


def trajectory_from_csv(text):
    """Parse a trajectory CSV produced by trajectory_to_csv."""
    lines = [ln for ln in text.strip().split("\n") if ln]
    header = lines[0].split(",")
    n_modes = sum(1 for c in header if c.startswith("W_"))
    n_patches = sum(1 for c in header if c.startswith("V_"))
    with_qp = "qp_cost" in header
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    ofs = 1
    w = data[:, ofs : ofs + n_modes]
    ofs += n_modes
    wd = data[:, ofs : ofs + n_modes]
    ofs += n_modes
    volts = data[:, ofs : ofs + n_patches]
    ofs += n_patches
    readings = data[:, ofs : ofs + n_patches]
    ofs += n_patches
    fd = data[:, ofs]
    ofs += 1
    diagnostics = {}
    if with_qp:
        diagnostics = {
            "qp_cost": data[:, ofs],
            "qp_iters": data[:, ofs + 1],
            "qp_residual": data[:, ofs + 2],
        }
    times = data[:, 0]
    dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
    return Trajectory(
        dt=dt,
        times=times,
        w=w,
        wd=wd,
        voltages=volts,
        readings=readings,
        disturbance=fd,
        diagnostics=diagnostics,
    )


_METRIC_COLUMNS = (
    "controller", "rms_modal", "peak_tip", "settling_time_2pct", "settled",
    "control_energy", "amplitude_reduction_vs_open_loop", "stable",
    "max_qp_residual", "train_mse", "val_mse", "test_mse",
)


def metrics_to_csv(reports):
    """Metrics table; rms_modal expands to one column per mode."""
    if not reports:
        raise ValueError("no metrics to write")
    n_modes = len(reports[0].rms_modal)
    header = ["controller"]
    header += [f"rms_modal_{s}" for s in range(1, n_modes + 1)]
    header += list(_METRIC_COLUMNS[2:])
    lines = [",".join(header)]
    for rep in reports:
        row = [rep.controller]
        row += [format_float(v) for v in rep.rms_modal]
        row += [
            format_float(rep.peak_tip),
            format_float(rep.settling_time_2pct),
            "1" if rep.settled else "0",
            format_float(rep.control_energy),
            format_float(rep.amplitude_reduction_vs_open_loop),
            "1" if rep.stable else "0",
            format_float(rep.max_qp_residual),
            format_float(rep.train_mse),
            format_float(rep.val_mse),
            format_float(rep.test_mse),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def metrics_from_csv(text):
    lines = [ln for ln in text.strip().split("\n") if ln]
    header = lines[0].split(",")
    n_modes = sum(1 for c in header if c.startswith("rms_modal_"))
    reports = []
    for ln in lines[1:]:
        vals = ln.split(",")
        reports.append(MetricsReport(
            controller=vals[0],
            rms_modal=tuple(float(v) for v in vals[1 : 1 + n_modes]),
            peak_tip=float(vals[1 + n_modes]),
            settling_time_2pct=float(vals[2 + n_modes]),
            settled=vals[3 + n_modes] == "1",
            control_energy=float(vals[4 + n_modes]),
            amplitude_reduction_vs_open_loop=float(vals[5 + n_modes]),
            stable=vals[6 + n_modes] == "1",
            max_qp_residual=float(vals[7 + n_modes]),
            train_mse=float(vals[8 + n_modes]),
            val_mse=float(vals[9 + n_modes]),
            test_mse=float(vals[10 + n_modes]),
        ))
    return reports


def training_report_to_csv(report):
    """epoch, lambda, train_mse, val_mse rows of one LM run."""
    lines = ["epoch,lambda,train_mse,val_mse"]
    for epoch, lam, train, val in report.rows():
        lines.append(
            f"{epoch},{format_float(lam)},{format_float(train)},{format_float(val)}"
        )
    return "\n".join(lines) + "\n"
