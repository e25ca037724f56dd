"""Command-line harness.

Subcommands:
  run <config>          one episode; writes trajectory.csv, metrics.csv, SVG plots
  compare <configs...>  controller head-to-head on a shared plant/seed
  train <config>        identification episodes + NARX training; writes model
                        files and training_report.csv

Exit codes: 0 ok, 2 configuration error, 3 numeric failure.  "Response time"
in the metrics is the 2%-band settling time of the reconstructed tip
displacement; "stability" is boundedness plus monotone decay of the 1 s
moving RMS after the disturbance window.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io, metrics as metrics_mod, narx as narx_mod
from .config import ScenarioConfig
from .errors import ConfigError, ConvergenceError, DivergenceError, PztBeamError
from .modal import mode_shape
from .mpc import NmpcConfig, NmpcController, discretize
from .pdctrl import PdController, PdGains
from .plant import (DisturbanceScenario, PlantState, RandomVoltageController,
                    ZeroController, run_episode)

log = logging.getLogger("pztbeam")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def make_nmpc_controller(cfg, system, array):
    settings = cfg.controller.nmpc
    model = discretize(system, array, cfg.dt)
    omega = system.natural_frequencies if settings.modal_weighting == "stiffness" else None
    nmpc_cfg = NmpcConfig.from_weights(
        system.mode_count,
        array.count,
        coord_weight=settings.coord_weight,
        rate_weight=settings.rate_weight,
        control_weight=settings.control_weight,
        prediction_horizon=settings.prediction_horizon,
        control_horizon=settings.control_horizon,
        dt=cfg.dt,
        voltage_limit=cfg.pzt_voltage_limit,
        mode_frequencies=omega,
        qp_tol=settings.qp_tol,
    )
    return NmpcController(model, nmpc_cfg, array.voltage_limits)


def build_controller(cfg, basis, system, array):
    """Instantiate the configured controller against the built plant."""
    kind = cfg.controller.type
    limits = array.voltage_limits
    if kind == "none":
        return ZeroController(array.count)
    if kind == "pd":
        pd = cfg.controller.pd
        gains = PdGains.scalar(pd.kp, pd.kd, array.count,
                               pd.derivative_filter_cutoff)
        return PdController(gains, limits, cfg.dt)
    if kind == "nmpc":
        return make_nmpc_controller(cfg, system, array)
    if kind == "narx":
        settings = cfg.controller.narx
        path = cfg.resolve_model_path()
        if not os.path.exists(path):
            raise ConfigError("controller.narx.model_path", f"no model file at {path}")
        net = narx_mod.load_net(path)
        adaptor = narx_mod.NndAdaptor(
            error_threshold=settings.error_threshold,
            adaptation_rate=settings.adaptation_rate,
            window=settings.window,
        )
        return narx_mod.NarxController(
            net, limits, decay=settings.decay, adaptor=adaptor,
            adaptation_enabled=settings.adaptation_enabled,
        )
    raise ConfigError("controller.type", f"unknown controller {kind!r}")


def _system_updates(cfg, basis):
    if cfg.plant_change_time is None:
        return ()
    changed = cfg.build_system(basis, density_scale=cfg.plant_change_density_scale)
    return ((cfg.plant_change_time, changed),)


def run_configured_episode(cfg, controller=None, with_open_loop=True):
    """Build the plant from `cfg` and run it; returns (trajectory, open_loop,
    metrics report, plant pieces)."""
    basis = cfg.build_basis()
    system = cfg.build_system(basis)
    array = cfg.build_array(basis)
    scenario = cfg.build_disturbance()
    if controller is None:
        controller = build_controller(cfg, basis, system, array)
    updates = _system_updates(cfg, basis)
    traj = run_episode(basis, system, array, scenario, controller, cfg.duration,
                       cfg.dt, noise_std=cfg.sensor_noise_std,
                       substeps=cfg.substeps, system_updates=updates)
    open_traj = None
    if with_open_loop and cfg.controller.type != "none":
        open_traj = run_episode(basis, system, array, scenario,
                                ZeroController(array.count), cfg.duration, cfg.dt,
                                noise_std=cfg.sensor_noise_std,
                                substeps=cfg.substeps, system_updates=updates)
    dist_time = cfg.disturbance["impulse_time"] if cfg.disturbance_kind == "impulse" else 0.0
    report = metrics_mod.compute_metrics(
        traj, basis, controller=cfg.controller.type, open_loop=open_traj,
        disturbance_time=dist_time,
    )
    return traj, open_traj, report, (basis, system, array, scenario)


def plot_modal_coefficients(trajs, labels, path):
    """One subplot per mode, controllers overlaid; written as SVG."""
    n_modes = trajs[0].w.shape[1]
    fig, axes = plt.subplots(n_modes, 1, figsize=(8, 2.4 * n_modes), sharex=True)
    axes = np.atleast_1d(axes)
    for s in range(n_modes):
        for traj, label in zip(trajs, labels):
            axes[s].plot(traj.times, traj.w[:, s], label=label, linewidth=0.9)
        axes[s].set_ylabel(f"W_{s + 1}")
        axes[s].grid(True, alpha=0.3)
    axes[-1].set_xlabel("time (s)")
    axes[0].legend(loc="upper right")
    axes[0].set_title("Modal time coefficients")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_modal_force(trajs, arrays, labels, path):
    """PZT modal force history per mode, controllers overlaid; SVG."""
    n_modes = arrays[0].influence_matrix.shape[0]
    fig, axes = plt.subplots(n_modes, 1, figsize=(8, 2.4 * n_modes), sharex=True)
    axes = np.atleast_1d(axes)
    for s in range(n_modes):
        for traj, array, label in zip(trajs, arrays, labels):
            fc = traj.modal_force(array)
            axes[s].plot(traj.times, fc[:, s], label=label, linewidth=0.9)
        axes[s].set_ylabel(f"Fc mode {s + 1} (N)")
        axes[s].grid(True, alpha=0.3)
    axes[-1].set_xlabel("time (s)")
    axes[0].legend(loc="upper right")
    axes[0].set_title("PZT modal control force")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _write_outputs(outdir, traj, reports, array, label):
    os.makedirs(outdir, exist_ok=True)
    io.write_text_atomic(os.path.join(outdir, "trajectory.csv"),
                         io.trajectory_to_csv(traj))
    io.write_text_atomic(os.path.join(outdir, "metrics.csv"),
                         io.metrics_to_csv(reports))
    plot_modal_coefficients([traj], [label],
                            os.path.join(outdir, "modal_coefficients.svg"))
    plot_modal_force([traj], [array], [label],
                     os.path.join(outdir, "modal_force.svg"))


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "dt", None) is not None:
        cfg.dt = args.dt
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    return cfg


def cmd_run(args):
    cfg = _apply_overrides(ScenarioConfig.load(args.config), args)
    outdir = cfg.output_dir
    try:
        traj, _, report, (_, _, array, _) = run_configured_episode(cfg)
    except DivergenceError as exc:
        if exc.partial is not None:
            os.makedirs(outdir, exist_ok=True)
            io.write_text_atomic(os.path.join(outdir, "trajectory.csv"),
                                 io.trajectory_to_csv(exc.partial))
        log.error("simulation diverged: %s", exc)
        return EXIT_NUMERIC
    _write_outputs(outdir, traj, [report], array, cfg.controller.type)
    log.info("run complete: %s (settling %.3gs, settled=%s)", outdir,
             report.settling_time_2pct, report.settled)
    return EXIT_OK


def cmd_compare(args):
    configs = [ScenarioConfig.load(path) for path in args.configs]
    if args.seed is not None:
        for cfg in configs:
            cfg.seed = args.seed
    if args.dt is not None:
        for cfg in configs:
            cfg.dt = args.dt
    first = configs[0]
    for i, other in enumerate(configs[1:], start=2):
        if not first.shares_experiment(other):
            raise ConfigError(
                f"configs[{i}]",
                "plant/disturbance/seed differ from the first config; "
                "comparisons need a shared experiment",
            )
    outdir = args.out if args.out is not None else first.output_dir
    os.makedirs(outdir, exist_ok=True)

    trajs, arrays, reports, labels = [], [], [], []
    for cfg in configs:
        traj, _, report, (_, _, array, _) = run_configured_episode(cfg)
        trajs.append(traj)
        arrays.append(array)
        reports.append(report)
        labels.append(cfg.controller.type)

    order = sorted(
        range(len(reports)),
        key=lambda i: (not reports[i].settled,
                       reports[i].settling_time_2pct
                       if reports[i].settled else math.inf),
    )
    ranked = [reports[i] for i in order]
    io.write_text_atomic(os.path.join(outdir, "metrics.csv"),
                         io.metrics_to_csv(ranked))
    n_modes = trajs[0].w.shape[1]
    for s in range(n_modes):
        fig, ax = plt.subplots(figsize=(8, 3))
        for traj, label in zip(trajs, labels):
            ax.plot(traj.times, traj.w[:, s], label=label, linewidth=0.9)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(f"W_{s + 1}")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(os.path.join(outdir, f"mode_{s + 1}_overlay.svg"), format="svg")
        plt.close(fig)
    plot_modal_force(trajs, arrays, labels,
                     os.path.join(outdir, "modal_force_overlay.svg"))
    log.info("compare complete: %s", outdir)
    return EXIT_OK


def identification_episodes(cfg):
    """Excitation data for system identification.

    NMPC-controlled releases from impulse-equivalent initial velocities plus
    band-limited random-voltage episodes.  Episodes run disturbance-free so
    every recorded transition is explained by the applied voltages (an
    unmodeled impulse row would poison the inverse regression).
    """
    basis = cfg.build_basis()
    system = cfg.build_system(basis)
    array = cfg.build_array(basis)
    train = cfg.training
    total = train.nmpc_episodes + train.random_episodes
    if total == 0:
        raise ConfigError("training", "no excitation episodes configured")
    if train.random_episodes > 0 and train.excitation_voltage_std == 0.0:
        raise ConfigError("training.excitation_voltage_std",
                          "zero excitation gives a degenerate dataset")
    seeds = np.random.SeedSequence([cfg.seed, 77]).generate_state(total)
    episodes = []
    magnitudes = (10.0, 20.0, 5.0, 15.0)
    tip_point = cfg.disturbance["application_point"]
    psi_release = np.array([
        mode_shape(basis, s, tip_point) for s in range(1, system.mode_count + 1)
    ])
    minv = np.linalg.inv(system.mass_matrix)
    for i in range(train.nmpc_episodes):
        mag = magnitudes[i % len(magnitudes)]
        init = PlantState(w=np.zeros(system.mode_count),
                          wd=minv @ (mag * psi_release), t=0.0)
        scenario = DisturbanceScenario(kind="none", seed=int(seeds[i]))
        controller = make_nmpc_controller(cfg, system, array)
        traj = run_episode(basis, system, array, scenario, controller,
                           train.episode_duration, cfg.dt,
                           noise_std=cfg.sensor_noise_std, substeps=cfg.substeps,
                           initial_state=init)
        episodes.append((np.hstack([traj.w, traj.wd]), traj.voltages))
    for i in range(train.random_episodes):
        seed = int(seeds[train.nmpc_episodes + i])
        scenario = DisturbanceScenario(kind="none", seed=seed)
        controller = RandomVoltageController(
            array.count, train.excitation_voltage_std, train.excitation_bandwidth,
            cfg.dt, array.voltage_limits, seed=seed + 1,
        )
        traj = run_episode(basis, system, array, scenario, controller,
                           train.episode_duration, cfg.dt,
                           noise_std=cfg.sensor_noise_std, substeps=cfg.substeps)
        episodes.append((np.hstack([traj.w, traj.wd]), traj.voltages))
    return episodes, system, array


def train_models(cfg):
    """Train the forward and inverse NARX nets from identification episodes."""
    episodes, system, array = identification_episodes(cfg)
    train = cfg.training
    m = array.count
    y_dim = 2 * system.mode_count
    fwd_layout = narx_mod.forward_layout(train.feedback_delays, train.input_delays)
    inv_layout = narx_mod.inverse_layout(train.feedback_delays, train.input_delays)
    results = {}
    for name, layout, target, n_out in (
        ("forward", fwd_layout, "y_next", y_dim),
        ("inverse", inv_layout, "u_now", m),
    ):
        dataset = narx_mod.build_dataset(episodes, layout, target,
                                         split=train.split, seed=cfg.seed)
        net = narx_mod.NarxNet.initialize(
            y_dim=y_dim, u_dim=m, layout=layout, n_out=n_out,
            hidden=train.hidden, seed=cfg.seed + (1 if name == "inverse" else 0),
        )
        net, report = narx_mod.train_lm(
            net, dataset,
            max_epochs=train.max_epochs,
            lam_init=train.lm_lambda_init,
            lam_factor=train.lm_lambda_factor,
            patience=train.patience,
        )
        results[name] = (net, report)
    return results


def cmd_train(args):
    cfg = _apply_overrides(ScenarioConfig.load(args.config), args)
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    try:
        results = train_models(cfg)
    except DivergenceError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_NUMERIC
    for name, (net, report) in results.items():
        model_path = os.path.join(outdir, f"{cfg.training.model_name}_{name}.net")
        narx_mod.save_net(net, model_path)
        suffix = "" if name == "inverse" else "_forward"
        io.write_text_atomic(
            os.path.join(outdir, f"training_report{suffix}.csv"),
            io.training_report_to_csv(report),
        )
        log.info("%s net: best val MSE %.3g (epoch %d), test MSE %.3g -> %s",
                 name, report.val_mse[report.best_epoch - 1]
                 if len(report.val_mse) else math.nan,
                 report.best_epoch, report.test_mse, model_path)
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(
        prog="pztbeam",
        description="Piezo-actuated appendage vibration control: simulate, "
                    "compare controllers, train the NARX models.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured episode")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, help="seed override")
    p_run.add_argument("--dt", type=float, help="sample time override (s)")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare controllers on a shared scenario")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--out", help="output directory (default: first config's)")
    p_cmp.add_argument("--seed", type=int, help="seed override for every config")
    p_cmp.add_argument("--dt", type=float, help="sample time override (s)")
    p_cmp.set_defaults(func=cmd_compare)

    p_train = sub.add_parser("train", help="train the NARX forward/inverse models")
    p_train.add_argument("config")
    p_train.add_argument("--out", help="output directory (overrides config)")
    p_train.add_argument("--seed", type=int, help="seed override")
    p_train.add_argument("--dt", type=float, help="sample time override (s)")
    p_train.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error at %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_CONFIG
    except (DivergenceError, ConvergenceError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except PztBeamError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
