"""Scenario configuration: strict YAML schema, canonical emission, builders.

One structured file describes an experiment end to end (beam, patches,
integrator, disturbance, controller, training).  Parsing rejects unknown keys
and reports field-level diagnostics; emission is canonical (sorted keys,
full defaults), so emit -> parse -> emit is byte-identical.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .errors import ConfigError
from .modal import BeamProperties, ModeBasis, assemble_modal_system
from .plant import DisturbanceScenario
from .pzt import PztArray, PztPatch

# Defaults describe the reference satellite appendage; the PD gains and NMPC
# weights are the frozen results of the documented tuning runs (see README).
DEFAULT_INERTIA = ((1.2, -0.05, -0.03), (-0.05, 3.02, -0.02), (-0.03, -0.02, 8.02))
DEFAULT_PD_KP = -20.0
DEFAULT_PD_KD = -128.0
DEFAULT_NMPC_COORD_WEIGHT = 1.0e4
DEFAULT_NMPC_RATE_WEIGHT = 1.0e2
DEFAULT_NMPC_CONTROL_WEIGHT = 1.0e-4


class _Walker:
    """Pops typed keys out of a mapping; leftovers are unknown-key errors."""

    def __init__(self, mapping, path):
        if mapping is None:
            mapping = {}
        if not isinstance(mapping, dict):
            raise ConfigError(path, f"expected a mapping, got {type(mapping).__name__}")
        self.mapping = dict(mapping)
        self.path = path

    def _field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def number(self, key, default, minimum=None, maximum=None, strict_min=None):
        val = self.mapping.pop(key, default)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(self._field(key), f"expected a number, got {val!r}")
        val = float(val)
        if strict_min is not None and val <= strict_min:
            raise ConfigError(self._field(key), f"must be > {strict_min}, got {val}")
        if minimum is not None and val < minimum:
            raise ConfigError(self._field(key), f"must be >= {minimum}, got {val}")
        if maximum is not None and val > maximum:
            raise ConfigError(self._field(key), f"must be <= {maximum}, got {val}")
        return val

    def integer(self, key, default, minimum=None):
        val = self.mapping.pop(key, default)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(self._field(key), f"expected an integer, got {val!r}")
        if minimum is not None and val < minimum:
            raise ConfigError(self._field(key), f"must be >= {minimum}, got {val}")
        return int(val)

    def boolean(self, key, default):
        val = self.mapping.pop(key, default)
        if not isinstance(val, bool):
            raise ConfigError(self._field(key), f"expected true/false, got {val!r}")
        return val

    def string(self, key, default, choices=None):
        val = self.mapping.pop(key, default)
        if val is None:
            return None
        if not isinstance(val, str):
            raise ConfigError(self._field(key), f"expected a string, got {val!r}")
        if choices is not None and val not in choices:
            raise ConfigError(self._field(key), f"must be one of {sorted(choices)}")
        return val

    def number_list(self, key, default):
        val = self.mapping.pop(key, default)
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return [float(val)]
        if not isinstance(val, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in val
        ):
            raise ConfigError(self._field(key), "expected a number or list of numbers")
        return [float(v) for v in val]

    def matrix(self, key, default):
        val = self.mapping.pop(key, default)
        try:
            arr = np.asarray(val, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(self._field(key), f"expected a numeric matrix: {exc}")
        if arr.ndim != 2:
            raise ConfigError(self._field(key), "expected a 2-D matrix")
        return tuple(tuple(float(x) for x in row) for row in arr)

    def section(self, key):
        return _Walker(self.mapping.pop(key, {}), self._field(key))

    def finish(self):
        if self.mapping:
            key = sorted(self.mapping)[0]
            raise ConfigError(self._field(key), "unknown key")


@dataclass
class PdSettings:
    kp: float = DEFAULT_PD_KP
    kd: float = DEFAULT_PD_KD
    derivative_filter_cutoff: float = 50.0


@dataclass
class NmpcSettings:
    prediction_horizon: int = 10
    control_horizon: int = 5
    coord_weight: float = DEFAULT_NMPC_COORD_WEIGHT
    rate_weight: float = DEFAULT_NMPC_RATE_WEIGHT
    control_weight: float = DEFAULT_NMPC_CONTROL_WEIGHT
    modal_weighting: str = "stiffness"  # or "uniform"
    qp_tol: float = 1e-8


@dataclass
class NarxSettings:
    model_path: str = "narx_inverse.net"
    decay: float = 0.7
    adaptation_enabled: bool = False
    error_threshold: float = 0.05
    adaptation_rate: float = 3e-3
    window: int = 1


@dataclass
class ControllerSection:
    type: str = "none"
    pd: PdSettings = field(default_factory=PdSettings)
    nmpc: NmpcSettings = field(default_factory=NmpcSettings)
    narx: NarxSettings = field(default_factory=NarxSettings)


@dataclass
class TrainingSection:
    nmpc_episodes: int = 3
    random_episodes: int = 3
    episode_duration: float = 8.0
    excitation_voltage_std: float = 30.0
    excitation_bandwidth: float = 8.0
    hidden: int = 10
    feedback_delays: tuple = (1, 2)
    input_delays: tuple = (1, 2)
    max_epochs: int = 120
    patience: int = 10
    lm_lambda_init: float = 1e-2
    lm_lambda_factor: float = 10.0
    split: tuple = (0.7, 0.15, 0.15)
    model_name: str = "narx"


@dataclass
class ScenarioConfig:
    beam: BeamProperties
    satellite_inertia: tuple
    pzt_width: float
    pzt_span: float
    pzt_thickness: float
    pzt_youngs_modulus: float
    pzt_d31: float
    pzt_voltage_limit: float
    pzt_center_x: float
    pzt_centers_y: tuple
    dt: float
    duration: float
    substeps: int  # None selects the accuracy-based automatic count
    sensor_noise_std: float
    quadrature_points: int
    disturbance_kind: str
    disturbance: dict
    controller: ControllerSection
    training: TrainingSection
    plant_change_time: float
    plant_change_density_scale: float
    seed: int
    output_dir: str
    base_dir: str = "."

    # ---- construction -------------------------------------------------

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        top = _Walker(raw, "")

        beam_w = top.section("beam")
        mode_count = beam_w.integer("mode_count", 3, minimum=1)
        damping = beam_w.number_list("damping_ratios", [0.005])
        if len(damping) == 1:
            damping = damping * mode_count
        if len(damping) != mode_count:
            raise ConfigError("beam.damping_ratios",
                              f"need 1 or {mode_count} entries, got {len(damping)}")
        if any(z < 0.0 for z in damping):
            raise ConfigError("beam.damping_ratios", "ratios must be nonnegative")
        try:
            beam = BeamProperties(
                width=beam_w.number("width", 0.3, strict_min=0.0),
                length=beam_w.number("length", 1.0, strict_min=0.0),
                thickness=beam_w.number("thickness", 2e-3, strict_min=0.0),
                youngs_modulus=beam_w.number("youngs_modulus", 6.9e10, strict_min=0.0),
                poisson_ratio=beam_w.number("poisson_ratio", 0.33),
                density=beam_w.number("density", 2.7e3, strict_min=0.0),
                damping_ratios=tuple(damping),
                mode_count=mode_count,
            )
        except ValueError as exc:
            raise ConfigError("beam", str(exc))
        beam_w.finish()

        inertia = top.matrix("satellite_inertia", DEFAULT_INERTIA)

        pzt_w = top.section("pzt")
        pzt_width = pzt_w.number("width", 0.1, strict_min=0.0)
        pzt_span = pzt_w.number("span", 0.1, strict_min=0.0)
        pzt_thickness = pzt_w.number("thickness", 0.5e-3, strict_min=0.0)
        pzt_e = pzt_w.number("youngs_modulus", 6.9e10, strict_min=0.0)
        pzt_d31 = pzt_w.number("d31", -1.75e-10)
        pzt_limit = pzt_w.number("voltage_limit", 100.0, strict_min=0.0)
        pzt_cx = pzt_w.number("center_x", 0.1)
        centers = pzt_w.number_list("centers_y", [0.1, 0.5, 0.9])
        for i, cy in enumerate(centers):
            if cy - 0.5 * pzt_span < 0.0 or cy + 0.5 * pzt_span > beam.length:
                raise ConfigError(f"pzt.centers_y[{i}]",
                                  f"patch at {cy} overhangs the beam [0, {beam.length}]")
        pzt_w.finish()

        sim_w = top.section("simulation")
        dt = sim_w.number("dt", 0.01, strict_min=0.0)
        duration = sim_w.number("duration", 10.0, strict_min=0.0)
        substeps = sim_w.integer("substeps", None, minimum=1)
        noise = sim_w.number("sensor_noise_std", 0.05, minimum=0.0)
        quad = sim_w.integer("quadrature_points", 64, minimum=2)
        sim_w.finish()

        dist_w = top.section("disturbance")
        kind = dist_w.string("kind", "none",
                             choices=set(DisturbanceScenario.KINDS))
        dist = {
            "white_noise_std": dist_w.number("white_noise_std", 0.1, strict_min=0.0),
            "bandwidth": dist_w.number("bandwidth", 5.0, strict_min=0.0),
            "impulse_magnitude": dist_w.number("impulse_magnitude", 10.0),
            "impulse_time": dist_w.number("impulse_time", 1.0, minimum=0.0),
            "sinusoid_amplitude": dist_w.number("sinusoid_amplitude", 0.5),
            "sinusoid_frequency": dist_w.number("sinusoid_frequency", 1.0),
            "application_point": dist_w.number("application_point", beam.length,
                                               minimum=0.0, maximum=beam.length),
        }
        dist_w.finish()

        ctrl_w = top.section("controller")
        ctrl_type = ctrl_w.string("type", "none",
                                  choices={"none", "pd", "nmpc", "narx"})
        pd_w = ctrl_w.section("pd")
        pd = PdSettings(
            kp=pd_w.number("kp", DEFAULT_PD_KP),
            kd=pd_w.number("kd", DEFAULT_PD_KD),
            derivative_filter_cutoff=pd_w.number("derivative_filter_cutoff", 50.0,
                                                 strict_min=0.0),
        )
        pd_w.finish()
        nmpc_w = ctrl_w.section("nmpc")
        nmpc = NmpcSettings(
            prediction_horizon=nmpc_w.integer("prediction_horizon", 10, minimum=1),
            control_horizon=nmpc_w.integer("control_horizon", 5, minimum=1),
            coord_weight=nmpc_w.number("coord_weight", DEFAULT_NMPC_COORD_WEIGHT,
                                       minimum=0.0),
            rate_weight=nmpc_w.number("rate_weight", DEFAULT_NMPC_RATE_WEIGHT,
                                      minimum=0.0),
            control_weight=nmpc_w.number("control_weight",
                                         DEFAULT_NMPC_CONTROL_WEIGHT, strict_min=0.0),
            modal_weighting=nmpc_w.string("modal_weighting", "stiffness",
                                          choices={"stiffness", "uniform"}),
            qp_tol=nmpc_w.number("qp_tol", 1e-8, strict_min=0.0),
        )
        if nmpc.control_horizon > nmpc.prediction_horizon:
            raise ConfigError("controller.nmpc.control_horizon",
                              "must be <= prediction_horizon")
        nmpc_w.finish()
        narx_w = ctrl_w.section("narx")
        narx = NarxSettings(
            model_path=narx_w.string("model_path", "narx_inverse.net"),
            decay=narx_w.number("decay", 0.7, minimum=0.0, maximum=1.0),
            adaptation_enabled=narx_w.boolean("adaptation_enabled", False),
            error_threshold=narx_w.number("error_threshold", 0.05, minimum=0.0),
            adaptation_rate=narx_w.number("adaptation_rate", 3e-3, strict_min=0.0),
            window=narx_w.integer("window", 1, minimum=1),
        )
        narx_w.finish()
        controller = ControllerSection(type=ctrl_type, pd=pd, nmpc=nmpc, narx=narx)
        ctrl_w.finish()

        train_w = top.section("training")
        split = train_w.number_list("split", [0.7, 0.15, 0.15])
        if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0.0:
            raise ConfigError("training.split", "need three fractions summing to 1")
        training = TrainingSection(
            nmpc_episodes=train_w.integer("nmpc_episodes", 3, minimum=0),
            random_episodes=train_w.integer("random_episodes", 3, minimum=0),
            episode_duration=train_w.number("episode_duration", 8.0, strict_min=0.0),
            excitation_voltage_std=train_w.number("excitation_voltage_std", 30.0,
                                                  minimum=0.0),
            excitation_bandwidth=train_w.number("excitation_bandwidth", 8.0,
                                                strict_min=0.0),
            hidden=train_w.integer("hidden", 10, minimum=1),
            feedback_delays=tuple(int(d) for d in
                                  train_w.number_list("feedback_delays", [1, 2])),
            input_delays=tuple(int(d) for d in
                               train_w.number_list("input_delays", [1, 2])),
            max_epochs=train_w.integer("max_epochs", 120, minimum=1),
            patience=train_w.integer("patience", 10, minimum=1),
            lm_lambda_init=train_w.number("lm_lambda_init", 1e-2, strict_min=0.0),
            lm_lambda_factor=train_w.number("lm_lambda_factor", 10.0, strict_min=1.0),
            split=tuple(split),
            model_name=train_w.string("model_name", "narx"),
        )
        if any(d < 1 for d in training.feedback_delays + training.input_delays):
            raise ConfigError("training", "delays must be >= 1")
        train_w.finish()

        change_w = top.section("plant_change")
        change_time = change_w.number("time", None, minimum=0.0)
        change_scale = change_w.number("density_scale", 1.2, strict_min=0.0)
        change_w.finish()

        seed = top.integer("seed", 0)
        output_dir = top.string("output_dir", "out")
        top.finish()

        return cls(
            beam=beam,
            satellite_inertia=inertia,
            pzt_width=pzt_width,
            pzt_span=pzt_span,
            pzt_thickness=pzt_thickness,
            pzt_youngs_modulus=pzt_e,
            pzt_d31=pzt_d31,
            pzt_voltage_limit=pzt_limit,
            pzt_center_x=pzt_cx,
            pzt_centers_y=tuple(centers),
            dt=dt,
            duration=duration,
            substeps=substeps,
            sensor_noise_std=noise,
            quadrature_points=quad,
            disturbance_kind=kind,
            disturbance=dist,
            controller=controller,
            training=training,
            plant_change_time=change_time,
            plant_change_density_scale=change_scale,
            seed=seed,
            output_dir=output_dir,
            base_dir=base_dir,
        )

    @classmethod
    def parse(cls, text, base_dir="."):
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}")
        return cls.from_dict(raw or {}, base_dir=base_dir)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            text = fh.read()
        return cls.parse(text, base_dir=os.path.dirname(os.path.abspath(path)))

    # ---- emission ------------------------------------------------------

    def to_dict(self):
        return {
            "beam": {
                "width": self.beam.width,
                "length": self.beam.length,
                "thickness": self.beam.thickness,
                "youngs_modulus": self.beam.youngs_modulus,
                "poisson_ratio": self.beam.poisson_ratio,
                "density": self.beam.density,
                "damping_ratios": list(self.beam.damping_ratios),
                "mode_count": self.beam.mode_count,
            },
            "satellite_inertia": [list(row) for row in self.satellite_inertia],
            "pzt": {
                "width": self.pzt_width,
                "span": self.pzt_span,
                "thickness": self.pzt_thickness,
                "youngs_modulus": self.pzt_youngs_modulus,
                "d31": self.pzt_d31,
                "voltage_limit": self.pzt_voltage_limit,
                "center_x": self.pzt_center_x,
                "centers_y": list(self.pzt_centers_y),
            },
            "simulation": {
                "dt": self.dt,
                "duration": self.duration,
                "substeps": self.substeps,
                "sensor_noise_std": self.sensor_noise_std,
                "quadrature_points": self.quadrature_points,
            },
            "disturbance": {"kind": self.disturbance_kind, **self.disturbance},
            "controller": {
                "type": self.controller.type,
                "pd": {f.name: getattr(self.controller.pd, f.name)
                       for f in fields(PdSettings)},
                "nmpc": {f.name: getattr(self.controller.nmpc, f.name)
                         for f in fields(NmpcSettings)},
                "narx": {f.name: getattr(self.controller.narx, f.name)
                         for f in fields(NarxSettings)},
            },
            "training": {
                "nmpc_episodes": self.training.nmpc_episodes,
                "random_episodes": self.training.random_episodes,
                "episode_duration": self.training.episode_duration,
                "excitation_voltage_std": self.training.excitation_voltage_std,
                "excitation_bandwidth": self.training.excitation_bandwidth,
                "hidden": self.training.hidden,
                "feedback_delays": list(self.training.feedback_delays),
                "input_delays": list(self.training.input_delays),
                "max_epochs": self.training.max_epochs,
                "patience": self.training.patience,
                "lm_lambda_init": self.training.lm_lambda_init,
                "lm_lambda_factor": self.training.lm_lambda_factor,
                "split": list(self.training.split),
                "model_name": self.training.model_name,
            },
            "plant_change": {
                "time": self.plant_change_time,
                "density_scale": self.plant_change_density_scale,
            },
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def emit(self):
        """Canonical YAML (sorted keys, defaults filled in)."""
        return yaml.safe_dump(self.to_dict(), sort_keys=True,
                              default_flow_style=False)

    # ---- builders ------------------------------------------------------

    def build_basis(self):
        return ModeBasis.build(self.beam.length, self.beam.mode_count)

    def build_system(self, basis, density_scale=1.0):
        beam = self.beam
        if density_scale != 1.0:
            beam = BeamProperties(
                width=beam.width,
                length=beam.length,
                thickness=beam.thickness,
                youngs_modulus=beam.youngs_modulus,
                poisson_ratio=beam.poisson_ratio,
                density=beam.density * density_scale,
                damping_ratios=beam.damping_ratios,
                mode_count=beam.mode_count,
            )
        return assemble_modal_system(beam, basis, self.quadrature_points)

    def build_patches(self):
        return [
            PztPatch(
                width=self.pzt_width,
                span=self.pzt_span,
                thickness=self.pzt_thickness,
                youngs_modulus=self.pzt_youngs_modulus,
                d31=self.pzt_d31,
                center_x=self.pzt_center_x,
                center_y=cy,
                voltage_limit=self.pzt_voltage_limit,
            )
            for cy in self.pzt_centers_y
        ]

    def build_array(self, basis):
        return PztArray.build(basis, self.beam, self.build_patches())

    def build_disturbance(self):
        return DisturbanceScenario(kind=self.disturbance_kind, seed=self.seed,
                                   **self.disturbance)

    def model_file(self, suffix):
        name = f"{self.training.model_name}_{suffix}.net"
        return os.path.join(self.base_dir, name)

    def resolve_model_path(self):
        """Model path, tried relative to the config file, then to the cwd."""
        path = self.controller.narx.model_path
        if os.path.isabs(path):
            return path
        beside_config = os.path.join(self.base_dir, path)
        if os.path.exists(beside_config):
            return beside_config
        return path

    def shares_experiment(self, other):
        """True when plant, disturbance and seed match (comparability gate)."""
        mine, theirs = self.to_dict(), other.to_dict()
        for key in ("beam", "pzt", "satellite_inertia", "simulation",
                    "disturbance", "seed"):
            if mine[key] != theirs[key]:
                return False
        return True
