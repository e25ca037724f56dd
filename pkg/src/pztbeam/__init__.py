"""Active vibration suppression of a piezo-actuated cantilever appendage.

Plant: modal Euler-Bernoulli cantilever with bonded PZT patches (actuation
and strain sensing).  Controllers: receding-horizon box-QP (NMPC), NARX
inverse-dynamics network with gated online adaptation, and a PD baseline.
The `pztbeam` CLI runs configured episodes, controller comparisons and NARX
training.
"""
from ._core import backend_name
from .modal import (BeamProperties, ModalSystem, ModeBasis, assemble_modal_system,
                    mode_shape, project_distributed_load, solve_mode_roots)
from .mpc import (DiscreteModel, NmpcConfig, NmpcController, build_condensed_qp,
                  compute_control, discretize)
from .narx import (NarxController, NarxNet, NndAdaptor, TrainingDataset, forward,
                   inverse_control, linearize, load_net, nnd_update, save_net,
                   train_lm)
from .pdctrl import PdController, PdGains, pd_control
from .plant import (DisturbanceScenario, PlantState, Trajectory, ZeroController,
                    disturbance_force, run_episode, step)
from .pzt import (PztArray, PztPatch, actuation_influence, control_force,
                  moment_coefficient, sensor_reading)
from .qp import QpProblem, QpSolution, kkt_residual, solve_box_qp

__version__ = "0.1.0"

__all__ = [
    "BeamProperties", "ModeBasis", "ModalSystem", "solve_mode_roots", "mode_shape",
    "assemble_modal_system", "project_distributed_load",
    "PztPatch", "PztArray", "moment_coefficient", "actuation_influence",
    "control_force", "sensor_reading",
    "PlantState", "DisturbanceScenario", "Trajectory", "ZeroController",
    "disturbance_force", "step", "run_episode",
    "QpProblem", "QpSolution", "solve_box_qp", "kkt_residual",
    "DiscreteModel", "NmpcConfig", "NmpcController", "discretize",
    "build_condensed_qp", "compute_control",
    "NarxNet", "NarxController", "NndAdaptor", "TrainingDataset", "forward",
    "train_lm", "linearize", "inverse_control", "nnd_update", "save_net",
    "load_net",
    "PdGains", "PdController", "pd_control",
    "backend_name",
]
