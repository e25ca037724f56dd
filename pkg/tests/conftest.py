"""Shared plant fixtures.

The reference satellite appendage (beam, basis, assembled system, three-patch array) is
built once per session; the NARX nets are trained once and reused by the
closed-loop and acceptance tests.
"""
import pytest

from pztbeam.config import ScenarioConfig
from pztbeam.modal import BeamProperties, ModeBasis, assemble_modal_system
from pztbeam.mpc import discretize
from pztbeam.pzt import PztArray, PztPatch


class ReferencePlant:
    def __init__(self):
        self.beam = BeamProperties(
            width=0.3,
            length=1.0,
            thickness=2e-3,
            youngs_modulus=6.9e10,
            poisson_ratio=0.33,
            density=2.7e3,
            damping_ratios=(0.005, 0.005, 0.005),
            mode_count=3,
        )
        self.basis = ModeBasis.build(self.beam.length, self.beam.mode_count)
        self.system = assemble_modal_system(self.beam, self.basis)
        self.patches = [self.patch(cy) for cy in (0.1, 0.5, 0.9)]
        self.array = PztArray.build(self.basis, self.beam, self.patches)
        self.model = discretize(self.system, self.array, 0.01)

    @staticmethod
    def patch(center_y, span=0.1):
        return PztPatch(
            width=0.1,
            span=span,
            thickness=0.5e-3,
            youngs_modulus=6.9e10,
            d31=-1.75e-10,
            center_x=0.1,
            center_y=center_y,
            voltage_limit=100.0,
        )


@pytest.fixture(scope="session")
def plant():
    return ReferencePlant()


@pytest.fixture(scope="session")
def default_config():
    return ScenarioConfig.from_dict({})


@pytest.fixture(scope="session")
def trained_nets():
    """Forward and inverse NARX nets from the documented training pipeline."""
    import time

    from pztbeam.cli import train_models

    cfg = ScenarioConfig.from_dict(
        {"seed": 123, "training": {"nmpc_episodes": 3, "random_episodes": 3,
                                   "episode_duration": 8.0}}
    )
    start = time.perf_counter()
    results = train_models(cfg)
    results["elapsed"] = time.perf_counter() - start
    return results
