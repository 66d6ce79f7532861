"""
Shared fixtures: a tiny two-block model, a configuration that fits it and
cached training runs of the desk-scale model.
"""

import numpy as np
import pytest

from pylcq.classes.config import QuantConfig
from pylcq.modules.block import gen_calibration
from pylcq.modules.trainer import optimize_block

# Small enough for every test to train in well under a second per block
TINY_MODEL = {"samples": 4, "seq_len": 4, "dim": 8, "ff_dim": 16, "heads": 2, "blocks": 2}


@pytest.fixture
def tiny_model():
    """``(CalibrationSet, [BlockWeights, BlockWeights])`` with D=8, D_ff=16."""
    return gen_calibration(seed=0, **TINY_MODEL)


@pytest.fixture
def tiny_config():
    return QuantConfig(bits=2, group_size=8, rank=2, groups_per_subset=2, epochs=2, batch_size=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class DeskRuns:
    """
    Trained first blocks of the desk-scale model, cached per seed and config.

    Every seed gets its own model (``gen_calibration(seed)``) and the default
    QuantConfig with that seed plus the given changes.
    """

    def __init__(self):
        self.models = {}
        self.reports = {}

    def model(self, seed):
        """``(CalibrationSet, first BlockWeights)`` at desk scale."""
        if seed not in self.models:
            calib, stack = gen_calibration(seed=seed)
            self.models[seed] = (calib, stack[0])
        return self.models[seed]

    def optimize(self, seed, **changes):
        """BlockReport of the first block, trained under ``QuantConfig(seed=seed, **changes)``."""
        config = QuantConfig(seed=seed, **changes)
        key = tuple(sorted(config.to_dict().items()))
        if key not in self.reports:
            calib, weights = self.model(seed)
            self.reports[key] = optimize_block(weights, calib, config)
        return self.reports[key]


@pytest.fixture(scope="session")
def desk_runs():
    return DeskRuns()
