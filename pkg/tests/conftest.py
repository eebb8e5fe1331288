import pytest
import tempfile
import json
import logging
import math
import shutil
from pathlib import Path
import sys

import numpy as np

src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from ergolab.base_dynamics import doubling, l_adic
from ergolab.potentials import constant_potential, geometric_potential
from ergolab.skew_transfer import SkewSystem, affine, solenoid


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests"""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def doubling_affine_system():
    """Doubling base, phi = 0, G(x, y) = y/2 + 1/4"""
    return SkewSystem.build(doubling(), affine(0.5, 0.25), constant_potential(0.0, circle=True), N=64, bins=256)


@pytest.fixture(scope="session")
def cosine_solenoid():
    """(2x mod 1, y/2 + A(1 + cos 2 pi x)) with the geometric potential"""
    base = l_adic(2)
    return SkewSystem.build(base, solenoid(0.5, 0.25), geometric_potential(base, 1.0, zeta=1.0), N=64, bins=256)


@pytest.fixture(scope="session")
def contracting_solenoid():
    """o = 0: every leaf collapses to y = 0"""
    base = l_adic(2)
    return SkewSystem.build(base, solenoid(0.5, 0.0), constant_potential(-math.log(2.0), circle=True),
                            N=64, bins=256)


@pytest.fixture
def config_data():
    """Minimal valid experiment config as a dict"""
    return {
        "system": {
            "N": 32,
            "bins": 128,
            "zeta": 1.0,
            "base": {"builder": "doubling"},
            "fiber": {"builder": "solenoid", "params": {"alpha": 0.5, "amplitude": 0.25}},
            "potential": {"builder": "constant", "params": {"c": 0.0}},
        },
        "experiment": {"kind": "spectrum", "params": {"ly_trials": 10, "ly_n_max": 8}},
        "output": {"seed": 0},
    }


@pytest.fixture
def config_file(temp_dir, config_data):
    """config_data written as JSON"""
    path = temp_dir / "experiment.json"
    path.write_text(json.dumps(config_data))
    return path


@pytest.fixture(autouse=True)
def reset_ergolab_logger():
    """Drop handlers attached by get_logger between tests"""
    logger = logging.getLogger("ergolab")
    yield
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)
    logger.propagate = True
