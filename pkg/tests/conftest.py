import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rcgp.cgp import CgpConfig  # noqa: E402


@pytest.fixture
def addmul():
    """2 inputs, functions {0: add, 1: mul}, two arity-2 nodes."""
    return CgpConfig.from_names(["add", "mul"], num_inputs=2, num_outputs=1, num_function_nodes=2)


@pytest.fixture
def baseline_shape():
    return CgpConfig(num_inputs=1, num_outputs=1, num_function_nodes=100, levels_back=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
