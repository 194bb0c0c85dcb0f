import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from appqos.admission import AppPolicy, PolicyStore  # noqa: E402
from appqos.topology import eval_tree  # noqa: E402


@pytest.fixture
def tree():
    return eval_tree()


@pytest.fixture
def policies():
    return PolicyStore([
        AppPolicy("video", priority=0, max_bw=10e6, min_rate=1e6),
        AppPolicy("bulk", priority=1, max_bw=20e6),
        AppPolicy("lossy", priority=1, max_bw=20e6, min_drop=0.001, min_delay=2e-3),
        AppPolicy("guest", priority=2, authorized=False),
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
