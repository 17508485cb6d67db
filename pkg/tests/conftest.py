import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

from swcrt.correlation import CorrelationSpec  # noqa: E402
from swcrt.dgp import ScenarioSpec, preset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noiseless(name: str) -> ScenarioSpec:
    """Preset scenario with essentially no random variation."""
    base = preset(name)
    return ScenarioSpec(
        base.design, base.structure, base.period_effects, CorrelationSpec("exchangeable", 0.0, 1e-20), 7, name
    )
