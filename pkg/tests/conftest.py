import random
import sys

import pytest

from ghostscan.model import generate_model
from ghostscan.scan import ScanConfig
from ghostscan.simview import SimulatedView

requires_linux = pytest.mark.skipif(
    sys.platform != "linux", reason="inspects a live Linux kernel"
)


def sim_cfg(**overrides) -> ScanConfig:
    """Scan config for simulated runs: the default pid space exceeds the
    probe budget by design, so simulated tests always override it."""
    overrides.setdefault("budget_override", True)
    return ScanConfig(**overrides)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


@pytest.fixture
def model():
    return generate_model(seed=42, size=60)


@pytest.fixture
def view(model):
    return SimulatedView(model, ())
