import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from offline_smpc import plants
from offline_smpc.designer import design

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def plant_design():
    """The 2-state, 1-input, n_q = 2 test plant designed once per session."""
    model, spec = plants.test_plant()
    result = design(model, spec, seed=1, mc_samples=20000, terminal_draws=20000, n_probe=200)
    return model, spec, result


@pytest.fixture(scope="session")
def deadbeat_design():
    model, spec = plants.deadbeat_scalar()
    result = design(model, spec, seed=0, mc_samples=100, terminal_draws=100, n_probe=50)
    return model, spec, result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def deterministic_design():
    """The test plant with its parameters frozen at zero."""
    from offline_smpc.uncertainty import UncertaintyModel

    model, spec = plants.test_plant()
    det = UncertaintyModel.deterministic(model.A0, model.B0)
    return det, spec, design(det, spec, seed=0, mc_samples=10, terminal_draws=10, n_probe=50)


@pytest.fixture(scope="session")
def rotation_design():
    model, spec = plants.rotation_example(delta=0.05)
    return model, spec, design(model, spec, seed=0, mc_samples=10, terminal_draws=10, run_certificate=False)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
