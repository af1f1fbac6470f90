import json
import os
from pathlib import Path

import numpy as np
import pytest

from choicecopula.data_io import default_dgp, simulate_dgp
from choicecopula.pipeline import PipelineConfig, run_pipeline

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())
FIXTURES = Path(__file__).parent / "fixtures"

# acceptance outcomes collected by tests/test_acceptance.py, reported at the end
ACCEPTANCE_LINES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo checks, run with CHOICECOPULA_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CHOICECOPULA_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="long Monte Carlo check; set CHOICECOPULA_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def small_sim():
    """A 1000-row draw from the default design with rho* = (0.5, 0, 0)."""
    return simulate_dgp(default_dgp(n=1000, seed=11))


@pytest.fixture(scope="session")
def small_fit(small_sim):
    return run_pipeline(small_sim[0], PipelineConfig(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
