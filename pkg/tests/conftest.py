from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from grid_dadp.instances import lattice_grids, micro_instance
from grid_dadp.model import Storage, SystemModel
from grid_dadp.reference import ExactDP, exact_global_dp
from grid_dadp.scenarios import ScenarioSet

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

MICRO_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class MicroCase:
    seed: int
    model: SystemModel
    scenarios: ScenarioSet
    grids: list
    exact: ExactDP


@pytest.fixture(scope="session")
def micro_cases():
    cases = []
    for seed in MICRO_SEEDS:
        model, scen = micro_instance(np.random.default_rng(seed))
        grids = lattice_grids(model)
        cases.append(MicroCase(seed, model, scen, grids, exact_global_dp(model, scen, grids)))
    return cases


@pytest.fixture(scope="session")
def micro_case(micro_cases):
    return micro_cases[0]


@pytest.fixture
def storage():
    return Storage(capacity=200.0, initial_level=10.0, max_turbine=50.0, max_pump=20.0, pump_efficiency=0.8)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
