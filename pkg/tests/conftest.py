import os
from importlib.resources import files

import pytest

from nowcastsim import population, scenario, taxben


@pytest.fixture(scope="session")
def data_dir():
    return str(files("nowcastsim") / "data")


@pytest.fixture(scope="session")
def policy_dir(data_dir):
    return os.path.join(data_dir, "policy")


@pytest.fixture(scope="session")
def tables(data_dir):
    return scenario.load_data_tables(data_dir)


@pytest.fixture(scope="session")
def schedules(policy_dir):
    return taxben.load_policy(policy_dir)


@pytest.fixture(scope="session")
def small_pop():
    return population.generate_synthetic(population.SynthConfig(households=400), 7)


@pytest.fixture(scope="session")
def default_scenario(data_dir):
    return scenario.parse_scenario(os.path.join(data_dir, "scenario.cfg"))
