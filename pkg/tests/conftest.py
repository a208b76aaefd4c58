import pytest

from faultsim.engine import run
from faultsim.scenario import build_scenario


SMALL = {
    "scenario.name": "small",
    "scenario.run_duration_s": 400.0,
    "cluster.num_workers": 4,
    "workload.num_partitions": 20,
    "rebalance.probing_interval_s": 20.0,
    "failures.first_failure_time_s": 100.0,
    "failures.failure_period_s": 150.0,
    "failures.kills_per_failure": 1,
    "failures.num_failures": 2,
    "detector.warmup_end_s": 30.0,
    "detector.stable_window_s": 40.0,
    "detector.failure_period_s": 150.0,
    "detector.reference_span_s": 60.0,
}


def small_values(**overrides):
    values = dict(SMALL)
    values.update(overrides)
    return values


@pytest.fixture
def small_config():
    return build_scenario(small_values())


@pytest.fixture
def quiet_config():
    return build_scenario(small_values(**{"failures.num_failures": 0, "scenario.name": "quiet"}))


@pytest.fixture(scope="session")
def small_run():
    return run(build_scenario(small_values()), seed=7)


@pytest.fixture(scope="session")
def quiet_run():
    return run(build_scenario(small_values(**{"failures.num_failures": 0, "scenario.name": "quiet"})), seed=7)
