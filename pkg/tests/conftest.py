"""Shared fixtures.

The expensive artifacts (a full simulated drive and a complete pipeline
run on it) are session-scoped: the acceptance tests for accuracy, loop
efficacy, and front-end drift all read the same run, which is both
faster and exactly what the criteria describe.
"""

import time

import pytest

from bevslam.config import RunConfig
from bevslam.pipeline import run_slam, simulate_dataset


@pytest.fixture(scope="session")
def corridor_config():
    """Canonical accuracy-run configuration: 200 m ring, three laps."""
    return RunConfig(seed=0, template="loop-corridor", laps=3)


@pytest.fixture(scope="session")
def corridor_dataset(corridor_config):
    return simulate_dataset(corridor_config)


@pytest.fixture(scope="session")
def corridor_run(corridor_config, corridor_dataset):
    """Full pipeline on the canonical dataset, plus its wall-clock time."""
    start = time.perf_counter()
    result = run_slam(corridor_config, corridor_dataset)
    elapsed = time.perf_counter() - start
    return result, elapsed


@pytest.fixture(scope="session")
def sample_frames(corridor_dataset):
    """Realistic semantic frames for registration tests."""
    return corridor_dataset.frames
