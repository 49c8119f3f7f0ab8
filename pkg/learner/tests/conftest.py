"""Shared fixtures: prepared micro datasets and a live simulator server."""

import pytest

from totelearn import pipeline, wire


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("learn-data")


@pytest.fixture(scope="session")
def small_dataset(data_dir):
    """Oracle trajectories from a handful of small instances."""
    return pipeline.prepare_imitation_data(
        data_dir / "imitation", train_seeds=range(6)
    )


@pytest.fixture(scope="session")
def sim_server():
    with wire.SimulatorServer() as server:
        yield server
