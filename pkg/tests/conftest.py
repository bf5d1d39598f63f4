import pytest

from beamprobe.evalharness import ExperimentConfig, load_datasets, train_models

SMALL_OVERRIDES = [
    "scene.n_sweeps=400", "scene.samples_per_beam=64", "experiment.n_test=300",
    "training.prior_epochs=15", "training.ens_epochs=10", "training.hidden=[32]",
    "training.M=3",
]


@pytest.fixture(scope="session")
def small_cfg():
    return ExperimentConfig.load(None, SMALL_OVERRIDES)


@pytest.fixture(scope="session")
def small_data(small_cfg):
    return load_datasets(small_cfg)


@pytest.fixture(scope="session")
def small_models(small_cfg, small_data):
    return train_models(small_cfg, small_data[0], seed=0)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
