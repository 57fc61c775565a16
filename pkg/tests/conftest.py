import numpy as np
import pytest

from mia_audit.data import Dataset, SyntheticConfig, generate_synthetic
from mia_audit.model import Architecture, init_mlp


@pytest.fixture
def small_data():
    return generate_synthetic(SyntheticConfig(n_samples=60, n_features=3, n_classes=2, cluster_spread=0.5, seed=3))


@pytest.fixture
def small_model():
    return init_mlp(Architecture((3, 5, 2)), seed=11)


@pytest.fixture
def three_class_data():
    return generate_synthetic(SyntheticConfig(n_samples=90, n_features=4, n_classes=3, cluster_spread=0.3, seed=5))


def zero_model(arch):
    m = init_mlp(Architecture(arch), 0)
    return m.with_flat_parameters(np.zeros(m.architecture.n_parameters))


def tiny_dataset(features, labels, n_classes):
    return Dataset(np.asarray(features, float), np.asarray(labels), n_classes)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
