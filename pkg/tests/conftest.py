import numpy as np
import pytest

from confauction.mechanism import ArchitectureSpec, init_mechanism

SMALL = ArchitectureSpec(n_hidden_layers=2, hidden_size=12)
SMALL_SHARED = ArchitectureSpec(n_hidden_layers=3, hidden_size=12, shared_trunk=True,
                                trunk_layers=2)


@pytest.fixture
def small_mech():
    return init_mechanism(2, 2, SMALL, seed=5)


@pytest.fixture
def shared_mech():
    return init_mechanism(2, 3, SMALL_SHARED, seed=6)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
