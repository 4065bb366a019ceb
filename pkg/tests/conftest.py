import numpy as np
import pytest

from ensembleshap.attacks import ConstantModel, TriggerBackdoorModel
from ensembleshap.core import TokenSequence


@pytest.fixture
def trigger3():
    """The d=3, k=2 instance: label 2 iff the trigger at position 0 survives."""
    return TokenSequence(["cf", "a", "b"]), TriggerBackdoorModel(["cf"], 2, ConstantModel(1, 2), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
