from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

M0 = np.loadtxt(FIXTURES / "m0.csv", delimiter=",")

# quarter-scaled numerators of the optimal matrix for M0 over D8
M0_T_QUARTERS = np.array(
    [
        [20, 13, 10, -3, -3],
        [18, 28, 26, 20, 11],
        [-9, 10, 22, 16, 15],
        [-16, -7, 2, 11, 10],
        [-19, -16, -4, 3, 2],
    ]
)


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tiny_model():
    from multiplierless.model import load_model

    return load_model(FIXTURES / "mnist_tiny.json")


@pytest.fixture(scope="session")
def tiny_approx():
    from multiplierless.model import load_model

    return load_model(FIXTURES / "mnist_tiny_a7_linear2.json")


@pytest.fixture(scope="session")
def digits():
    from multiplierless.evalharness import load_idx

    return load_idx(FIXTURES / "digits-1k-images.idx3-ubyte.gz", FIXTURES / "digits-1k-labels.idx1-ubyte.gz")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
