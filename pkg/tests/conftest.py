import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qkdsim.bits import SeededRng
from qkdsim.ldpc import DegreeDistribution, peg_construct


@pytest.fixture(scope="session")
def default_code():
    """The full-size (3,6) regular code; built once, shared by all tests."""
    return peg_construct(10**4, 0.5, DegreeDistribution.regular(3, 6),
                         SeededRng(1))


@pytest.fixture(scope="session")
def small_code():
    """8-bit toy code for exhaustive cross-checks."""
    return peg_construct(8, 0.5, DegreeDistribution.regular(3, 6),
                         SeededRng(1))
