import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfpk.core import Grid, doublewell_potential, quadratic_potential


@pytest.fixture(scope="session")
def grid():
    return Grid(-12.0, 12.0, 1024)


@pytest.fixture(scope="session")
def fine_grid():
    return Grid(-12.0, 12.0, 2048)


@pytest.fixture(scope="session")
def quad_pot():
    return quadratic_potential(1.0)


@pytest.fixture(scope="session")
def dw_pot():
    return doublewell_potential()
