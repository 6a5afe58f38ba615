import pytest

from mrforge.model import random_sea_level
from oracles import SMALL_GRID


@pytest.fixture
def small_input():
    return random_sea_level(SMALL_GRID, seed=11)
