import sys
from pathlib import Path

import pytest

from peco import fixture_path, read_csv
from peco.dsl import ProblemSpec

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fig2():
    return read_csv(str(fixture_path("fig2.csv")))


@pytest.fixture
def fig2_problem():
    return ProblemSpec.from_dict({
        "n": 2, "u": 2, "objective": "x1 + x2",
        "constraints": ["xi1 - x1", "xi2 - x2"],
        "bounds": [[0, 10], [0, 10]], "start": [0, 0],
    })


# two solution-determining sets of size three sharing two points
FIG3_POINTS = [(0, 1, 9.5), (1, 1, 12), (1, 0, 8), (0, 1, 9), (1, 0, 8.5)]


@pytest.fixture
def fig3_problem():
    return ProblemSpec.from_dict({
        "n": 2, "u": 3, "objective": "-(x1^2 + x2^2)",
        "constraints": ["xi1*x1 + xi2*x2 - xi3"],
        "bounds": [[0, 10], [0, 10]], "start": [0, 0],
    })
