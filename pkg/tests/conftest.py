import numpy as np
import pytest
from hypothesis import settings

from oamtomo.ahst import AHSTReconstructor, Grid

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ref_grid():
    return Grid(512, 8.0, 1.0)


@pytest.fixture(scope="session")
def small_grid():
    # coarse but still resolving |l| <= 3 (16 samples per waist, extent 8)
    return Grid(256, 8.0, 1.0)


@pytest.fixture(scope="session")
def plus4(ref_grid):
    return AHSTReconstructor(ell_max=4, helicity=1).fit()


@pytest.fixture(scope="session")
def minus4(ref_grid):
    return AHSTReconstructor(ell_max=4, helicity=-1).fit()


_criteria: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; returned callable prints and stores the line."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
