import numpy as np
import pytest

from amv3d.grid import build_pressure_grid
from amv3d.synth import SyntheticSpec, make_dataset

LEVELS = [1000.0, 950.0, 900.0, 800.0, 700.0]


@pytest.fixture
def grid4():
    return build_pressure_grid(LEVELS)


@pytest.fixture(scope="session")
def small_dataset():
    """Balanced, fully observed 16x16 dataset with K=4."""
    return make_dataset(SyntheticSpec(rows=16, cols=16, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number: int, name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {name}: {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
