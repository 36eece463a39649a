from pathlib import Path

import pytest

from powergame.config import GameParams
from powergame.efficiency import EfficiencySpec, Family
from powergame.grid import GridSpec


@pytest.fixture
def bench_params():
    """Benchmark scenario: exponential a=1, mu=(1, 0), eta=0.5, sigma2=1, R=1."""
    return GameParams()


@pytest.fixture
def bench_grid():
    return GridSpec()


@pytest.fixture
def small_grid():
    return GridSpec(e_max=2.0, n_e=10, n_x=9, n_y=9, n_t=30)


@pytest.fixture
def exp1():
    return EfficiencySpec(Family.EXPONENTIAL, a=1.0)


@pytest.fixture
def sig10():
    return EfficiencySpec(Family.SIGMOID, m=10)


@pytest.fixture
def write_config(tmp_path):
    def write(text: str, name: str = "run.ini") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
