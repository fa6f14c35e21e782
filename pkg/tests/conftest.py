import numpy as np
import pytest

from gridwatch.ingest import Coupling, ScenarioSpec, Signal, generate_scenario, prepare

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def single_step(rows: int, row: int, step: float, coupled: bool = True) -> ScenarioSpec:
    return ScenarioSpec(
        rows=rows,
        ticks=1000,
        signals=(Signal(row, 501, 1000, 20.0, step),),
        coupling=Coupling(0.05, 10.0) if coupled else Coupling(),
    )


def triple_step(first_row: int, rows: int) -> ScenarioSpec:
    steps = (80.0, 100.0, 120.0)
    return ScenarioSpec(
        rows=rows,
        ticks=1000,
        signals=tuple(Signal(first_row + k, 501, 1000, 20.0, s) for k, s in enumerate(steps)),
    )


@pytest.fixture(scope="session")
def case1_matrix():
    d, _ = prepare(generate_scenario(single_step(118, 100, 100.0), seed=0), 500, seed=0)
    return d
