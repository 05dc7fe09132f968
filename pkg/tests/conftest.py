import numpy as np
import pytest
from hypothesis import settings

from tndve.simulate import ScenarioConfig, generate_dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def high_data():
    return generate_dataset(ScenarioConfig(prevalence="high"), 101)


@pytest.fixture(scope="session")
def low_data():
    return generate_dataset(ScenarioConfig(prevalence="low"), 202)


@pytest.fixture(scope="session")
def em_data():
    return generate_dataset(ScenarioConfig(prevalence="high", effect_modification=True), 303)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
