import numpy as np
import pytest

from densewf.shearlet import ShearletConfig, build_system


@pytest.fixture(scope="session")
def system64():
    return build_system(ShearletConfig(64))


@pytest.fixture(scope="session")
def system32():
    return build_system(ShearletConfig(32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for a numbered acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {detail}"
        CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
