import pytest

from tfperf.arch import TransformerSpec
from tfperf.hwspec import builtin_system

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def toy_spec():
    # small enough for exhaustive oracles, with a factor of 3 so n=12 has structure
    return TransformerSpec(l=96, e=48, f=192, h=12, d=6)


@pytest.fixture
def b200():
    return builtin_system("b200", 8)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
