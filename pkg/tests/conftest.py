import numpy as np
import pytest

from twohands.hand_model import generate_mini_hand


@pytest.fixture(scope="session")
def mini_right():
    return generate_mini_hand(0, "right")


@pytest.fixture(scope="session")
def mini_left():
    return generate_mini_hand(0, "left")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """record(number, title, ok, detail) adds one PASS/FAIL line to the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number, title, ok, detail):
        lines.append((number, f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
