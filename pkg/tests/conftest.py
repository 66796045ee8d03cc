import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("procan", deadline=None, max_examples=50)
settings.load_profile("procan")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.details = number, title, []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details) or (str(exc).splitlines()[0] if exc else "")
        line = f"{status} criterion {self.number} ({self.title}): {detail}"
        ACCEPTANCE_LINES[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
