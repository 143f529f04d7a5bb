import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# (number, title, passed, detail) recorded by the acceptance suite
ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(number, title, passed, detail=""):
        ACCEPTANCE.append((number, title, bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
