import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(number, name, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
