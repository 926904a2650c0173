import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# pass/fail lines recorded by the acceptance suite, echoed in the terminal summary
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
