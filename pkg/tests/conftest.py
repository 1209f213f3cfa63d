import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in acceptance_log.RESULTS:
        terminalreporter.write_line(acceptance_log.line(name, passed, detail))
