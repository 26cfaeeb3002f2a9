import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_report  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not acceptance_report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_report.RESULTS):
        status, title, detail = acceptance_report.RESULTS[n]
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}: {detail}")
