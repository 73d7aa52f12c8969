import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(module.RESULTS):
        terminalreporter.write_line(module.line(k))
    terminalreporter.write_line("criterion 10: NOTE  meningitis figures need user-supplied data; not part of the suite")
