import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo one line per acceptance criterion after the test summary."""
    results = None
    for name, module in sys.modules.items():
        if name.endswith("test_acceptance"):
            results = getattr(module, "RESULTS", None)
            break
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
