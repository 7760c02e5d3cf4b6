import sys


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    word = "PASS" if report.passed else "FAIL"
    sys.stderr.write(f"\n[acceptance] {name}: {word}\n")
    sys.stderr.flush()
