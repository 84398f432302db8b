import numpy as np
import pytest

from clockspin.hamiltonian import SpinSystem, sweep

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def how10():
    return SpinSystem()


@pytest.fixture(scope="session")
def clock_diagram(how10):
    return sweep(how10, (0.0, 0.0), np.linspace(0.0, 0.25, 251))


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.failed):
        lines = [ln for ln in report.capstdout.splitlines() if ln.startswith("[criterion")]
        status = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE.append(lines[-1] if lines else f"{status}: {name}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)
