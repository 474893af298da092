import numpy as np
import pytest

from uavfed import presets


@pytest.fixture
def desk():
    """Small scenario + training config used across module tests."""
    return presets.build(presets.resolve("desk"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One summary line per acceptance criterion, printed after the run.
_ACCEPTANCE: dict[str, dict] = {}


@pytest.fixture
def criterion(request):
    """Record the measured numbers of an acceptance test for the summary."""
    entry = _ACCEPTANCE.setdefault(request.node.nodeid, {"detail": ""})

    def note(detail: str) -> None:
        entry["detail"] = detail

    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        entry = _ACCEPTANCE.setdefault(report.nodeid, {"detail": ""})
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, entry in _ACCEPTANCE.items():
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{entry.get('outcome', 'FAIL')} {name}  {entry['detail']}")
