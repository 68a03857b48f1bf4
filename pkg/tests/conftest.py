import json
from pathlib import Path

import pytest

from skipguide import checkpoint
from skipguide.net import Arch, init_model
from skipguide.numerics import derive_stream
from skipguide.schedule import linear_schedule

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sched():
    return linear_schedule()


@pytest.fixture(scope="session")
def small_arch():
    return Arch(layers=2, dim=8, frames=4, height=4, width=4, n_classes=3, mlp_hidden=12)


@pytest.fixture(scope="session")
def small_model(small_arch):
    return init_model(small_arch, derive_stream(11, 0))


@pytest.fixture(scope="session")
def reference_model():
    return checkpoint.load(DATA / "reference.stg")


@pytest.fixture(scope="session")
def oracle_frozen():
    return json.loads((DATA / "oracle_frozen.json").read_text())


@pytest.fixture(scope="session")
def reference_frozen():
    return json.loads((DATA / "reference_frozen.json").read_text())


# One PASS/FAIL line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if name.startswith("test_criterion_"):
        num = int(name.split("_")[2])
        status = "PASS" if report.passed else "FAIL"
        ACCEPTANCE_LINES[num] = f"criterion {num:2d} {status} {name[len('test_criterion_'):]} " \
                                f"({report.duration:.1f}s)"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
