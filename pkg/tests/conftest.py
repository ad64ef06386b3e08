import re

import numpy as np
import pytest

from multisurrogate import PopulationModel

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def uniform01():
    return PopulationModel.uniform([0.0], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    props = dict(report.user_properties)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _ACCEPTANCE[num] = (status, m.group(2).replace("_", " "), str(props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        status, name, measured = _ACCEPTANCE[num]
        line = f"criterion {num:2d} {status}: {name}"
        if measured:
            line += f" [{measured}]"
        terminalreporter.write_line(line)
