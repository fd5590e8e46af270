from pathlib import Path

import numpy as np
import pytest

from slicesim.topology import load_topology

ROOT = Path(__file__).resolve().parent.parent
DEFAULT_TOPOLOGY = ROOT / "topologies" / "metro-default.json"
DESK_PRESET = ROOT / "presets" / "paper-desk.json"


@pytest.fixture(scope="session")
def metro():
    return load_topology(DEFAULT_TOPOLOGY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def line_topology(co_cap=50, rdc_cap=80, link_cap=50):
    """co1 -- rdc1 with a single link."""
    return {
        "cos": [{"id": "co1", "capacity": co_cap}],
        "rdcs": [{"id": "rdc1", "capacity": rdc_cap}],
        "junctions": [],
        "links": [{"a": "co1", "b": "rdc1", "capacity": link_cap}],
    }


# -- acceptance summary ----------------------------------------------------------

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.outcome != "passed":
        outcome = "PASS" if report.passed else "FAIL"
        _criteria[props["criterion"]] = (outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=int):
        outcome, detail = _criteria[key]
        terminalreporter.write_line(f"criterion {key}: {outcome}  {detail}".rstrip())
