import json
import os
import sys

import pytest

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)

from regrade.nodes import NodeSet  # noqa: E402

import oracles  # noqa: E402


@pytest.fixture(scope="session")
def frozen():
    with open(os.path.join(HERE, "data", "frozen.json"), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def four_nodes():
    return NodeSet.from_json(oracles.FOUR_NODE)


def pytest_terminal_summary(terminalreporter):
    test_acceptance = sys.modules.get("test_acceptance")
    if test_acceptance is None:
        return
    lines = test_acceptance.RESULTS
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(lines):
        terminalreporter.write_line(lines[num])
