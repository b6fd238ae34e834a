import os

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RPCA_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RPCA_SLOW=1 to run full-scale checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
