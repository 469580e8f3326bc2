import os

import pytest
from hypothesis import HealthCheck, settings

from flowexp.selftest import DEFAULT_SEED

settings.register_profile(
    "default", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_report_header(config):
    from flowexp import BACKEND_NAME
    return [f"flowexp seed: {DEFAULT_SEED}", f"flowexp kernel backend: {BACKEND_NAME}"]


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    lines = pytestconfig.stash.setdefault(_ACCEPTANCE, [])

    def log(line):
        print(line)
        lines.append(line)
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
