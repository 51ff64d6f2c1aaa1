import sys

import pytest

from tsrm import tensor as tt


@pytest.fixture(autouse=True)
def _restore_default_dtype():
    before = tt.get_default_dtype()
    yield
    tt.set_default_dtype(before)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
