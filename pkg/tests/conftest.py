import warnings

import pytest

from zodist.diagnostics import TheoryWarning


@pytest.fixture(autouse=True)
def _quiet_theory_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TheoryWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
