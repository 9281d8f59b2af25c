import pytest

from criteria import RESULTS
from gatherplan.scenario import bundled_scenario_path, read_scenario


@pytest.fixture(scope="session")
def office():
    return read_scenario(bundled_scenario_path())


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
