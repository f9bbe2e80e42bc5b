"""Shared fixtures; collects acceptance-criterion results for a summary block."""

import pytest

_results: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_record():
    def record(criterion: str, passed: bool, detail: str = ""):
        _results.append((criterion, passed, detail))
        # also emit immediately so -s runs show progress
        status = "PASS" if passed else "FAIL"
        print(f"\n[acceptance] {criterion}: {status} {detail}", flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_results):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{criterion}: {status}  {detail}")
