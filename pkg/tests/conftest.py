import pytest

_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion, passed, detail):
        _RESULTS.append((criterion, passed, detail))
        line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"  [{status}] criterion {criterion}: {detail}")
