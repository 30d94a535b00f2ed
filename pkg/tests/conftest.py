import pytest

# filled by tests/test_acceptance.py: (criterion number, passed, detail)
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")


@pytest.fixture
def record_acceptance():
    def record(num, ok, detail):
        line = (num, bool(ok), detail)
        ACCEPTANCE_LINES.append(line)
        print(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")
        return ok

    return record
