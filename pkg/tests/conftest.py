import pytest

# (criterion number, line) pairs recorded by the acceptance suite
ACCEPTANCE: list[tuple[int, str]] = []


@pytest.fixture
def report():
    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  [{number}] {title}: {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
