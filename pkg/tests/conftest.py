import pytest

CRITERIA: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(CRITERIA[number])


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
