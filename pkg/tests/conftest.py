import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records one acceptance line."""
    def record(n, title, ok, detail=""):
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
        _CRITERIA[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
