import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        VERDICTS[number] = (title, bool(passed), detail)
        assert passed, f"criterion {number} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
