import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


class CriterionLog:
    def record(self, number: int, passed: bool, detail: str) -> None:
        _VERDICTS[number] = (bool(passed), detail)


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        passed, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
