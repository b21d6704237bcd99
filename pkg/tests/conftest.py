import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance line; the terminal summary prints them in order."""

    def record(number, passed, detail, seconds, budget=None):
        timing = f"{seconds:.1f}s" + (f" (budget {budget:.0f}s)" if budget else "")
        _ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  " \
                              f"{detail}  [{timing}]"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
