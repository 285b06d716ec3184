import pytest

# Criterion verdicts recorded by test_acceptance; printed as one line
# each after the run so the gate is readable at a glance.
_CRITERIA = {}


def record_criterion(number: int, description: str, passed: bool) -> bool:
    _CRITERIA[number] = (description, passed)
    return passed


@pytest.hookimpl
def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        description, passed = _CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {description}")
