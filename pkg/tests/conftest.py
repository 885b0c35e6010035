import pytest


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def record_criterion(request):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the summary."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config._criteria.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(config._criteria):
            terminalreporter.write_line(line)
