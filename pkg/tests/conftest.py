import pytest


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = {}
    request.config._tobm_acceptance = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_tobm_acceptance", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
