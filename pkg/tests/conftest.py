import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(number, title, value, tolerance, passed, seconds, limit):
        ok = bool(passed) and seconds < limit
        line = (f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: value {value:.4g} "
                f"(tolerance {tolerance:.3g}), {seconds:.2f} s (limit {limit:g} s)")
        VERDICTS.append(line)
        print(line)
        assert passed, line
        assert seconds < limit, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
