import re

_VERDICT = re.compile(r"^(PASS|FAIL) criterion \d+:.*$", re.M)
_lines = []


def pytest_runtest_logreport(report):
    # collect acceptance verdicts from captured stdout so they show up without -s
    if report.when == "call":
        _lines.extend(m.group(0) for m in _VERDICT.finditer(report.capstdout))


def pytest_terminal_summary(terminalreporter):
    if _lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
