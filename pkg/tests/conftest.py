"""Echo acceptance-criterion verdicts in the terminal summary.

The acceptance tests print one [PASS]/[FAIL] line per criterion, but pytest
captures per-test stdout, so without -s the lines for passing criteria would
never reach the terminal.  This hook repeats every collected verdict in the
end-of-run summary.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for module in list(sys.modules.values()):
        lines = getattr(module, "CRITERION_VERDICTS", None)
        if lines:
            terminalreporter.section("acceptance criteria")
            for line in lines:
                terminalreporter.write_line(line)
