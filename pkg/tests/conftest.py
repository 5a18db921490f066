import pathlib

import pytest

from sqe.query import parse_query_file

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture
def four_clusters():
    qf = parse_query_file((DATA / "four_clusters.q").read_text())
    return qf.queries[0], set(qf.transitive)


@pytest.fixture
def two_transitive():
    qf = parse_query_file((DATA / "two_transitive.q").read_text())
    return qf.queries[0], set(qf.transitive)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
