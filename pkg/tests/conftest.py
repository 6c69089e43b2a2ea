import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kgzsl.kg_ingest import EdgeSource, parse_edge_dump, parse_taxonomy  # noqa: E402

# Hand-authored fixture. Counts per hop and rule are worked out in
# test_graph_builder.py and the acceptance suite.
DOOR_DUMP = """\
# fixture: two state seeds and their surroundings
open\tRelatedTo\tdoor\t2.0
open\tAntonym\tclosed\t3.0
door\tPartOf\thouse\t1.5
door\tRelatedTo\twood\t0.5
closed\tRelatedTo\tlid\t0.8
lid\tPartOf\tjar\t1.2
house\tAtLocation\tcity\t2.0

wood\tMadeOf\ttree\t1.0
jar\tRelatedTo\tglass\t0.3
closed\tHasProperty\tshut\t1.0
shut\tSimilarTo\tsealed\t1.0
"""

DOOR_TAXONOMY = """\
attribute\tentity
object\tentity
material\tentity
open\tattribute
closed\tattribute
shut\tattribute
sealed\tattribute
door\tobject
house\tobject
lid\tobject
jar\tobject
tree\tobject
wood\tmaterial
glass\tmaterial
"""

DOOR_SEEDS = {"open": "seen", "closed": "unseen"}


@pytest.fixture
def door_source():
    edges, skipped = parse_edge_dump(DOOR_DUMP.splitlines())
    assert skipped == 0
    return EdgeSource(edges, "door")


@pytest.fixture
def door_taxonomy():
    return parse_taxonomy(DOOR_TAXONOMY.splitlines())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report_criterion():
    """Record a one-line verdict that is echoed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record
