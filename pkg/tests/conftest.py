import numpy as np
import pytest

from stablecheb.graph import build_graph


def random_connected_graph(rng, n, extra=None):
    """Random spanning tree plus ``extra`` random chords."""
    perm = rng.permutation(n)
    edges = [(perm[i], perm[rng.integers(0, i)]) for i in range(1, n)]
    if extra is None:
        extra = int(rng.integers(0, n + 1))
    for _ in range(extra):
        u, v = rng.choice(n, 2, replace=False) if n > 1 else (0, 0)
        edges.append((u, v))
    return build_graph(edges, n)


def path_graph(n):
    return build_graph([(i, i + 1) for i in range(n - 1)], n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
