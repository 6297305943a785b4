import sys
from pathlib import Path

import hypothesis
import pytest

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("default", deadline=None, max_examples=25)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.load_profile("default")

from qaoa_transfer.graphs import Graph, generate_graph  # noqa: E402


def make(n, edges, gid="g"):
    return Graph.from_edges(n, edges, graph_id=gid)


@pytest.fixture
def k2():
    return make(2, [(0, 1)], "K2")


@pytest.fixture
def k3():
    return make(3, [(0, 1), (1, 2), (0, 2)], "K3")


@pytest.fixture
def p3():
    return make(3, [(0, 1), (1, 2)], "P3")


@pytest.fixture
def c5():
    return make(5, [(i, (i + 1) % 5) for i in range(5)], "C5")


def random_graphs(count, seed=0, n_range=(4, 10)):
    import numpy as np

    rng = np.random.default_rng(seed)
    fams = [("ER", lambda n: {"p": float(rng.uniform(0.3, 0.8))}),
            ("RR", lambda n: {"d": 3 if n % 2 == 0 else 2}),
            ("WS", lambda n: {"k": 3 if n > 3 else 2, "p_r": float(rng.uniform(0.1, 0.7))}),
            ("BA", lambda n: {"m": int(rng.integers(1, 3))})]
    out = []
    for i in range(count):
        fam, mk = fams[i % 4]
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        out.append(generate_graph(fam, mk(n), n, int(rng.integers(1 << 30)), graph_id=f"{fam}{i}"))
    return out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: (int(s.split()[1].rstrip(":ab")), s)):
            terminalreporter.write_line(line)
