import numpy as np
import pytest

from treebound.graphs import Graph, custom
from treebound.model import OvercompleteParams, example_cycle_model

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")


@pytest.fixture
def weighted_cycle():
    """4-cycle, 0/1 coding, couplings [1, 1, 1, 3]."""
    return example_cycle_model([1.0, 1.0, 1.0, 3.0])


def random_tree_graph(n: int, rng: np.random.Generator) -> Graph:
    """Random labelled tree: node ``i`` attaches to a uniformly chosen earlier node."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    return custom(n, edges, name=f"tree{n}")


def random_params(g: Graph, m: int, rng: np.random.Generator, scale: float = 2.0) -> OvercompleteParams:
    node = rng.uniform(-scale, scale, (g.node_count, m))
    edge = rng.uniform(-scale, scale, (g.edge_count, m, m))
    return OvercompleteParams(g, m, node, edge)


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    """A random tree plus each remaining pair independently with probability ``p``."""
    base = {tuple(sorted(e)) for e in random_tree_graph(n, rng).edges}
    for s in range(n):
        for t in range(s + 1, n):
            if (s, t) not in base and rng.random() < p:
                base.add((s, t))
    return custom(n, sorted(base), name=f"rand{n}")
