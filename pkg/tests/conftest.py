import numpy as np
import pytest

from energy_modularity.network import EdgeSpec, EnergyNetwork, FlexSpec, NodeSpec, TimeGrid


def node(id, demand, supply, f_max=0.0, soc_max=0.0, eta_u=1.0, eta_p=1.0):
    return NodeSpec(id, np.asarray(demand, float), np.asarray(supply, float), FlexSpec(f_max, soc_max, eta_u, eta_p))


def build(nodes, pairs=(), w_max=None, eta_f=1.0):
    """Network from nodes and undirected pairs, each expanded to both directions."""
    edges = []
    for pair in pairs:
        a, b, *attrs = pair
        w = attrs[0] if attrs else w_max
        eta = attrs[1] if len(attrs) > 1 else eta_f
        edges += [EdgeSpec(a, b, w, eta), EdgeSpec(b, a, w, eta)]
    return EnergyNetwork(TimeGrid(len(nodes[0].demand)), tuple(nodes), tuple(edges))


def single(demand, supply, f_max=0.0, soc_max=0.0, eta_u=1.0, eta_p=1.0):
    return build([node("x", demand, supply, f_max, soc_max, eta_u, eta_p)])


@pytest.fixture
def fixture_a():
    # u only consumes, v only produces, perfectly balanced every slice
    return build([node("u", [1, 1], [0, 0]), node("v", [0, 0], [1, 1])], [("u", "v")])


@pytest.fixture
def two_clusters():
    # two balanced pairs joined by a single bridge between the consumers
    return build(
        [
            node("a", [1, 1], [0, 0]),
            node("b", [0, 0], [1, 1]),
            node("c", [1, 1], [0, 0]),
            node("d", [0, 0], [1, 1]),
        ],
        [("a", "b"), ("a", "c"), ("c", "d")],
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"{criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[1].rstrip("abc")), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
