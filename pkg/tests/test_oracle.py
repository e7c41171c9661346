import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energy_modularity.dispatch import Method, d_noflex, lp_flex, simulate_flex
from energy_modularity.modularity import EnergyModularity
from energy_modularity.network import is_connected_community, load_network, serialize_network
from energy_modularity.oracle import (
    GuardError,
    InstanceParams,
    check_sim_lp_equivalence,
    enumerate_connected_partitions,
    exhaustive_best_partition,
    random_connected_community,
    random_instance,
)

from conftest import build, node

BELL = [1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]


def complete(n):
    ids = [f"v{i}" for i in range(n)]
    return build([node(i, [1], [1]) for i in ids], [(a, b) for k, a in enumerate(ids) for b in ids[k + 1 :]])


@pytest.mark.parametrize("n", range(1, 9))
def test_bell_counts(n):
    net = complete(n)
    assert sum(1 for _ in enumerate_connected_partitions(net, connected=False)) == BELL[n]
    # complete graph: every block is connected
    assert sum(1 for _ in enumerate_connected_partitions(net)) == BELL[n]


def test_bell_ten():
    path = build([node(f"v{i}", [1], [1]) for i in range(10)], [(f"v{i}", f"v{i + 1}") for i in range(9)])
    assert sum(1 for _ in enumerate_connected_partitions(path, connected=False)) == BELL[10]
    # connected partitions of a path are its 2^(n-1) cut sets
    assert sum(1 for _ in enumerate_connected_partitions(path)) == 2**9


def test_small_counts(fixture_a):
    assert len(list(enumerate_connected_partitions(fixture_a))) == 2
    path = build([node(c, [1], [1]) for c in "abc"], [("a", "b"), ("b", "c")])
    parts = list(enumerate_connected_partitions(path))
    assert len(parts) == 4
    assert not any(set(p.communities) == {frozenset("ac"), frozenset("b")} for p in parts)
    tri = build([node(c, [1], [1]) for c in "abc"], [("a", "b"), ("b", "c"), ("a", "c")])
    assert len(list(enumerate_connected_partitions(tri))) == 5


def test_guard():
    with pytest.raises(GuardError):
        next(enumerate_connected_partitions(complete(11)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_enumeration_is_valid(seed, n):
    net = random_instance(InstanceParams(seed=seed, n=n, edge_density=0.3))
    seen = set()
    for p in enumerate_connected_partitions(net):
        p.validate(net)
        assert all(is_connected_community(net, c) for c in p.communities)
        key = frozenset(p.communities)
        assert key not in seen
        seen.add(key)


def test_exhaustive_examples(fixture_a, two_clusters):
    p, q = exhaustive_best_partition(fixture_a, 1.0, Method.NOFLEX)
    assert p.communities == (frozenset("uv"),) and q == 0.0
    p, q = exhaustive_best_partition(two_clusters, 1.0, Method.NOFLEX)
    assert set(p.communities) == {frozenset("ab"), frozenset("cd")}
    assert q == pytest.approx(0.5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_exhaustive_zero_gamma_single_among_optima(seed, n):
    net = random_instance(InstanceParams(seed=seed, n=n, horizon=8, flex_probability=0.6))
    _, q = exhaustive_best_partition(net, 0.0, Method.SIMULATE)
    whole = EnergyModularity(net, Method.SIMULATE, 0.0).q_c(frozenset(range(net.n)))
    assert whole == pytest.approx(q, abs=1e-12)


def test_exhaustive_tie_break_prefers_fewer():
    # gamma=0 and no supply anywhere: every partition scores 0
    net = build([node(c, [1], [0]) for c in "abc"], [("a", "b"), ("b", "c")])
    p, q = exhaustive_best_partition(net, 0.0, Method.NOFLEX)
    assert q == 0.0 and p.k == 1


def test_random_instance_basics():
    one = random_instance(InstanceParams(seed=1, n=1))
    assert one.n == 1 and one.edges == ()
    full = random_instance(InstanceParams(seed=1, n=4, edge_density=1.0))
    assert len(full.edges) == 12
    a, b = random_instance(InstanceParams(seed=5, n=6)), random_instance(InstanceParams(seed=5, n=6))
    assert serialize_network(a) == serialize_network(b)
    assert serialize_network(a) != serialize_network(random_instance(InstanceParams(seed=6, n=6)))


def test_random_instance_ranges():
    params = InstanceParams(
        seed=3, n=8, horizon=30, demand_range=(0.5, 1.0), supply_range=(0.0, 0.2), flex_probability=1.0,
        f_max_range=(0.1, 0.2), soc_max_range=(1.0, 2.0), eta_u_range=(0.8, 0.9), w_max_range=(1.0, 2.0),
    )
    net = random_instance(params)
    assert net.demand.min() >= 0.5 and net.demand.max() <= 1.0
    assert net.supply.max() <= 0.2
    assert np.all((net.f_max >= 0.1) & (net.f_max <= 0.2))
    assert np.all((net.eta_u >= 0.8) & (net.eta_u <= 0.9))
    assert all(1.0 <= e.w_max <= 2.0 for e in net.edges)


def test_random_instance_c_rate():
    net = random_instance(InstanceParams(seed=2, n=6, flex_probability=1.0, c_rate=0.25))
    np.testing.assert_allclose(net.f_max, 0.25 * net.soc_max)


def test_random_connected_community():
    net = random_instance(InstanceParams(seed=8, n=9, edge_density=0.1))
    rng = np.random.default_rng(0)
    for _ in range(50):
        members = random_connected_community(net, rng)
        assert members and is_connected_community(net, members)


def test_equivalence_requires_lossless():
    with pytest.raises(ValueError):
        check_sim_lp_equivalence(InstanceParams(eta_u_range=(0.9, 1.0)), 1)


def test_equivalence_without_flexibility():
    report = check_sim_lp_equivalence(InstanceParams(seed=0, n=5, horizon=24, flex_probability=0.0), 20)
    assert report.ok and report.checks >= 20
    assert report.max_abs_diff <= 1e-6


def test_equivalence_single_node():
    report = check_sim_lp_equivalence(InstanceParams(seed=0, n=1, horizon=48, flex_probability=1.0), 50)
    assert report.ok


def test_failure_report_replays(tmp_path):
    # mixed power-to-capacity ratios produce mismatches; pick the first one and replay it
    report = check_sim_lp_equivalence(InstanceParams(seed=0, n=6, horizon=48, flex_probability=0.8), 40)
    assert report.failures, "expected at least one mismatch on mixed-ratio storage"
    failure = report.failures[0]
    failure.write(tmp_path)
    net = load_network(tmp_path / "network.json", tmp_path / "demand.csv", tmp_path / "supply.csv")
    meta = json.loads((tmp_path / "community.json").read_text())
    members = meta["community"]
    assert simulate_flex(net, members).d == failure.d_simulate
    assert lp_flex(net, members).d == pytest.approx(failure.d_lp, abs=1e-7)
    assert d_noflex(net, members).d == failure.d_noflex
    assert failure.d_simulate > failure.d_lp
