"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so the full table appears even when some criteria fail.
Criterion 9 needs external data: point ENERGY_MODULARITY_DATA at a directory
holding network.json, demand.csv and supply.csv.
"""

import os
import statistics
import time

import numpy as np
import pytest

from energy_modularity import bench
from energy_modularity.dispatch import DispatchCache, Method, d_noflex, lp_flex, simulate_flex
from energy_modularity.louvain import ConvergenceError, LouvainConfig, best_of, louvain
from energy_modularity.modularity import EnergyModularity
from energy_modularity.network import is_connected_community, load_network, total_demand
from energy_modularity.oracle import (
    InstanceParams,
    _index_partitions,
    check_sim_lp_equivalence,
    exhaustive_best_partition,
    random_connected_community,
    random_instance,
)

from conftest import build, node, record

GAMMAS = (0.25, 0.5, 1.0)


# -- shared suite -------------------------------------------------------------


def suite_instance(i):
    return random_instance(
        InstanceParams(seed=1000 + i, n=3 + i % 6, horizon=24, edge_density=0.3, flex_probability=0.5)
    )


@pytest.fixture(scope="module")
def suite():
    """30 small connected instances with Louvain best-of-20 and the exhaustive optimum per gamma."""
    rows = []
    for i in range(30):
        net = suite_instance(i)
        cache = DispatchCache(net, Method.SIMULATE)
        for gamma in GAMMAS:
            _, q_opt = exhaustive_best_partition(net, gamma, Method.SIMULATE, cache=cache)
            best, reports = best_of(net, LouvainConfig(gamma=gamma, seed=0), 20, cache)
            rows.append((i, net, gamma, q_opt, best, reports))
    return rows


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_simulate_lp_equivalence():
    start = time.perf_counter()
    trials = failures = checks = 0
    worst = 0.0
    for n in range(1, 7):
        params = InstanceParams(seed=100 * n, n=n, horizon=48, edge_density=0.4, flex_probability=0.6)
        report = check_sim_lp_equivalence(params, 34, communities_per_trial=2)
        trials += report.trials
        checks += report.checks
        failures += len({f.trial for f in report.failures})
        worst = max(worst, report.max_abs_diff)
    elapsed = time.perf_counter() - start
    ok = trials >= 200 and failures == 0 and elapsed < 120
    record(
        "criterion 1",
        ok,
        f"{trials} lossless instances ({checks} communities), {failures} instances with |sim-lp| > 1e-6*max(1,d), "
        f"max |diff| {worst:.3g}, {elapsed:.1f}s (limit 120s)",
    )
    assert ok


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_ordering():
    rng = np.random.default_rng(2024)
    violations = checks = 0
    for k in range(200):
        params = InstanceParams(
            seed=5000 + k,
            n=int(rng.integers(1, 7)),
            horizon=int(rng.integers(1, 49)),
            edge_density=0.4,
            flex_probability=0.6,
            eta_u_range=(0.8, 0.999999),
            eta_f_range=(0.8, 0.999999),
            w_max_range=(0.0, 1.5),
        )
        net = random_instance(params)
        for members in (list(net.ids), random_connected_community(net, rng)):
            nf, sim, lp = d_noflex(net, members).d, simulate_flex(net, members).d, lp_flex(net, members).d
            checks += 1
            # last-bit slack on the first pair: both sum the same per-slice minima in different order
            violations += (nf > sim + 1e-12 * max(1.0, sim)) + (lp > sim + 1e-9)
    ok = violations == 0
    record("criterion 2", ok, f"200 lossy instances, {checks} communities, {violations} ordering violations")
    assert ok


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_oracle_gap(suite):
    start = time.perf_counter()
    low = [(i, g, b.Q, q) for i, _, g, q, b, _ in suite if b.Q < q - 0.1 * abs(q) - 1e-12]
    above = [(i, g, b.Q, q) for i, _, g, q, b, _ in suite if b.Q > q + 1e-12]
    ratios = [b.Q / q for _, _, _, q, b, _ in suite if q > 0]
    ok = not low and not above
    record(
        "criterion 3",
        ok,
        f"{len(suite)} instance-gamma pairs, {len(low)} below 90% of optimum, {len(above)} above optimum, "
        f"min Q/opt {min(ratios):.4f}",
    )
    assert ok


# -- 4 ------------------------------------------------------------------------


def balanced_instance(seed, n):
    rng = np.random.default_rng(seed)
    h = 12
    demand = rng.uniform(0, 1, (n, h))
    share = rng.dirichlet(np.ones(n), h).T
    supply = share * demand.sum(axis=0)
    nodes = [node(f"b{i}", demand[i], supply[i], rng.uniform(0, 1), rng.uniform(0, 2)) for i in range(n)]
    pairs = [(f"b{i}", f"b{i + 1}") for i in range(n - 1)]
    return build(nodes, pairs)


def test_criterion_4_trivial_partition_and_range(suite):
    worst_zero = 0.0
    for seed in range(20):
        net = balanced_instance(seed, 2 + seed % 6)
        for method in Method:
            q = EnergyModularity(net, method, 1.0).q_c(frozenset(range(net.n)))
            worst_zero = max(worst_zero, abs(q))
    out_of_range = partitions = 0
    for i, net, gamma, *_ in suite:
        ev = EnergyModularity(net, Method.SIMULATE, gamma)
        for blocks in _index_partitions(net, connected=False):
            q = ev.quality(blocks)
            partitions += 1
            out_of_range += not (-gamma <= q < 1)
    ok = worst_zero <= 1e-12 and out_of_range == 0
    record(
        "criterion 4",
        ok,
        f"balanced single-community max |Q| {worst_zero:.2e} (tol 1e-12); "
        f"{out_of_range} of {partitions} enumerated partitions outside [-gamma, 1)",
    )
    assert ok


# -- 5 ------------------------------------------------------------------------


def test_criterion_5_connectivity(suite):
    bad = total = 0
    for _, net, _, _, _, reports in suite:
        for rep in reports:
            for comm in rep.partition.communities:
                total += 1
                bad += not is_connected_community(net, comm)
    for seed in range(10):
        net = random_instance(InstanceParams(seed=seed, n=40, horizon=48, edge_density=0.03, flex_probability=0.5))
        for gamma in GAMMAS:
            rep = louvain(net, LouvainConfig(gamma=gamma, seed=seed))
            for comm in rep.partition.communities:
                total += 1
                bad += not is_connected_community(net, comm)
    ok = bad == 0
    record("criterion 5", ok, f"{total} detected communities, {bad} disconnected")
    assert ok


# -- 6 ------------------------------------------------------------------------


def test_criterion_6_determinism():
    nets = [suite_instance(i) for i in range(0, 30, 3)] + [bench.synthetic_network(50, 96, 0)]
    mismatched = nonpositive = capped = runs = 0
    for k, net in enumerate(nets):
        for gamma in GAMMAS:
            cfg = LouvainConfig(gamma=gamma, seed=12345 + k)
            reference = None
            for _ in range(5):
                runs += 1
                try:
                    rep = louvain(net, cfg)
                except ConvergenceError:
                    capped += 1
                    continue
                nonpositive += sum(g <= 0 for g in rep.move_gains)
                if reference is None:
                    reference = rep.partition.communities
                mismatched += rep.partition.communities != reference
    ok = mismatched == 0 and nonpositive == 0 and capped == 0
    record(
        "criterion 6",
        ok,
        f"{runs} runs: {mismatched} differing repeats, {nonpositive} non-positive applied gains, {capped} hit the cap",
    )
    assert ok


# -- 7 ------------------------------------------------------------------------


def test_criterion_7_pruning_effectiveness():
    net = bench.synthetic_network(50, 96, 0)
    cache = DispatchCache(net, Method.SIMULATE)
    pruned, pr = best_of(net, LouvainConfig(gamma=1.0, pruning=True), 10, cache)
    swept, sr = best_of(net, LouvainConfig(gamma=1.0, pruning=False), 10, cache)
    evals_p = sum(r.gain_evaluations for r in pr)
    evals_s = sum(r.gain_evaluations for r in sr)
    reduction = 1 - evals_p / evals_s
    q_close = abs(pruned.Q - swept.Q) <= 0.01 * abs(swept.Q)
    ok = reduction >= 0.5 and q_close
    record(
        "criterion 7",
        ok,
        f"gain evaluations {evals_p} (pruning) vs {evals_s} (full sweeps): {reduction:.1%} reduction (need >= 50%); "
        f"best-of-10 Q {pruned.Q:.6f} vs {swept.Q:.6f}",
    )
    assert ok


# -- 8 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def year():
    net = bench.synthetic_network(99, 35136, 0)
    simulate_flex(net.truncated(4), list(net.ids)[:2])  # compile outside the timed region
    return net


def test_criterion_8a_simulate_year(year):
    elapsed, _ = bench.best_time(lambda: simulate_flex(year, list(year.ids)), 3)
    ok = elapsed <= 1.0
    record("criterion 8a", ok, f"simulate_flex 99 nodes x 35136 slices: {elapsed * 1e3:.1f} ms (limit 1 s)")
    assert ok


def test_criterion_8b_louvain_year(year):
    rep = louvain(year, LouvainConfig(gamma=1.0, seed=0))
    ok = rep.wall_time <= 300
    record("criterion 8b", ok, f"louvain/simulate on 99-node year: {rep.wall_time:.2f} s (limit 300 s), k={rep.k}")
    assert ok


def test_criterion_8c_horizon_scaling(year):
    horizons = [2196, 4392, 8784, 17568, 35136]
    subs = [year.truncated(h) for h in horizons]
    members = bench.bfs_community(year, 10)
    fits = {}
    for name, fn in (("simulate", simulate_flex), ("noflex", d_noflex)):
        times = [bench.best_time(lambda: fn(s, members), 30)[0] for s in subs]
        fits[name] = bench.loglog_fit(horizons, times)
    ok = all(0.8 <= slope <= 1.2 and r2 >= 0.95 for slope, r2 in fits.values())
    detail = ", ".join(f"{k} slope {s:.3f} R2 {r:.3f}" for k, (s, r) in fits.items())
    record("criterion 8c", ok, f"log-log runtime vs horizon: {detail} (need slope in [0.8, 1.2], R2 >= 0.95)")
    assert ok


# -- 9 ------------------------------------------------------------------------


@pytest.mark.skipif(not os.environ.get("ENERGY_MODULARITY_DATA"), reason="ENERGY_MODULARITY_DATA not set")
def test_criterion_9_reference_network():
    root = os.environ["ENERGY_MODULARITY_DATA"]
    net = load_network(*(os.path.join(root, f) for f in ("network.json", "demand.csv", "supply.csv")))
    total = total_demand(net)
    sim = simulate_flex(net, net.ids).d / total
    nf = d_noflex(net, net.ids).d / total
    ok = abs(sim - 0.909) <= 0.005 and abs(nf - 0.843) <= 0.005
    record("criterion 9", ok, f"network self-sufficiency simulate {sim:.2%} (90.9% +- 0.5), noflex {nf:.2%} (84.3% +- 0.5)")
    assert ok
