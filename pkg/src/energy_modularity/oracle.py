"""Brute-force references for testing the detector and the dispatch evaluators."""

from __future__ import annotations

import json
import os
from collections.abc import Iterator
from dataclasses import dataclass, field, replace

import numpy as np

from .dispatch import DEFAULT_LP_TOL, DispatchCache, Method, _noflex, _simulate, lp_flex
from .modularity import EnergyModularity
from .network import EdgeSpec, EnergyNetwork, FlexSpec, NodeSpec, Partition, TimeGrid, serialize_network

MAX_ENUMERATION_NODES = 10


class GuardError(ValueError):
    """Network too large for exhaustive enumeration."""


@dataclass(frozen=True)
class InstanceParams:
    """Parameters of a random connected, bidirectional instance.

    Ranges are ``(low, high)`` for uniform draws. ``w_max_range=None`` leaves
    every edge unbounded. ``profile="daily"`` shapes supply like a solar day
    and demand like a household load (period 96 slices) instead of drawing
    every slice independently. With ``c_rate`` set, a node's power limit is
    ``c_rate * soc_max`` instead of an independent draw.
    """

    seed: int = 0
    n: int = 5
    horizon: int = 24
    edge_density: float = 0.3
    demand_range: tuple[float, float] = (0.0, 1.0)
    supply_range: tuple[float, float] = (0.0, 1.0)
    flex_probability: float = 0.5
    f_max_range: tuple[float, float] = (0.0, 1.0)
    soc_max_range: tuple[float, float] = (0.0, 4.0)
    eta_u_range: tuple[float, float] = (1.0, 1.0)
    eta_p_range: tuple[float, float] = (1.0, 1.0)
    eta_f_range: tuple[float, float] = (1.0, 1.0)
    w_max_range: tuple[float, float] | None = None
    profile: str = "uniform"
    c_rate: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 < self.edge_density <= 1:
            raise ValueError("edge_density must lie in (0, 1]")
        if not 0 <= self.flex_probability <= 1:
            raise ValueError("flex_probability must lie in [0, 1]")
        for name in ("demand_range", "supply_range", "f_max_range", "soc_max_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= low <= high")
        for name in ("eta_u_range", "eta_p_range", "eta_f_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi <= 1:
                raise ValueError(f"{name} must satisfy 0 < low <= high <= 1")
        if self.w_max_range is not None and not 0 <= self.w_max_range[0] <= self.w_max_range[1]:
            raise ValueError("w_max_range must satisfy 0 <= low <= high")
        if self.c_rate is not None and not self.c_rate >= 0:
            raise ValueError("c_rate must be >= 0")
        if self.profile not in ("uniform", "daily"):
            raise ValueError("profile must be 'uniform' or 'daily'")

    @property
    def lossless(self) -> bool:
        return (
            self.eta_u_range == (1.0, 1.0)
            and self.eta_p_range == (1.0, 1.0)
            and self.eta_f_range == (1.0, 1.0)
            and self.w_max_range is None
        )


def _uniform(rng: np.random.Generator, bounds, size=None):
    lo, hi = bounds
    return rng.uniform(lo, hi, size) if hi > lo else np.full(size, float(lo)) if size is not None else float(lo)


def _daily_series(rng: np.random.Generator, n: int, horizon: int, bounds, kind: str) -> np.ndarray:
    t = np.arange(horizon)
    phase = (t % 96) / 96.0
    lo, hi = bounds
    scale = rng.uniform(lo, hi, (n, 1)) if hi > lo else np.full((n, 1), float(lo))
    if kind == "supply":
        shape = np.clip(np.sin(np.pi * (phase - 0.25) / 0.5), 0.0, None)
        day_factor = rng.uniform(0.3, 1.0, (n, horizon // 96 + 1)).repeat(96, axis=1)[:, :horizon]
        return scale * shape[None, :] * day_factor
    shape = 0.6 + 0.4 * np.sin(2 * np.pi * (phase - 0.375)) ** 2
    noise = rng.uniform(0.7, 1.3, (n, horizon))
    return scale * shape[None, :] * noise


def random_instance(params: InstanceParams) -> EnergyNetwork:
    """Random connected instance: a random spanning tree first, then extra edges at ``edge_density``."""
    rng = np.random.default_rng(params.seed)
    n, h = params.n, params.horizon
    ids = [f"n{i}" for i in range(n)]

    order = rng.permutation(n)
    pairs: list[tuple[int, int]] = []
    present: set[tuple[int, int]] = set()
    for k in range(1, n):
        parent = int(order[rng.integers(k)])
        child = int(order[k])
        pair = (min(parent, child), max(parent, child))
        pairs.append(pair)
        present.add(pair)
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in present and rng.random() < params.edge_density:
                pairs.append((i, j))
                present.add((i, j))

    if params.profile == "daily":
        demand = _daily_series(rng, n, h, params.demand_range, "demand")
        supply = _daily_series(rng, n, h, params.supply_range, "supply")
    else:
        demand = _uniform(rng, params.demand_range, (n, h))
        supply = _uniform(rng, params.supply_range, (n, h))
    has_flex = rng.random(n) < params.flex_probability
    f_max = _uniform(rng, params.f_max_range, n)
    soc_max = _uniform(rng, params.soc_max_range, n)
    eta_u = _uniform(rng, params.eta_u_range, n)
    eta_p = _uniform(rng, params.eta_p_range, n)
    if params.c_rate is not None:
        f_max = params.c_rate * soc_max

    nodes = []
    for i in range(n):
        flex = FlexSpec(
            float(f_max[i]) if has_flex[i] else 0.0,
            float(soc_max[i]) if has_flex[i] else 0.0,
            float(eta_u[i]),
            float(eta_p[i]),
        )
        nodes.append(NodeSpec(ids[i], demand[i], supply[i], flex))

    edges = []
    for i, j in pairs:
        w = None if params.w_max_range is None else float(_uniform(rng, params.w_max_range))
        eta = float(_uniform(rng, params.eta_f_range))
        edges.append(EdgeSpec(ids[i], ids[j], w, eta))
        edges.append(EdgeSpec(ids[j], ids[i], w, eta))
    return EnergyNetwork(TimeGrid(h), tuple(nodes), tuple(edges))


def random_connected_community(net: EnergyNetwork, rng: np.random.Generator, size: int | None = None) -> list[str]:
    """Grow a connected member set from a random start by random frontier expansion."""
    if size is None:
        size = int(rng.integers(1, net.n + 1))
    start = int(rng.integers(net.n))
    chosen = [start]
    members = {start}
    frontier = sorted(net.neighbors[start])
    while len(chosen) < size and frontier:
        nxt = frontier[int(rng.integers(len(frontier)))]
        chosen.append(nxt)
        members.add(nxt)
        frontier = sorted({w for v in members for w in net.neighbors[v]} - members)
    return [net.ids[i] for i in sorted(chosen)]


# -- exhaustive partitions --------------------------------------------------


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _restricted_growth(n: int) -> Iterator[list[int]]:
    """All restricted-growth strings of length ``n`` (one per set partition)."""
    if n == 0:
        return
    labels = [0] * n
    while True:
        yield labels
        i = n - 1
        while i > 0 and labels[i] == max(labels[:i]) + 1:
            i -= 1
        if i == 0:
            return
        labels[i] += 1
        for j in range(i + 1, n):
            labels[j] = 0


def _blocks_connected(labels: list[int], undirected: list[tuple[int, int]], n: int) -> bool:
    uf = _UnionFind(n)
    for u, v in undirected:
        if labels[u] == labels[v]:
            uf.union(u, v)
    roots: dict[int, int] = {}
    for v in range(n):
        r = uf.find(v)
        if roots.setdefault(labels[v], r) != r:
            return False
    return True


def _index_partitions(net: EnergyNetwork, connected: bool) -> Iterator[list[frozenset[int]]]:
    n = net.n
    if n > MAX_ENUMERATION_NODES:
        raise GuardError(f"exhaustive enumeration supports at most {MAX_ENUMERATION_NODES} nodes, got {n}")
    undirected = sorted({(min(u, v), max(u, v)) for u in range(n) for v in net.neighbors[u]})
    for labels in _restricted_growth(n):
        if connected and not _blocks_connected(labels, undirected, n):
            continue
        blocks: dict[int, set[int]] = {}
        for v, lab in enumerate(labels):
            blocks.setdefault(lab, set()).add(v)
        yield [frozenset(blocks[k]) for k in sorted(blocks)]


def enumerate_connected_partitions(net: EnergyNetwork, connected: bool = True) -> Iterator[Partition]:
    """Every partition of the nodes; with ``connected`` only those whose communities are all connected."""
    for blocks in _index_partitions(net, connected):
        yield Partition(tuple(frozenset(net.ids[i] for i in b) for b in blocks))


def _tie_key(blocks: list[frozenset[int]]):
    return (len(blocks), sorted(tuple(sorted(b)) for b in blocks))


def exhaustive_best_partition(
    net: EnergyNetwork,
    gamma: float,
    method: Method | str,
    connected: bool = True,
    cache: DispatchCache | None = None,
    tol: float = 1e-12,
) -> tuple[Partition, float]:
    """Maximum-quality partition by enumeration.

    Qualities within ``tol`` tie; ties go to fewer communities, then to the
    lexicographically smallest list of sorted member indices.
    """
    ev = EnergyModularity(net, method, gamma, cache)
    best_blocks: list[frozenset[int]] | None = None
    best_q = -np.inf
    for blocks in _index_partitions(net, connected):
        q = ev.quality(blocks)
        if best_blocks is None or q > best_q + tol:
            best_blocks, best_q = blocks, q
        elif abs(q - best_q) <= tol and _tie_key(blocks) < _tie_key(best_blocks):
            best_blocks, best_q = blocks, q
    assert best_blocks is not None
    part = Partition(tuple(frozenset(net.ids[i] for i in b) for b in best_blocks))
    return part, float(best_q)


# -- simulate vs LP ---------------------------------------------------------


@dataclass
class EquivalenceFailure:
    trial: int
    seed: int
    members: list[str]
    d_simulate: float
    d_lp: float
    d_noflex: float
    reason: str
    network: EnergyNetwork = field(repr=False)

    def to_json(self) -> dict:
        topo, demand, supply = serialize_network(self.network)
        return {
            "trial": self.trial,
            "seed": self.seed,
            "reason": self.reason,
            "community": self.members,
            "d_simulate": self.d_simulate,
            "d_lp": self.d_lp,
            "d_noflex": self.d_noflex,
            "topology": json.loads(topo),
            "demand_csv": demand,
            "supply_csv": supply,
        }

    def write(self, directory) -> None:
        """Write replayable network files plus the offending community into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        topo, demand, supply = serialize_network(self.network)
        for name, text in (("network.json", topo), ("demand.csv", demand), ("supply.csv", supply)):
            with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
                fh.write(text)
        meta = {k: v for k, v in self.to_json().items() if k not in ("topology", "demand_csv", "supply_csv")}
        with open(os.path.join(directory, "community.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)


@dataclass
class EquivalenceReport:
    trials: int
    checks: int
    max_abs_diff: float
    failures: list[EquivalenceFailure]

    @property
    def ok(self) -> bool:
        return not self.failures


def check_sim_lp_equivalence(
    params: InstanceParams,
    trials: int,
    communities_per_trial: int = 3,
    rel_tol: float = 1e-6,
    lp_tol: float = DEFAULT_LP_TOL,
) -> EquivalenceReport:
    """Compare SimulateFlex against the LP on lossless, flow-unlimited random instances.

    Trial ``i`` uses instance seed ``params.seed + i``. Each trial checks the
    whole network plus random connected communities. Mismatches become
    report entries; nothing is raised for them.
    """
    if not params.lossless:
        raise ValueError("equivalence only holds for unit efficiencies and unbounded flows")
    failures: list[EquivalenceFailure] = []
    checks = 0
    worst = 0.0
    for trial in range(trials):
        seed = params.seed + trial
        net = random_instance(replace(params, seed=seed))
        rng = np.random.default_rng([seed, 1])
        communities = [list(net.ids)]
        for _ in range(communities_per_trial - 1):
            communities.append(random_connected_community(net, rng))
        for members in communities:
            idx = net.indices(members)
            d_sim = _simulate(net, idx)
            d_lp = lp_flex(net, members, lp_tol).d
            d_nf = _noflex(net, idx)
            checks += 1
            diff = abs(d_sim - d_lp)
            worst = max(worst, diff)
            reason = None
            if diff > rel_tol * max(1.0, d_lp):
                reason = "simulate != lp"
            elif not net.f_max[idx].any() and abs(d_sim - d_nf) > rel_tol * max(1.0, d_nf):
                reason = "no flexibility but simulate != noflex"
            if reason:
                failures.append(EquivalenceFailure(trial, seed, members, d_sim, d_lp, d_nf, reason, net))
    return EquivalenceReport(trials, checks, worst, failures)
