"""Louvain-style greedy maximisation of energy modularity.

The detector alternates local node moves and aggregation of communities into
super-nodes. Gains are always evaluated on flattened member sets against the
original node data, so aggregation never approximates anything.
"""

from __future__ import annotations

import time
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .dispatch import DEFAULT_LP_TOL, DispatchCache, Method
from .modularity import EnergyModularity
from .network import EnergyNetwork, Partition, _is_connected

# gains closer than this are ties; a move must beat it to be applied
GAIN_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """The outer loop hit ``max_outer_iterations``."""


@dataclass(frozen=True)
class LouvainConfig:
    gamma: float = 1.0
    seed: int = 0
    method: Method = Method.SIMULATE
    pruning: bool = True
    enforce_connectivity: bool = True
    max_outer_iterations: int = 64
    lp_tol: float = DEFAULT_LP_TOL
    debug: bool = False

    def __post_init__(self) -> None:
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        object.__setattr__(self, "method", Method(self.method))


@dataclass
class RunReport:
    partition: Partition
    Q: float
    k: int
    gain_evaluations: int
    outer_iterations: int
    wall_time: float
    seed: int
    move_gains: list[float] = field(default_factory=list, repr=False)


class Shuffler:
    """Seeded Fisher-Yates shuffle.

    Draws raw 64-bit words from numpy's PCG64 bit generator (whose stream is
    fixed for a given seed) and maps them to ``[0, n)`` by rejection sampling,
    so a seed gives the same permutation on every platform and release.
    """

    def __init__(self, seed: int):
        self._bits = np.random.PCG64(seed)

    def below(self, n: int) -> int:
        limit = 2**64 - (2**64 % n)
        while True:
            x = int(self._bits.random_raw())
            if x < limit:
                return x % n

    def shuffled(self, items: Iterable) -> list:
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


# -- graphs and flattening --------------------------------------------------


def flatten(nested) -> frozenset:
    """Union of all leaves of an arbitrarily nested set of node ids."""
    if isinstance(nested, (set, frozenset, list, tuple)):
        out: set = set()
        for item in nested:
            out |= flatten(item)
        return frozenset(out)
    return frozenset([nested])


@dataclass(frozen=True)
class LevelGraph:
    """Graph at one aggregation level.

    ``nested[i]`` is super-node ``i`` as nested sets of original node ids,
    ``members[i]`` its flattened original indices; ``neighbors`` excludes
    self-edges.
    """

    nested: tuple
    members: tuple[frozenset[int], ...]
    neighbors: tuple[frozenset[int], ...]

    @property
    def n(self) -> int:
        return len(self.members)


def base_graph(net: EnergyNetwork) -> LevelGraph:
    return LevelGraph(
        nested=net.ids,
        members=tuple(frozenset([i]) for i in range(net.n)),
        neighbors=net.neighbors,
    )


def aggregate(graph: LevelGraph, communities: Sequence[Iterable[int]]) -> LevelGraph:
    """Collapse each community of super-nodes into one super-node."""
    communities = [sorted(c) for c in communities]
    owner = {}
    for k, comm in enumerate(communities):
        for v in comm:
            owner[v] = k
    adj: list[set[int]] = [set() for _ in communities]
    for v in range(graph.n):
        for w in graph.neighbors[v]:
            a, b = owner[v], owner[w]
            if a != b:
                adj[a].add(b)
    return LevelGraph(
        nested=tuple(frozenset(graph.nested[v] for v in comm) for comm in communities),
        members=tuple(frozenset().union(*(graph.members[v] for v in comm)) for comm in communities),
        neighbors=tuple(frozenset(a) for a in adj),
    )


def is_connected_without(net: EnergyNetwork, members: Iterable[str], node: str) -> bool:
    """True if ``members`` minus ``node`` is empty or induces a connected subgraph."""
    idx = set(net.indices(members))
    idx.discard(net.index[node])
    return _is_connected(idx, net.neighbors)


# -- local optimisation -----------------------------------------------------


class _LevelState:
    """Mutable partition of a level graph's super-nodes."""

    def __init__(self, graph: LevelGraph, assignment: Sequence[int] | None = None):
        self.graph = graph
        if assignment is None:
            assignment = range(graph.n)
        self.comm = list(assignment)
        self.nodes: dict[int, set[int]] = {}
        for v, c in enumerate(self.comm):
            self.nodes.setdefault(c, set()).add(v)
        self.flat = {c: frozenset().union(*(graph.members[v] for v in vs)) for c, vs in self.nodes.items()}
        self.next_id = max(self.nodes) + 1

    def move(self, v: int, target: int | None) -> int:
        source = self.comm[v]
        block = self.graph.members[v]
        if target is None:
            target = self.next_id
            self.next_id += 1
            self.nodes[target] = set()
            self.flat[target] = frozenset()
        self.nodes[source].discard(v)
        self.flat[source] = self.flat[source] - block
        if not self.nodes[source]:
            del self.nodes[source]
            del self.flat[source]
        self.nodes[target].add(v)
        self.flat[target] = self.flat[target] | block
        self.comm[v] = target
        return target

    def communities(self) -> list[set[int]]:
        return [self.nodes[c] for c in sorted(self.nodes)]


class _Counters:
    def __init__(self) -> None:
        self.gain_evaluations = 0
        self.move_gains: list[float] = []


def _best_move(
    state: _LevelState, v: int, ev: EnergyModularity, config: LouvainConfig, counters: _Counters
) -> tuple[int | None, float]:
    """Best target community for ``v`` (``None`` = new singleton) and its gain."""
    graph = state.graph
    source = state.comm[v]
    if config.enforce_connectivity and len(state.nodes[source]) > 1:
        rest = state.nodes[source] - {v}
        if not _is_connected(rest, graph.neighbors):
            return None, 0.0
    candidates: list[int | None] = sorted({state.comm[w] for w in graph.neighbors[v]} - {source})
    if len(state.nodes[source]) > 1:
        candidates.append(None)
    block = graph.members[v]
    source_flat = state.flat[source]
    best_target, best_gain = None, 0.0
    first = True
    for target in candidates:
        target_flat = frozenset() if target is None else state.flat[target]
        gain = ev.gain(block, source_flat, target_flat)
        counters.gain_evaluations += 1
        if first or gain > best_gain + GAIN_TOL:
            best_target, best_gain, first = target, gain, False
    return best_target, best_gain


def _apply(state, v, target, gain, counters, config) -> int:
    new = state.move(v, target)
    counters.move_gains.append(gain)
    if config.debug and config.enforce_connectivity:
        assert _is_connected(state.nodes[new], state.graph.neighbors), "target community disconnected"
    return new


def local_optimization(
    graph: LevelGraph,
    ev: EnergyModularity,
    config: LouvainConfig,
    rng: Shuffler,
    assignment: Sequence[int] | None = None,
    counters: _Counters | None = None,
) -> list[set[int]]:
    """Greedy node moves on one level; returns communities of super-node indices.

    With ``config.pruning`` a randomly ordered queue is processed once and
    only neighbours of moved nodes are revisited. Without pruning, full sweeps
    in fresh random order repeat until a sweep applies no move.
    """
    state = _LevelState(graph, assignment)
    counters = counters if counters is not None else _Counters()
    if config.pruning:
        queue = deque(rng.shuffled(range(graph.n)))
        queued = set(queue)
        while queue:
            v = queue.popleft()
            queued.discard(v)
            target, gain = _best_move(state, v, ev, config, counters)
            if gain > GAIN_TOL:
                new = _apply(state, v, target, gain, counters, config)
                for w in sorted(graph.neighbors[v]):
                    if state.comm[w] != new and w not in queued:
                        queue.append(w)
                        queued.add(w)
    else:
        improved = True
        while improved:
            improved = False
            for v in rng.shuffled(range(graph.n)):
                target, gain = _best_move(state, v, ev, config, counters)
                if gain > GAIN_TOL:
                    _apply(state, v, target, gain, counters, config)
                    improved = True
    return state.communities()


# -- driver -----------------------------------------------------------------


def louvain(
    net: EnergyNetwork,
    config: LouvainConfig = LouvainConfig(),
    cache: DispatchCache | None = None,
) -> RunReport:
    """Detect communities maximising energy modularity.

    Deterministic for a given ``config.seed``. ``cache`` may be shared by
    several runs on the same network and method.
    """
    start = time.perf_counter()
    ev = EnergyModularity(net, config.method, config.gamma, cache, config.lp_tol)
    rng = Shuffler(config.seed)
    counters = _Counters()
    graph = base_graph(net)
    outer = 0
    while True:
        outer += 1
        if outer > config.max_outer_iterations:
            raise ConvergenceError(f"no convergence within {config.max_outer_iterations} outer iterations")
        moves_before = len(counters.move_gains)
        communities = local_optimization(graph, ev, config, rng, counters=counters)
        if len(counters.move_gains) == moves_before:
            break
        graph = aggregate(graph, communities)

    flat = sorted(graph.members, key=min)
    partition = Partition(tuple(frozenset(net.ids[i] for i in c) for c in flat))
    return RunReport(
        partition=partition,
        Q=ev.quality(flat),
        k=len(flat),
        gain_evaluations=counters.gain_evaluations,
        outer_iterations=outer,
        wall_time=time.perf_counter() - start,
        seed=config.seed,
        move_gains=counters.move_gains,
    )


def best_of(
    net: EnergyNetwork, config: LouvainConfig, runs: int, cache: DispatchCache | None = None
) -> tuple[RunReport, list[RunReport]]:
    """Run seeds ``config.seed .. config.seed + runs - 1``; best is highest Q, ties to the lowest seed."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if cache is None:
        cache = DispatchCache(net, config.method, config.lp_tol)
    reports = []
    for k in range(runs):
        cfg = replace(config, seed=(config.seed + k) % 2**64)
        reports.append(louvain(net, cfg, cache))
    best = reports[0]
    for rep in reports[1:]:
        if rep.Q > best.Q:
            best = rep
    return best, reports
