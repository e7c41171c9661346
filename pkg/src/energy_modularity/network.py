"""Time-expanded energy network model, file ingestion and passive-node pruning."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network input."""


class PartitionError(ValueError):
    """Raised when a set of communities is not a valid partition of a network."""


@dataclass(frozen=True)
class TimeGrid:
    horizon: int
    slice_duration: float = 15.0  # minutes, metadata only

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise NetworkError(f"horizon must be >= 1, got {self.horizon}")
        if not self.slice_duration > 0:
            raise NetworkError(f"slice duration must be > 0, got {self.slice_duration}")


@dataclass(frozen=True)
class FlexSpec:
    """Storage-like flexibility of a single node.

    ``f_max`` bounds charging and discharging energy per slice, ``soc_max`` the
    stored energy. ``eta_u`` is the usage efficiency applied on both charge and
    discharge, ``eta_p`` the per-slice preservation (self-discharge) factor.
    """

    f_max: float = 0.0
    soc_max: float = 0.0
    eta_u: float = 1.0
    eta_p: float = 1.0

    def __post_init__(self) -> None:
        for name in ("f_max", "soc_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise NetworkError(f"{name} must be finite and >= 0, got {value}")
        for name in ("eta_u", "eta_p"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise NetworkError(f"{name} must lie in (0, 1], got {value}")

    @property
    def is_empty(self) -> bool:
        return self.f_max == 0 and self.soc_max == 0


def _series(values: Iterable[float], what: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NetworkError(f"{what}: non-finite value")
    if np.any(arr < 0):
        raise NetworkError(f"{what}: negative value")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NodeSpec:
    id: str
    demand: np.ndarray
    supply: np.ndarray
    flex: FlexSpec = field(default_factory=FlexSpec)

    def __post_init__(self) -> None:
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "demand", _series(self.demand, f"demand of {self.id!r}"))
        object.__setattr__(self, "supply", _series(self.supply, f"supply of {self.id!r}"))
        if self.demand.shape != self.supply.shape:
            raise NetworkError(f"node {self.id!r}: series length mismatch between demand and supply")

    @property
    def is_passive(self) -> bool:
        return self.flex.is_empty and not self.demand.any() and not self.supply.any()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NodeSpec):
            return NotImplemented
        return (
            self.id == other.id
            and self.flex == other.flex
            and np.array_equal(self.demand, other.demand)
            and np.array_equal(self.supply, other.supply)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class EdgeSpec:
    """Directed edge ``source -> target``; ``w_max=None`` means no flow limit."""

    source: str
    target: str
    w_max: float | None = None
    eta_f: float = 1.0

    def __post_init__(self) -> None:
        if self.source == self.target:
            raise NetworkError(f"self-loop on node {self.source!r}")
        if self.w_max is not None and not (self.w_max >= 0 and not math.isnan(self.w_max)):
            raise NetworkError(f"edge {self.source}->{self.target}: w_max must be >= 0")
        if self.w_max is not None and math.isinf(self.w_max):
            object.__setattr__(self, "w_max", None)
        if not 0 < self.eta_f <= 1:
            raise NetworkError(f"edge {self.source}->{self.target}: eta_f must lie in (0, 1]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.source, self.target)


@dataclass(frozen=True, eq=False)
class EnergyNetwork:
    """Directed energy graph with per-node demand, supply and flexibility.

    Immutable once constructed. Node order is the input order and defines the
    dense integer index used by all numeric code.
    """

    time: TimeGrid
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.nodes:
            raise NetworkError("network has no nodes")
        seen: set[str] = set()
        for node in self.nodes:
            if node.id in seen:
                raise NetworkError(f"duplicate node id {node.id!r}")
            seen.add(node.id)
            if len(node.demand) != self.time.horizon:
                raise NetworkError(
                    f"series length mismatch: node {node.id!r} has {len(node.demand)} slices, "
                    f"horizon is {self.time.horizon}"
                )
        keys: set[tuple[str, str]] = set()
        for edge in self.edges:
            for end in edge.key:
                if end not in seen:
                    raise NetworkError(f"unknown node {end!r} referenced by edge {edge.source}->{edge.target}")
            if edge.key in keys:
                raise NetworkError(f"duplicate edge {edge.source}->{edge.target}")
            keys.add(edge.key)
        for source, target in keys:
            if (target, source) not in keys:
                raise NetworkError(f"edge {source}->{target} has no reverse edge")
        if not _is_connected(range(len(self.nodes)), self.neighbors):
            raise NetworkError("network graph is disconnected")

    # -- derived indices ------------------------------------------------

    @cached_property
    def index(self) -> dict[str, int]:
        return {node.id: i for i, node in enumerate(self.nodes)}

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(node.id for node in self.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def horizon(self) -> int:
        return self.time.horizon

    @cached_property
    def demand(self) -> np.ndarray:
        """Demand matrix, shape ``(n, horizon)``."""
        return _frozen(np.vstack([node.demand for node in self.nodes]))

    @cached_property
    def supply(self) -> np.ndarray:
        return _frozen(np.vstack([node.supply for node in self.nodes]))

    @cached_property
    def f_max(self) -> np.ndarray:
        return _frozen(np.array([node.flex.f_max for node in self.nodes]))

    @cached_property
    def soc_max(self) -> np.ndarray:
        return _frozen(np.array([node.flex.soc_max for node in self.nodes]))

    @cached_property
    def eta_u(self) -> np.ndarray:
        return _frozen(np.array([node.flex.eta_u for node in self.nodes]))

    @cached_property
    def eta_p(self) -> np.ndarray:
        return _frozen(np.array([node.flex.eta_p for node in self.nodes]))

    @cached_property
    def edge_index(self) -> dict[tuple[str, str], int]:
        return {edge.key: i for i, edge in enumerate(self.edges)}

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        """Undirected adjacency by dense node index."""
        index = {node.id: i for i, node in enumerate(self.nodes)}
        adj: list[set[int]] = [set() for _ in self.nodes]
        for edge in self.edges:
            u, v = index[edge.source], index[edge.target]
            adj[u].add(v)
            adj[v].add(u)
        return tuple(frozenset(a) for a in adj)

    @cached_property
    def node_demand(self) -> np.ndarray:
        """Per-node demand summed over the horizon."""
        return _frozen(self.demand.sum(axis=1))

    def node(self, node_id: str) -> NodeSpec:
        return self.nodes[self.index[node_id]]

    def indices(self, members: Iterable[str]) -> list[int]:
        """Sorted dense indices of ``members``; raises on unknown ids."""
        try:
            return sorted({self.index[m] for m in members})
        except KeyError as exc:
            raise NetworkError(f"unknown node {exc.args[0]!r}") from None

    def truncated(self, horizon: int) -> EnergyNetwork:
        """Copy restricted to the first ``horizon`` slices."""
        if horizon >= self.horizon:
            return self
        nodes = tuple(
            replace(node, demand=node.demand[:horizon], supply=node.supply[:horizon]) for node in self.nodes
        )
        return EnergyNetwork(replace(self.time, horizon=horizon), nodes, self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnergyNetwork):
            return NotImplemented
        return self.time == other.time and self.nodes == other.nodes and set(self.edges) == set(other.edges)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return f"EnergyNetwork(n={self.n}, edges={len(self.edges)}, horizon={self.horizon})"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _is_connected(members: Iterable[int], neighbors) -> bool:
    """DFS over ``members`` using only adjacency inside ``members``."""
    pool = set(members)
    if not pool:
        return True
    start = next(iter(pool))
    stack = [start]
    seen = {start}
    while stack:
        u = stack.pop()
        for w in neighbors[u]:
            if w in pool and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(pool)


# -- partitions -------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of the network nodes by non-empty communities."""

    communities: tuple[frozenset[str], ...]

    def __post_init__(self) -> None:
        comms = tuple(frozenset(str(m) for m in c) for c in self.communities)
        object.__setattr__(self, "communities", comms)
        seen: set[str] = set()
        for c in comms:
            if not c:
                raise PartitionError("empty community")
            overlap = seen & c
            if overlap:
                raise PartitionError(f"overlapping communities share {sorted(overlap)}")
            seen |= c

    @cached_property
    def assignment(self) -> dict[str, int]:
        return {m: i for i, c in enumerate(self.communities) for m in c}

    @property
    def k(self) -> int:
        return len(self.communities)

    def validate(self, net: EnergyNetwork) -> Partition:
        members = set(self.assignment)
        unknown = members - set(net.index)
        if unknown:
            raise PartitionError(f"unknown node(s) {sorted(unknown)}")
        missing = set(net.index) - members
        if missing:
            raise PartitionError(f"node(s) not covered: {sorted(missing)}")
        return self

    def canonical(self, net: EnergyNetwork) -> Partition:
        """Same partition with communities ordered by their first member in network order."""
        order = net.index
        return Partition(tuple(sorted(self.communities, key=lambda c: min(order[m] for m in c))))

    def same_as(self, other: Partition) -> bool:
        return set(self.communities) == set(other.communities)


def singleton_partition(net: EnergyNetwork) -> Partition:
    return Partition(tuple(frozenset([i]) for i in net.ids))


def is_connected_community(net: EnergyNetwork, members: Iterable[str]) -> bool:
    return _is_connected(net.indices(members), net.neighbors)


# -- basic quantities -------------------------------------------------------


def total_demand(net: EnergyNetwork) -> float:
    """Demand summed over all nodes and slices."""
    return float(net.node_demand.sum())


def induced_internal_edges(net: EnergyNetwork, members: Iterable[str]) -> tuple[EdgeSpec, ...]:
    pool = set(members)
    unknown = pool - set(net.index)
    if unknown:
        raise NetworkError(f"unknown node {sorted(unknown)[0]!r}")
    return tuple(e for e in net.edges if e.source in pool and e.target in pool)


# -- ingestion --------------------------------------------------------------


def _number(value, what: str) -> float:
    if isinstance(value, bool):
        raise NetworkError(f"{what}: non-numeric value {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise NetworkError(f"{what}: non-numeric value {value!r}") from None
    if math.isnan(out):
        raise NetworkError(f"{what}: non-numeric value {value!r}")
    return out


def read_table(text: str, what: str = "table") -> tuple[list[str], np.ndarray]:
    """Parse a ``t,<node>,...`` CSV into column ids and a ``(rows, columns)`` array."""
    rows = [row for row in csv.reader(io.StringIO(text)) if row and any(cell.strip() for cell in row)]
    if not rows:
        raise NetworkError(f"{what}: empty table")
    header = [cell.strip() for cell in rows[0]]
    if not header or header[0] != "t":
        raise NetworkError(f"{what}: header must start with 't'")
    ids = header[1:]
    if len(set(ids)) != len(ids):
        raise NetworkError(f"{what}: duplicate node column")
    values = np.zeros((len(rows) - 1, len(ids)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise NetworkError(f"{what}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        t = _number(row[0], f"{what} row {r + 2} column t")
        if t != r + 1:
            raise NetworkError(f"{what}: slices must be numbered 1..h in ascending order (row {r + 2} has t={row[0]})")
        for c, cell in enumerate(row[1:]):
            values[r, c] = _number(cell.strip(), f"{what} row {r + 2} column {ids[c]!r}")
    return ids, values


def parse_network(topology_doc: str, demand_table: str, supply_table: str) -> EnergyNetwork:
    """Build and validate a network from a JSON topology and two CSV tables.

    The horizon is the row count of the demand table; the supply table must
    agree. Edges default to bidirectional, expanding into two directed edges
    sharing ``w_max`` and ``eta_f``.
    """
    try:
        doc = json.loads(topology_doc)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"topology: invalid JSON ({exc})") from None
    if not isinstance(doc, Mapping) or not isinstance(doc.get("nodes"), list):
        raise NetworkError("topology: expected an object with a 'nodes' list")

    demand_ids, demand = read_table(demand_table, "demand")
    supply_ids, supply = read_table(supply_table, "supply")
    horizon = demand.shape[0]
    if supply.shape[0] != horizon:
        raise NetworkError(f"series length mismatch: demand has {horizon} slices, supply has {supply.shape[0]}")
    duration = _number(doc.get("slice_duration_minutes", 15), "slice_duration_minutes")
    time = TimeGrid(horizon, duration)

    node_ids = [str(n.get("id")) if isinstance(n, Mapping) and "id" in n else None for n in doc["nodes"]]
    if None in node_ids:
        raise NetworkError("topology: every node needs an 'id'")
    known = set(node_ids)
    for what, ids in (("demand", demand_ids), ("supply", supply_ids)):
        for nid in ids:
            if nid not in known:
                raise NetworkError(f"{what}: unknown node {nid!r}")
    d_col = {nid: c for c, nid in enumerate(demand_ids)}
    s_col = {nid: c for c, nid in enumerate(supply_ids)}
    zeros = np.zeros(horizon)

    nodes = []
    for raw, nid in zip(doc["nodes"], node_ids):
        flex = FlexSpec(
            f_max=_number(raw.get("flex_power_max", 0.0), f"node {nid!r} flex_power_max"),
            soc_max=_number(raw.get("flex_capacity", 0.0), f"node {nid!r} flex_capacity"),
            eta_u=_number(raw.get("eta_u", 1.0), f"node {nid!r} eta_u"),
            eta_p=_number(raw.get("eta_p", 1.0), f"node {nid!r} eta_p"),
        )
        nodes.append(
            NodeSpec(
                nid,
                demand[:, d_col[nid]] if nid in d_col else zeros,
                supply[:, s_col[nid]] if nid in s_col else zeros,
                flex,
            )
        )

    edges: list[EdgeSpec] = []
    for raw in doc.get("edges", []):
        if not isinstance(raw, Mapping) or "from" not in raw or "to" not in raw:
            raise NetworkError("topology: every edge needs 'from' and 'to'")
        source, target = str(raw["from"]), str(raw["to"])
        for end in (source, target):
            if end not in known:
                raise NetworkError(f"unknown node {end!r} referenced by edge {source}->{target}")
        w_max = raw.get("w_max")
        w_max = None if w_max is None else _number(w_max, f"edge {source}->{target} w_max")
        eta_f = _number(raw.get("eta_f", 1.0), f"edge {source}->{target} eta_f")
        edges.append(EdgeSpec(source, target, w_max, eta_f))
        if raw.get("bidirectional", True):
            edges.append(EdgeSpec(target, source, w_max, eta_f))
    return EnergyNetwork(time, tuple(nodes), tuple(edges))


def load_network(topology_path, demand_path, supply_path) -> EnergyNetwork:
    with open(topology_path, encoding="utf-8") as fh:
        topo = fh.read()
    with open(demand_path, encoding="utf-8") as fh:
        demand = fh.read()
    with open(supply_path, encoding="utf-8") as fh:
        supply = fh.read()
    return parse_network(topo, demand, supply)


def topology_document(net: EnergyNetwork) -> dict:
    """Topology as a JSON-ready dict; reverse pairs with equal attributes collapse to one entry."""
    nodes = []
    for node in net.nodes:
        entry: dict = {"id": node.id}
        if node.flex != FlexSpec():
            entry.update(
                flex_power_max=node.flex.f_max,
                flex_capacity=node.flex.soc_max,
                eta_u=node.flex.eta_u,
                eta_p=node.flex.eta_p,
            )
        nodes.append(entry)
    edges = []
    emitted: set[tuple[str, str]] = set()
    lookup = {e.key: e for e in net.edges}
    for edge in net.edges:
        if edge.key in emitted:
            continue
        reverse = lookup.get((edge.target, edge.source))
        entry = {"from": edge.source, "to": edge.target}
        if edge.w_max is not None:
            entry["w_max"] = edge.w_max
        entry["eta_f"] = edge.eta_f
        if reverse is not None and reverse.w_max == edge.w_max and reverse.eta_f == edge.eta_f:
            emitted.add(reverse.key)
        else:
            entry["bidirectional"] = False
        emitted.add(edge.key)
        edges.append(entry)
    return {"slice_duration_minutes": net.time.slice_duration, "nodes": nodes, "edges": edges}


def table_text(ids: Iterable[str], values: np.ndarray) -> str:
    """Render a ``t,<ids>`` table; ``values`` has shape ``(len(ids), horizon)``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ids = list(ids)
    writer.writerow(["t", *ids])
    for t in range(values.shape[1]):
        writer.writerow([t + 1, *(repr(float(v)) for v in values[:, t])])
    return buf.getvalue()


def serialize_network(net: EnergyNetwork) -> tuple[str, str, str]:
    """Inverse of :func:`parse_network`: ``(topology_json, demand_csv, supply_csv)``."""
    topo = json.dumps(topology_document(net), indent=2)
    return topo + "\n", table_text(net.ids, net.demand), table_text(net.ids, net.supply)


# -- passive node pruning ---------------------------------------------------


def _merge_edge(edges: dict[tuple[str, str], EdgeSpec], key: tuple[str, str], w_max, eta_f) -> None:
    old = edges.get(key)
    if old is None:
        edges[key] = EdgeSpec(key[0], key[1], w_max, eta_f)
        return
    # keep the more capable of the two
    if old.w_max is None or w_max is None:
        w = None
    else:
        w = max(old.w_max, w_max)
    edges[key] = EdgeSpec(key[0], key[1], w, max(old.eta_f, eta_f))


def _series_limit(a: float | None, b: float | None) -> float | None:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def prune_passive_nodes(net: EnergyNetwork) -> EnergyNetwork:
    """Remove nodes without demand, supply or flexibility, reconnecting their neighbours.

    Nodes are removed one at a time in network order. For a removed node ``b``
    and each ordered neighbour pair ``(a, c)``, edge ``a->c`` gets
    ``w_max = min(w(a,b), w(b,c))`` and ``eta_f = eta(a,b) * eta(b,c)``; an
    existing edge keeps the larger limit and efficiency. The last remaining
    node is never removed.
    """
    passive = [node.id for node in net.nodes if node.is_passive]
    if not passive:
        return net
    remaining = [node.id for node in net.nodes]
    edges: dict[tuple[str, str], EdgeSpec] = {e.key: e for e in net.edges}
    for b in passive:
        if len(remaining) == 1:
            break
        into = {s: e for (s, t), e in edges.items() if t == b}
        out = {t: e for (s, t), e in edges.items() if s == b}
        for key in [k for k in edges if b in k]:
            del edges[key]
        for a, e_ab in into.items():
            for c, e_bc in out.items():
                if a == c:
                    continue
                _merge_edge(edges, (a, c), _series_limit(e_ab.w_max, e_bc.w_max), e_ab.eta_f * e_bc.eta_f)
        remaining.remove(b)
    keep = set(remaining)
    nodes = tuple(node for node in net.nodes if node.id in keep)
    return EnergyNetwork(net.time, nodes, tuple(edges.values()))
