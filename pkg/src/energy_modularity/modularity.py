"""Energy modularity: per-community scores, partition quality and move gains.

For a community ``C`` with internally suppliable demand ``d(C)``::

    e(C) = d(C) / total demand
    a(C) = demand of C / total demand
    Q_c(C) = e(C) - gamma * a(C)**2

and the partition quality is the sum of ``Q_c`` over its communities.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

from .dispatch import DEFAULT_LP_TOL, DispatchCache, Method
from .network import EnergyNetwork, Partition, total_demand


class ZeroDemandError(ValueError):
    """Total network demand is zero, so energy modularity is undefined."""


@dataclass(frozen=True)
class CommunityScore:
    size: int
    demand: float
    d: float
    e: float
    a: float
    q_c: float
    self_sufficiency: float


class EnergyModularity:
    """Energy-modularity evaluator bound to one network, dispatch method and resolution.

    Works on frozensets of dense node indices. The dispatch cache may be
    shared between evaluators with different ``gamma``.
    """

    def __init__(
        self,
        net: EnergyNetwork,
        method: Method | str = Method.SIMULATE,
        gamma: float = 1.0,
        cache: DispatchCache | None = None,
        lp_tol: float = DEFAULT_LP_TOL,
    ):
        if not gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        self.net = net
        self.gamma = float(gamma)
        if cache is None:
            cache = DispatchCache(net, method, lp_tol)
        elif cache.net is not net or cache.method is not Method(method):
            raise ValueError("cache belongs to a different network or method")
        self.cache = cache
        self.total = total_demand(net)
        if self.total <= 0:
            raise ZeroDemandError("zero total demand")
        self._demand: dict[frozenset[int], float] = {frozenset(): 0.0}

    @property
    def method(self) -> Method:
        return self.cache.method

    def with_gamma(self, gamma: float) -> EnergyModularity:
        return EnergyModularity(self.net, self.method, gamma, self.cache)

    def demand(self, members: frozenset[int]) -> float:
        value = self._demand.get(members)
        if value is None:
            value = float(self.net.node_demand[sorted(members)].sum())
            self._demand[members] = value
        return value

    def q_c(self, members: frozenset[int]) -> float:
        a = self.demand(members) / self.total
        return self.cache.d(members) / self.total - self.gamma * a * a

    def score(self, members: frozenset[int]) -> CommunityScore:
        demand = self.demand(members)
        d = self.cache.d(members)
        e, a = d / self.total, demand / self.total
        return CommunityScore(
            size=len(members),
            demand=demand,
            d=d,
            e=e,
            a=a,
            q_c=e - self.gamma * a * a,
            self_sufficiency=d / demand if demand > 0 else 1.0,
        )

    def quality(self, communities: Iterable[frozenset[int]]) -> float:
        return sum(self.q_c(c) for c in communities)

    def gain(self, block: frozenset[int], source: frozenset[int], target: frozenset[int]) -> float:
        """Change in quality when ``block`` (a subset of ``source``) moves into ``target``."""
        return (
            self.q_c(target | block)
            - self.q_c(target)
            + self.q_c(source - block)
            - self.q_c(source)
        )


def _evaluator(net, gamma, method, cache) -> EnergyModularity:
    return EnergyModularity(net, method if cache is None else cache.method, gamma, cache)


def _idx(net: EnergyNetwork, members: Iterable[str]) -> frozenset[int]:
    return frozenset(net.indices(members))


def community_demand_fraction(net: EnergyNetwork, members: Iterable[str]) -> float:
    total = total_demand(net)
    if total <= 0:
        raise ZeroDemandError("zero total demand")
    return float(net.node_demand[net.indices(members)].sum()) / total


def community_internal_fraction(
    net: EnergyNetwork, members: Iterable[str], method: Method | str, cache: DispatchCache | None = None
) -> float:
    ev = _evaluator(net, 1.0, method, cache)
    return ev.cache.d(_idx(net, members)) / ev.total


def community_score(
    net: EnergyNetwork,
    members: Iterable[str],
    gamma: float,
    method: Method | str,
    cache: DispatchCache | None = None,
) -> CommunityScore:
    return _evaluator(net, gamma, method, cache).score(_idx(net, members))


def partition_modularity(
    net: EnergyNetwork,
    partition: Partition,
    gamma: float,
    method: Method | str,
    cache: DispatchCache | None = None,
) -> float:
    partition.validate(net)
    ev = _evaluator(net, gamma, method, cache)
    return ev.quality(_idx(net, c) for c in partition.communities)


def modularity_gain(
    net: EnergyNetwork,
    partition: Partition,
    node: str,
    source: Iterable[str],
    target: Iterable[str] | None,
    gamma: float,
    method: Method | str,
    cache: DispatchCache | None = None,
) -> float:
    """Gain of moving ``node`` from community ``source`` to ``target``.

    ``target=None`` (or empty) stands for a new singleton community.
    """
    source = frozenset(source)
    if node not in source:
        raise ValueError(f"node {node!r} is not a member of the source community")
    target = frozenset(target or ())
    communities = set(partition.communities)
    if source not in communities or (target and target not in communities):
        raise ValueError("source and target must be communities of the partition")
    ev = _evaluator(net, gamma, method, cache)
    if source == target:
        return 0.0
    return ev.gain(_idx(net, [node]), _idx(net, source), _idx(net, target))
