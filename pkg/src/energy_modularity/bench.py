"""Runtime and accuracy benchmarks for the dispatch evaluators and the detector."""

from __future__ import annotations

import time
from collections import deque
from collections.abc import Callable, Sequence

import numpy as np

from .dispatch import DispatchCache, Method, evaluate
from .louvain import LouvainConfig, louvain
from .network import EnergyNetwork
from .oracle import InstanceParams, random_instance

AXES = ("community-size", "horizon", "louvain-horizon", "gamma")


def synthetic_network(n: int, horizon: int, seed: int = 0, lossy: bool = True) -> EnergyNetwork:
    """Sparse grid-like network with daily demand/supply shapes.

    About 1.06 undirected edges per node, a net-generating supply scale and
    storage at roughly half of the nodes.
    """
    target_edges = round(1.06 * n)
    spare = n * (n - 1) // 2 - (n - 1)
    density = 1.0 if spare <= 0 else min(1.0, max(1e-9, (target_edges - (n - 1)) / spare))
    eta = (0.95, 0.95) if lossy else (1.0, 1.0)
    params = InstanceParams(
        seed=seed,
        n=n,
        horizon=horizon,
        edge_density=density,
        demand_range=(0.05, 1.0),
        supply_range=(0.0, 3.0),
        flex_probability=0.55,
        soc_max_range=(0.5, 4.0),
        c_rate=0.125,
        eta_u_range=eta,
        eta_p_range=(0.9986, 0.9986) if lossy else (1.0, 1.0),
        eta_f_range=eta,
        profile="daily",
    )
    return random_instance(params)


def bfs_community(net: EnergyNetwork, size: int, start: int = 0) -> list[str]:
    """First ``size`` nodes reached by breadth-first search from ``start``."""
    seen = [start]
    marked = {start}
    queue = deque([start])
    while queue and len(seen) < size:
        v = queue.popleft()
        for w in sorted(net.neighbors[v]):
            if w not in marked and len(seen) < size:
                marked.add(w)
                seen.append(w)
                queue.append(w)
    return [net.ids[i] for i in sorted(seen)]


def best_time(fn: Callable[[], object], repeat: int = 3) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def dispatch_rows(
    net: EnergyNetwork, members: Sequence[str], methods: Sequence[Method], repeat: int, axis: str, value
) -> list[dict]:
    rows = []
    values = {}
    for method in methods:
        elapsed, result = best_time(lambda: evaluate(net, members, method), repeat if method is not Method.LP else 1)
        values[method] = result.d
        rows.append({"axis": axis, "value": value, "method": method.value, "wall_time_s": elapsed, "d": result.d})
    base = values.get(Method.LP)
    for row in rows:
        row["rel_error_vs_lp"] = (row["d"] - base) / base if base else ""
    return rows


def bench_community_size(net, sizes, methods, repeat=3) -> list[dict]:
    rows = []
    for size in sizes:
        rows += dispatch_rows(net, bfs_community(net, size), methods, repeat, "community-size", size)
    return rows


def bench_horizon(net, horizons, methods, community_size=10, repeat=3) -> list[dict]:
    rows = []
    for h in horizons:
        sub = net.truncated(h)
        rows += dispatch_rows(sub, bfs_community(sub, community_size), methods, repeat, "horizon", h)
    return rows


def _louvain_row(net, axis, value, method, gamma, seed) -> dict:
    cache = DispatchCache(net, method)
    rep = louvain(net, LouvainConfig(gamma=gamma, seed=seed, method=method), cache)
    return {
        "axis": axis,
        "value": value,
        "method": method.value,
        "wall_time_s": rep.wall_time,
        "k": rep.k,
        "Q": rep.Q,
        "gain_evaluations": rep.gain_evaluations,
    }


def bench_louvain_horizon(net, horizons, methods, gamma=0.3, seed=0) -> list[dict]:
    return [_louvain_row(net.truncated(h), "louvain-horizon", h, m, gamma, seed) for h in horizons for m in methods]


def bench_gamma(net, gammas, methods, seed=0) -> list[dict]:
    return [_louvain_row(net, "gamma", g, m, g, seed) for g in gammas for m in methods]


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Slope and R^2 of a least-squares line through ``(log x, log y)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2
