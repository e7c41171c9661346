"""Internally suppliable demand ``d(C)`` of a community.

Three evaluators share one contract: given a network and a flat set of
member nodes, return the demand that can be served from member supply and
member flexibility over the whole horizon.

* ``noflex``   -- per-slice balance of the aggregated community, no storage.
* ``simulate`` -- greedy virtual-SOC simulation of one aggregated lossless store.
* ``lp``       -- transport-model linear program with efficiencies and flow limits.
"""

from __future__ import annotations

import enum
import threading
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .lpsolver import ModelInfeasibleError, SolverError, solve_max
from .network import EdgeSpec, EnergyNetwork

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

__all__ = [
    "Method",
    "DispatchResult",
    "DispatchTrace",
    "LPModel",
    "DispatchCache",
    "SolverError",
    "ModelInfeasibleError",
    "d_noflex",
    "simulate_flex",
    "build_lp",
    "lp_flex",
    "edge_total_flow",
    "check_trace",
]

DEFAULT_LP_TOL = 1e-6


class Method(str, enum.Enum):
    NOFLEX = "noflex"
    SIMULATE = "simulate"
    LP = "lp"


@dataclass(frozen=True, eq=False)
class DispatchTrace:
    """Optimal LP dispatch; node arrays are ``(len(members), h)``, SOC is ``(len(members), h + 1)``."""

    members: tuple[str, ...]
    edges: tuple[EdgeSpec, ...]
    d_tilde: np.ndarray
    s_tilde: np.ndarray
    f_plus: np.ndarray
    f_minus: np.ndarray
    soc: np.ndarray
    flows: np.ndarray


@dataclass(frozen=True)
class DispatchResult:
    d: float
    method: Method
    trace: DispatchTrace | None = None


def _row_sums(supply, demand, idx):
    # row-by-row accumulation in member order; no copy of the member rows
    h = supply.shape[1]
    s = np.zeros(h)
    d = np.zeros(h)
    for i in idx:
        for t in range(h):
            s[t] += supply[i, t]
        for t in range(h):
            d[t] += demand[i, t]
    return s, d


_row_sums_fast = njit(cache=True, nogil=True)(_row_sums) if njit is not None else None


def _aggregate(net: EnergyNetwork, idx: list[int]) -> tuple[np.ndarray, np.ndarray]:
    # idx is sorted, so the summation order (and the float result) does not depend on call path
    if len(idx) == 1:
        return net.supply[idx[0]], net.demand[idx[0]]
    if _row_sums_fast is not None:
        return _row_sums_fast(net.supply, net.demand, np.asarray(idx, dtype=np.int64))
    s = np.zeros(net.horizon)
    d = np.zeros(net.horizon)
    for i in idx:
        s += net.supply[i]
        d += net.demand[i]
    return s, d


# -- NoFlex -----------------------------------------------------------------


def _noflex(net: EnergyNetwork, idx: list[int]) -> float:
    if not idx:
        return 0.0
    s, d = _aggregate(net, idx)
    # same sequential sum of per-slice minima as the greedy's supply term
    d_s, _, _ = _simulate_fast(s, d, 0.0, 0.0)
    return float(d_s)


def d_noflex(net: EnergyNetwork, members: Iterable[str]) -> DispatchResult:
    """Sum over slices of ``min(community supply, community demand)``."""
    return DispatchResult(_noflex(net, net.indices(members)), Method.NOFLEX)


# -- SimulateFlex -----------------------------------------------------------


def _simulate_core(supply, demand, delta_cap, soc_cap):
    """Virtual-SOC greedy over one aggregated store.

    The virtual state of charge starts at 0 and may go negative, standing in
    for an unknown initial charge; ``lb``/``ub`` track its running range so
    that ``ub - lb`` never exceeds the storage capacity. Returns
    ``(d_supply, d_flex, widest_window)``.
    """
    d_s = 0.0
    d_f = 0.0
    sigma = 0.0
    ub = 0.0
    lb = 0.0
    window = 0.0
    for t in range(supply.shape[0]):
        s = supply[t]
        d = demand[t]
        d_s += min(s, d)
        delta = s - d
        if delta > delta_cap:
            delta = delta_cap
        elif delta < -delta_cap:
            delta = -delta_cap
        if delta > 0:
            sigma = min(sigma + delta, lb + soc_cap)
            ub = max(ub, sigma)
        else:
            old = sigma
            sigma = max(sigma + delta, ub - soc_cap)
            lb = min(lb, sigma)
            d_f += old - sigma
        if ub - lb > window:
            window = ub - lb
    # final negative SOC means more was dispatched than stored
    d_f += min(sigma, 0.0)
    return d_s, d_f, window


_simulate_fast = njit(cache=True, nogil=True)(_simulate_core) if njit is not None else _simulate_core


def _simulate(net: EnergyNetwork, idx: list[int]) -> float:
    if not idx:
        return 0.0
    s, d = _aggregate(net, idx)
    delta_cap = float(net.f_max[idx].sum())
    soc_cap = float(net.soc_max[idx].sum())
    d_s, d_f, _ = _simulate_fast(s, d, delta_cap, soc_cap)
    return float(d_s + d_f)


def simulate_flex(net: EnergyNetwork, members: Iterable[str]) -> DispatchResult:
    """Self-sufficiency under lossless storage and unlimited internal flows.

    All member nodes collapse into one node with one store of power
    ``sum(f_max)`` and capacity ``sum(soc_max)``; efficiencies and flow limits
    are ignored.
    """
    return DispatchResult(_simulate(net, net.indices(members)), Method.SIMULATE)


def simulate_window(net: EnergyNetwork, members: Iterable[str]) -> tuple[float, float, float, float]:
    """``(d_supply, d_flex, widest SOC window, capacity)`` from the pure-Python path."""
    idx = net.indices(members)
    s, d = _aggregate(net, idx)
    soc_cap = float(net.soc_max[idx].sum())
    d_s, d_f, window = _simulate_core(s, d, float(net.f_max[idx].sum()), soc_cap)
    return d_s, d_f, window, soc_cap


# -- LPFlex -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LPModel:
    """Dispatch LP for one community, in equality form with box bounds.

    ``blocks`` maps a variable family to ``(offset, shape)``; families are
    ``d_tilde``, ``s_tilde``, ``f_plus``, ``f_minus`` (members x h), ``soc``
    (members x (h+1)) and ``flows`` (internal edges x h).
    """

    members: tuple[str, ...]
    edges: tuple[EdgeSpec, ...]
    horizon: int
    blocks: dict[str, tuple[int, tuple[int, int]]]
    objective: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_variables(self) -> int:
        return self.objective.shape[0]

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.blocks[name]
        return x[offset : offset + shape[0] * shape[1]].reshape(shape)


def build_lp(net: EnergyNetwork, members: Iterable[str]) -> LPModel:
    idx = net.indices(members)
    m, h = len(idx), net.horizon
    ids = tuple(net.ids[i] for i in idx)
    local = {net.ids[i]: k for k, i in enumerate(idx)}
    edges = tuple(e for e in net.edges if e.source in local and e.target in local)
    n_e = len(edges)

    blocks: dict[str, tuple[int, tuple[int, int]]] = {}
    offset = 0
    for name, rows, cols in (
        ("d_tilde", m, h),
        ("s_tilde", m, h),
        ("f_plus", m, h),
        ("f_minus", m, h),
        ("soc", m, h + 1),
        ("flows", n_e, h),
    ):
        blocks[name] = (offset, (rows, cols))
        offset += rows * cols
    n_var = offset

    def var(name, r, c):
        off, (_, cols) = blocks[name]
        return off + np.asarray(r) * cols + np.asarray(c)

    D = net.demand[idx]
    S = net.supply[idx]
    f_max = net.f_max[idx]
    soc_max = net.soc_max[idx]
    eta_u = net.eta_u[idx]
    eta_p = net.eta_p[idx]

    lower = np.zeros(n_var)
    upper = np.empty(n_var)
    upper[var("d_tilde", 0, 0) : var("d_tilde", 0, 0) + m * h] = D.ravel()
    upper[var("s_tilde", 0, 0) : var("s_tilde", 0, 0) + m * h] = S.ravel()
    upper[var("f_plus", 0, 0) : var("f_plus", 0, 0) + m * h] = np.repeat(f_max, h)
    upper[var("f_minus", 0, 0) : var("f_minus", 0, 0) + m * h] = np.repeat(f_max, h)
    upper[var("soc", 0, 0) : var("soc", 0, 0) + m * (h + 1)] = np.repeat(soc_max, h + 1)
    w_max = np.array([np.inf if e.w_max is None else e.w_max for e in edges])
    if n_e:
        upper[var("flows", 0, 0) :] = np.repeat(w_max, h)

    objective = np.zeros(n_var)
    objective[var("d_tilde", 0, 0) : var("d_tilde", 0, 0) + m * h] = 1.0

    rows_i: list[np.ndarray] = []
    cols_i: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def add(r, c, v):
        r, c = np.broadcast_arrays(np.asarray(r), np.asarray(c))
        rows_i.append(r.ravel())
        cols_i.append(c.ravel())
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape).ravel())

    W_, T_ = np.meshgrid(np.arange(m), np.arange(h), indexing="ij")  # (m, h)
    # SOC recurrence: soc[t+1] - eta_p soc[t] - eta_u f_minus[t] + f_plus[t] / eta_u = 0
    row = W_ * h + T_
    add(row, var("soc", W_, T_ + 1), 1.0)
    add(row, var("soc", W_, T_), -eta_p[:, None] * np.ones((1, h)))
    add(row, var("f_minus", W_, T_), -eta_u[:, None] * np.ones((1, h)))
    add(row, var("f_plus", W_, T_), (1.0 / eta_u)[:, None] * np.ones((1, h)))
    n_rows = m * h
    # cyclic: soc[0] - soc[h] = 0
    row = n_rows + np.arange(m)
    add(row, var("soc", np.arange(m), 0), 1.0)
    add(row, var("soc", np.arange(m), h), -1.0)
    n_rows += m
    # nodal balance: d~ + f- - s~ - f+ + sum_out W - sum_in eta_f W = 0
    base = n_rows
    row = base + W_ * h + T_
    add(row, var("d_tilde", W_, T_), 1.0)
    add(row, var("f_minus", W_, T_), 1.0)
    add(row, var("s_tilde", W_, T_), -1.0)
    add(row, var("f_plus", W_, T_), -1.0)
    t = np.arange(h)
    for k, e in enumerate(edges):
        u, v = local[e.source], local[e.target]
        add(base + u * h + t, var("flows", k, t), 1.0)
        add(base + v * h + t, var("flows", k, t), -e.eta_f)
    n_rows += m * h

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))), shape=(n_rows, n_var)
    ).tocsr()
    return LPModel(ids, edges, h, blocks, objective, A, np.zeros(n_rows), lower, upper)


def lp_flex(net: EnergyNetwork, members: Iterable[str], tol: float = DEFAULT_LP_TOL) -> DispatchResult:
    """Optimal self-sufficiency from the dispatch LP, with the full trace.

    Raises :class:`SolverError` on numerical breakdown and
    :class:`ModelInfeasibleError` if the solver claims infeasibility, which
    the zero assignment rules out.
    """
    members = list(members)
    if not members:
        return DispatchResult(0.0, Method.LP)
    model = build_lp(net, members)
    sol = solve_max(model.objective, model.A_eq, model.b_eq, model.lower, model.upper, tol)
    x = np.clip(sol.x, model.lower, model.upper)
    trace = DispatchTrace(
        members=model.members,
        edges=model.edges,
        d_tilde=model.block(x, "d_tilde"),
        s_tilde=model.block(x, "s_tilde"),
        f_plus=model.block(x, "f_plus"),
        f_minus=model.block(x, "f_minus"),
        soc=model.block(x, "soc"),
        flows=model.block(x, "flows"),
    )
    cap = float(net.demand[net.indices(members)].sum())
    d = min(max(float(trace.d_tilde.sum()), 0.0), cap)
    return DispatchResult(d, Method.LP, trace)


def _lp_value(net: EnergyNetwork, idx: list[int], tol: float) -> float:
    if not idx:
        return 0.0
    return lp_flex(net, [net.ids[i] for i in idx], tol).d


def edge_total_flow(result: DispatchResult, edge: EdgeSpec | tuple[str, str]) -> float:
    """Energy carried by ``edge`` over the whole horizon in an LP trace."""
    if result.trace is None:
        raise ValueError("no trace: only lp results carry dispatch traces")
    key = edge.key if isinstance(edge, EdgeSpec) else tuple(edge)
    for k, e in enumerate(result.trace.edges):
        if e.key == key:
            return float(result.trace.flows[k].sum())
    raise KeyError(f"edge {key[0]}->{key[1]} is not internal to the evaluated community")


def check_trace(net: EnergyNetwork, trace: DispatchTrace, tol: float = DEFAULT_LP_TOL) -> list[str]:
    """Recheck a trace against the dispatch constraints; returns violation messages.

    Works from the network data directly, not from the LP matrices.
    """
    problems: list[str] = []
    scale = max(1.0, float(np.abs(net.demand).max(initial=0)), float(np.abs(net.supply).max(initial=0)))
    eps = tol * scale

    def bad(label, values):
        worst = float(np.max(values, initial=0.0))
        if worst > eps:
            problems.append(f"{label}: violated by {worst:.3g}")

    h = net.horizon
    for k, node_id in enumerate(trace.members):
        node = net.node(node_id)
        fx = node.flex
        for name in ("d_tilde", "s_tilde", "f_plus", "f_minus", "soc"):
            bad(f"{name}[{node_id}] >= 0", -getattr(trace, name)[k])
        bad(f"d_tilde[{node_id}] <= demand", trace.d_tilde[k] - node.demand)
        bad(f"s_tilde[{node_id}] <= supply", trace.s_tilde[k] - node.supply)
        bad(f"f_plus[{node_id}] <= f_max", trace.f_plus[k] - fx.f_max)
        bad(f"f_minus[{node_id}] <= f_max", trace.f_minus[k] - fx.f_max)
        bad(f"soc[{node_id}] <= soc_max", trace.soc[k] - fx.soc_max)
        soc = trace.soc[k]
        for t in range(h):
            expect = soc[t] * fx.eta_p + trace.f_minus[k, t] * fx.eta_u - trace.f_plus[k, t] / fx.eta_u
            bad(f"soc recurrence[{node_id}, {t + 1}]", [abs(soc[t + 1] - expect)])
        bad(f"cyclic soc[{node_id}]", [abs(soc[0] - soc[h])])

    members = set(trace.members)
    inflow = {m: np.zeros(h) for m in members}
    outflow = {m: np.zeros(h) for m in members}
    for k, e in enumerate(trace.edges):
        if e.source not in members or e.target not in members:
            problems.append(f"edge {e.source}->{e.target} is not internal")
            continue
        w = trace.flows[k]
        bad(f"flow[{e.source}->{e.target}] >= 0", -w)
        if e.w_max is not None:
            bad(f"flow[{e.source}->{e.target}] <= w_max", w - e.w_max)
        outflow[e.source] += w
        inflow[e.target] += e.eta_f * w
    for k, node_id in enumerate(trace.members):
        lhs = trace.d_tilde[k] + trace.f_minus[k] - trace.s_tilde[k] - trace.f_plus[k]
        bad(f"nodal balance[{node_id}]", np.abs(lhs - (inflow[node_id] - outflow[node_id])))
    return problems


# -- memoised evaluation ----------------------------------------------------


class DispatchCache:
    """Memoised ``d(C)`` for one network and method.

    Keys are frozensets of dense node indices, so lookups are independent of
    member order. Safe to share between threads; a race may compute the same
    value twice but both paths produce the identical float.
    """

    def __init__(self, net: EnergyNetwork, method: Method | str, lp_tol: float = DEFAULT_LP_TOL):
        self.net = net
        self.method = Method(method)
        self.lp_tol = lp_tol
        self._values: dict[frozenset[int], float] = {frozenset(): 0.0}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _compute(self, idx: list[int]) -> float:
        if self.method is Method.NOFLEX:
            return _noflex(self.net, idx)
        if self.method is Method.SIMULATE:
            return _simulate(self.net, idx)
        return _lp_value(self.net, idx, self.lp_tol)

    def d(self, members: frozenset[int]) -> float:
        value = self._values.get(members)
        if value is not None:
            self.hits += 1
            return value
        self.misses += 1
        value = self._compute(sorted(members))
        with self._lock:
            self._values.setdefault(members, value)
        return value

    def d_ids(self, members: Iterable[str]) -> float:
        return self.d(frozenset(self.net.indices(members)))

    def __len__(self) -> int:
        return len(self._values)


def evaluate(net: EnergyNetwork, members: Iterable[str], method: Method | str, lp_tol: float = DEFAULT_LP_TOL) -> DispatchResult:
    """Dispatch ``members`` with the named method."""
    method = Method(method)
    if method is Method.NOFLEX:
        return d_noflex(net, members)
    if method is Method.SIMULATE:
        return simulate_flex(net, members)
    return lp_flex(net, members, lp_tol)
