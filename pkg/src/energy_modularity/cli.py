"""Command-line front end.

Exit codes: 0 ok, 2 usage or input error, 3 model error (zero total demand),
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time

from . import __version__
from . import bench
from .dispatch import DispatchCache, Method, SolverError, ModelInfeasibleError
from .louvain import ConvergenceError, LouvainConfig, best_of
from .modularity import EnergyModularity, ZeroDemandError
from .network import (
    EnergyNetwork,
    NetworkError,
    Partition,
    PartitionError,
    is_connected_community,
    load_network,
    prune_passive_nodes,
    serialize_network,
)
from .oracle import (
    GuardError,
    InstanceParams,
    check_sim_lp_equivalence,
    exhaustive_best_partition,
    random_instance,
)

log = logging.getLogger("energy_modularity")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


# -- argument helpers -------------------------------------------------------


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _add_network_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--network", required=required, help="topology JSON")
    p.add_argument("--demand", required=required, help="demand CSV")
    p.add_argument("--supply", required=required, help="supply CSV")
    p.add_argument("--horizon-limit", type=_pos_int, help="truncate series to the first N slices")
    p.add_argument("--prune-passive", action="store_true", help="remove nodes without demand, supply or flexibility")


def _add_run_args(p: argparse.ArgumentParser, gamma_default: float | None = 1.0) -> None:
    p.add_argument("--gamma", type=_nonneg_float, default=gamma_default, help="resolution parameter")
    p.add_argument("--method", choices=[m.value for m in Method], default=Method.SIMULATE.value)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--runs", type=_pos_int, default=1, help="seeds seed, seed+1, ...")
    p.add_argument("--no-pruning", action="store_true", help="full-sweep local optimisation")
    p.add_argument("--allow-disconnected", action="store_true", help="drop the connectivity guard")
    p.add_argument("--lp-tol", type=_pos_float, default=1e-6)
    p.add_argument("--out", help="output file (default: stdout)")


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, args: argparse.Namespace, inputs: dict[str, str] | None = None) -> dict:
    config = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "command", "out", "out_dir") and v is not None
    }
    return {
        "tool": "energy-modularity",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {name: {"path": path, "sha256": _digest(path)} for name, path in (inputs or {}).items()},
    }


def _load(args) -> tuple[EnergyNetwork, dict[str, str]]:
    paths = {"network": args.network, "demand": args.demand, "supply": args.supply}
    try:
        net = load_network(args.network, args.demand, args.supply)
    except OSError as exc:
        raise NetworkError(f"cannot read input: {exc}") from None
    if args.horizon_limit:
        net = net.truncated(args.horizon_limit)
    if args.prune_passive:
        net = prune_passive_nodes(net)
    return net, paths


def _config(args, gamma: float | None = None, seed: int | None = None) -> LouvainConfig:
    return LouvainConfig(
        gamma=args.gamma if gamma is None else gamma,
        seed=args.seed if seed is None else seed,
        method=Method(args.method),
        pruning=not args.no_pruning,
        enforce_connectivity=not args.allow_disconnected,
        lp_tol=args.lp_tol,
    )


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _rows_csv(rows: list[dict], manifest: dict, columns: list[str] | None = None) -> str:
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
    if columns is None:
        columns = []
        for row in rows:
            columns += [k for k in row if k not in columns]
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", restval="")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# -- partition documents ----------------------------------------------------


def partition_document(net, partition: Partition, ev: EnergyModularity, noflex: DispatchCache) -> list[dict]:
    rows = []
    for i, comm in enumerate(partition.canonical(net).communities):
        idx = frozenset(net.indices(comm))
        score = ev.score(idx)
        d_nf = noflex.d(idx)
        rows.append(
            {
                "id": i,
                "members": [net.ids[j] for j in sorted(idx)],
                "size": score.size,
                "demand": score.demand,
                "d": score.d,
                "e": score.e,
                "a": score.a,
                "q_c": score.q_c,
                "self_sufficiency_noflex": d_nf / score.demand if score.demand > 0 else 1.0,
                "self_sufficiency_method": score.self_sufficiency,
                "connected": is_connected_community(net, comm),
            }
        )
    return rows


def read_partition(path: str) -> tuple[Partition, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        comms = [c["members"] if isinstance(c, dict) else c for c in doc["communities"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise PartitionError(f"cannot read partition document: {exc}") from None
    return Partition(tuple(frozenset(map(str, c)) for c in comms)), doc


# -- subcommands ------------------------------------------------------------


def cmd_detect(args) -> int:
    net, paths = _load(args)
    config = _config(args)
    cache = DispatchCache(net, config.method, config.lp_tol)
    t0 = time.perf_counter()
    best, reports = best_of(net, config, args.runs, cache)
    runtime_ms = (time.perf_counter() - t0) * 1000
    ev = EnergyModularity(net, config.method, config.gamma, cache)
    noflex = cache if config.method is Method.NOFLEX else DispatchCache(net, Method.NOFLEX)
    communities = partition_document(net, best.partition, ev, noflex)
    if config.enforce_connectivity and not all(c["connected"] for c in communities):
        raise InvariantError("detected community is disconnected")
    doc = {
        "manifest": _manifest("detect", args, paths),
        "gamma": config.gamma,
        "method": config.method.value,
        "seed": best.seed,
        "k": best.k,
        "Q": best.Q,
        "Q_at_gamma_1": ev.with_gamma(1.0).quality(frozenset(net.indices(c)) for c in best.partition.communities),
        "communities": communities,
        "runs": [
            {
                "seed": r.seed,
                "k": r.k,
                "Q": r.Q,
                "runtime_ms": r.wall_time * 1000,
                "gain_evaluations": r.gain_evaluations,
                "outer_iterations": r.outer_iterations,
            }
            for r in reports
        ],
        "runtime_ms": runtime_ms,
    }
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    log.info("detect: k=%d Q=%.6f (seed %d of %d runs)", best.k, best.Q, best.seed, args.runs)
    return EXIT_OK


def _gamma_grid(lo: float, hi: float, step: float) -> list[float]:
    if hi < lo:
        raise UsageError("--gamma-max must be >= --gamma-min")
    count = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(count + 1) if lo + i * step <= hi + 1e-9]


def cmd_sweep(args) -> int:
    net, paths = _load(args)
    gammas = _gamma_grid(args.gamma_min, args.gamma_max, args.gamma_step)
    method = Method(args.method)
    cache = DispatchCache(net, method, args.lp_tol)
    ev1 = EnergyModularity(net, method, 1.0, cache)
    rows = []
    for gamma in gammas:
        for k in range(args.runs):
            seed = (args.seed + k) % 2**64
            _, [rep] = best_of(net, _config(args, gamma=gamma, seed=seed), 1, cache)
            rows.append(
                {
                    "gamma": gamma,
                    "seed": seed,
                    "method": method.value,
                    "k": rep.k,
                    "Q_at_gamma": rep.Q,
                    "Q_at_1": ev1.quality(frozenset(net.indices(c)) for c in rep.partition.communities),
                    "runtime_ms": rep.wall_time * 1000,
                    "gain_evaluations": rep.gain_evaluations,
                }
            )
    _write(_rows_csv(rows, _manifest("sweep", args, paths)), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    net, paths = _load(args)
    partition, doc = read_partition(args.partition)
    partition.validate(net)
    paths["partition"] = args.partition
    method = Method(args.method or doc.get("method", Method.SIMULATE.value))
    gamma = args.gamma if args.gamma is not None else float(doc.get("gamma", 1.0))
    if not gamma >= 0:
        raise UsageError("gamma must be >= 0")
    ev = EnergyModularity(net, method, gamma, lp_tol=args.lp_tol)
    noflex = DispatchCache(net, Method.NOFLEX)
    lp = None if args.no_lp else (ev.cache if method is Method.LP else DispatchCache(net, Method.LP, args.lp_tol))
    communities = []
    for row in partition_document(net, partition, ev, noflex):
        if lp is not None:
            idx = frozenset(net.indices(row["members"]))
            row["self_sufficiency_lp"] = lp.d(idx) / row["demand"] if row["demand"] > 0 else 1.0
        communities.append(row)
    blocks = [frozenset(net.indices(c)) for c in partition.communities]
    out = {
        "manifest": _manifest("eval", args, paths),
        "gamma": gamma,
        "method": method.value,
        "k": partition.k,
        "Q": ev.quality(blocks),
        "Q_at_gamma_1": ev.with_gamma(1.0).quality(blocks),
        "all_connected": all(c["connected"] for c in communities),
        "communities": communities,
    }
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    params = InstanceParams(
        seed=args.seed,
        n=args.nodes,
        horizon=args.horizon,
        edge_density=args.density,
        flex_probability=args.flex_probability,
        eta_u_range=(args.eta_u, args.eta_u),
        eta_p_range=(args.eta_p, args.eta_p),
        eta_f_range=(args.eta_f, args.eta_f),
        profile=args.profile,
    )
    net = random_instance(params)
    topo, demand, supply = serialize_network(net)
    doc = json.loads(topo)
    doc["manifest"] = _manifest("gen", args)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, text in (
        ("network.json", json.dumps(doc, indent=2) + "\n"),
        ("demand.csv", demand),
        ("supply.csv", supply),
    ):
        with open(os.path.join(args.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.equivalence:
        params = InstanceParams(seed=args.seed, n=args.nodes, horizon=args.horizon, edge_density=args.density)
        report = check_sim_lp_equivalence(params, args.trials, lp_tol=args.lp_tol)
        out = {
            "manifest": _manifest("oracle", args),
            "trials": report.trials,
            "checks": report.checks,
            "max_abs_diff": report.max_abs_diff,
            "failures": [f.to_json() for f in report.failures],
        }
        if args.out_dir:
            for k, failure in enumerate(report.failures):
                failure.write(os.path.join(args.out_dir, f"failure_{k:04d}"))
        _write(json.dumps(out, indent=2) + "\n", args.out)
        return EXIT_OK if report.ok else EXIT_INTERNAL

    if not (args.network and args.demand and args.supply):
        raise UsageError("--network, --demand and --supply are required unless --equivalence is given")
    net, paths = _load(args)
    config = _config(args)
    cache = DispatchCache(net, config.method, config.lp_tol)
    optimum, q_opt = exhaustive_best_partition(
        net, config.gamma, config.method, connected=config.enforce_connectivity, cache=cache
    )
    best, _ = best_of(net, config, args.runs, cache)
    gap = q_opt - best.Q
    out = {
        "manifest": _manifest("oracle", args, paths),
        "gamma": config.gamma,
        "method": config.method.value,
        "exhaustive": {"Q": q_opt, "k": optimum.k, "communities": [sorted(c) for c in optimum.canonical(net).communities]},
        "louvain": {"Q": best.Q, "k": best.k, "seed": best.seed, "runs": args.runs,
                    "communities": [sorted(c) for c in best.partition.communities]},
        "gap": gap,
    }
    _write(json.dumps(out, indent=2) + "\n", args.out)
    if gap < -1e-9:
        log.error("louvain exceeded the exhaustive optimum by %.3g", -gap)
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = [Method(m) for m in args.methods]
    if args.network:
        net, paths = _load(args)
    else:
        horizon = max(args.values) if args.axis in ("horizon", "louvain-horizon") else args.horizon
        net = bench.synthetic_network(args.nodes, int(horizon), args.seed, lossy=not args.lossless)
        paths = {}
    if args.axis == "community-size":
        rows = bench.bench_community_size(net, [int(v) for v in args.values], methods, args.repeat)
    elif args.axis == "horizon":
        rows = bench.bench_horizon(net, [int(v) for v in args.values], methods, args.community_size, args.repeat)
    elif args.axis == "louvain-horizon":
        rows = bench.bench_louvain_horizon(net, [int(v) for v in args.values], methods, args.gamma, args.seed)
    else:
        rows = bench.bench_gamma(net, list(args.values), methods, args.seed)
    _write(_rows_csv(rows, _manifest("bench", args, paths)), args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energy-modularity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect communities and write a partition document")
    _add_network_args(p)
    _add_run_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="detect over a gamma grid and several seeds")
    _add_network_args(p)
    _add_run_args(p, gamma_default=None)
    p.add_argument("--gamma-min", type=_nonneg_float, default=0.0)
    p.add_argument("--gamma-max", type=_nonneg_float, default=2.0)
    p.add_argument("--gamma-step", type=_pos_float, default=0.02)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="statistics of a given partition")
    _add_network_args(p)
    p.add_argument("--partition", required=True, help="partition JSON (detect output or {communities: [[...]]})")
    p.add_argument("--gamma", type=_nonneg_float, help="default: the partition document's gamma")
    p.add_argument("--method", choices=[m.value for m in Method], help="default: the partition document's method")
    p.add_argument("--lp-tol", type=_pos_float, default=1e-6)
    p.add_argument("--no-lp", action="store_true", help="skip LP self-sufficiency columns")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen", help="write a random network instance")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--nodes", type=_pos_int, required=True)
    p.add_argument("--horizon", type=_pos_int, default=96)
    p.add_argument("--density", type=_pos_float, default=0.3)
    p.add_argument("--flex-probability", type=_nonneg_float, default=0.5)
    p.add_argument("--eta-u", type=_pos_float, default=1.0)
    p.add_argument("--eta-p", type=_pos_float, default=1.0)
    p.add_argument("--eta-f", type=_pos_float, default=1.0)
    p.add_argument("--profile", choices=["uniform", "daily"], default="uniform")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="compare Louvain with the exhaustive optimum, or SimulateFlex with the LP")
    _add_network_args(p, required=False)
    _add_run_args(p)
    p.set_defaults(runs=20)
    p.add_argument("--equivalence", action="store_true", help="run the SimulateFlex/LP equivalence check")
    p.add_argument("--trials", type=_pos_int, default=200)
    p.add_argument("--nodes", type=_pos_int, default=6)
    p.add_argument("--horizon", type=_pos_int, default=48)
    p.add_argument("--density", type=_pos_float, default=0.3)
    p.add_argument("--out-dir", help="write replayable failure cases here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="runtime / accuracy tables")
    _add_network_args(p, required=False)
    p.add_argument("--axis", choices=bench.AXES, required=True)
    p.add_argument("--values", type=_csv_list(float), required=True, help="comma-separated axis values")
    p.add_argument("--methods", type=_csv_list(str), default=["noflex", "simulate"])
    p.add_argument("--nodes", type=_pos_int, default=99, help="synthetic network size")
    p.add_argument("--horizon", type=_pos_int, default=2880, help="synthetic horizon for non-horizon axes")
    p.add_argument("--community-size", type=_pos_int, default=10)
    p.add_argument("--gamma", type=_nonneg_float, default=0.3)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--repeat", type=_pos_int, default=3)
    p.add_argument("--lossless", action="store_true", help="unit efficiencies in the synthetic network")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "methods", None):
            bad = [m for m in args.methods if m not in {x.value for x in Method}]
            if bad:
                raise UsageError(f"unknown method(s) {bad}")
        return args.func(args)
    except ZeroDemandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (NetworkError, PartitionError, GuardError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, InvariantError, ModelInfeasibleError, SolverError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
