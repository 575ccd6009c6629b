"""Command-line entry point: ``mobistore <subcommand> [options]``.

Exit codes: 0 success, 1 usage or validation error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from . import io as mio
from .casestudy import (MODEL_3, MODEL_3_FAST, SEMI, SEMI_FAST, CaseStudyError, ingest_lmps, lmp_spread,
                        run_case_study)
from .dispatch import DispatchError, solve_dispatch
from .marginal import marginal_value_report, solve_price_arbitrage
from .network import NetworkError, validate
from .qp import DEFAULT_TOLERANCES, Tolerances
from .relocation import ALGORITHMS, RelocationError, relocate
from .storage import StorageError, TransportModel, travel_split

VEHICLES = {"model3": MODEL_3, "model3-fast": MODEL_3_FAST, "semi": SEMI, "semi-fast": SEMI_FAST}
FIXTURE_KINDS = ("example1", "example2", "example3", "random-dispatch", "random-prices")
VALIDATION_ERRORS = (mio.DocumentError, CaseStudyError, StorageError, NetworkError, ValueError, KeyError,
                     FileNotFoundError, jsonschema.ValidationError)
SOLVER_ERRORS = (DispatchError, RelocationError, RuntimeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--tol-kkt", type=float, help=f"KKT residual tolerance (default {DEFAULT_TOLERANCES.kkt})")
    p.add_argument("--tol-binding", type=float,
                   help=f"activity tolerance for binding constraints (default {DEFAULT_TOLERANCES.binding})")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="mobistore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dispatch", parents=[common], help="solve the dispatch problem and emit LMPs")
    p.add_argument("--network")
    p.add_argument("--fleet")
    p.add_argument("--trajectories")
    p.add_argument("--rapid", action="store_true", default=None, help="drop storage power limits")

    p = sub.add_parser("mv", parents=[common], help="marginal values from a stored dispatch solution")
    p.add_argument("--solution")

    p = sub.add_parser("relocate", parents=[common], help="optimize unit trajectories against fixed LMPs")
    p.add_argument("--lmps")
    p.add_argument("--nodes", help="node metadata; validates a long-format LMP file")
    p.add_argument("--fleet")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--soc-step", type=float)

    p = sub.add_parser("arbitrage", parents=[common], help="price arbitrage along fixed trajectories")
    p.add_argument("--lmps")
    p.add_argument("--fleet")
    p.add_argument("--trajectories")
    p.add_argument("--rapid", action="store_true", default=None)

    p = sub.add_parser("casestudy", parents=[common], help="one vehicle-day relocation report")
    p.add_argument("--lmps")
    p.add_argument("--nodes")
    p.add_argument("--vehicle", choices=sorted(VEHICLES))
    p.add_argument("--date")
    p.add_argument("--start", help="initial node (default: first node)")
    p.add_argument("--soc-step", type=float, help="SoC step in MWh")

    p = sub.add_parser("validate", parents=[common], help="check input documents")
    p.add_argument("--network")
    p.add_argument("--fleet")
    p.add_argument("--trajectories")
    p.add_argument("--lmps")
    p.add_argument("--nodes")

    p = sub.add_parser("fixture", parents=[common], help="write a reference or random instance")
    p.add_argument("kind", choices=FIXTURE_KINDS)
    p.add_argument("--seed", type=int)
    return parser


_DEFAULTS = {"algo": "rapid", "seed": 0, "vehicle": "model3", "rapid": False}


def _resolve(args) -> argparse.Namespace:
    """Fill unset options from ``--config``, then from built-in defaults."""
    config = {}
    if args.config:
        config = mio.check(mio.read_json(args.config), mio.CONFIG_SCHEMA, "config")
    for key, value in list(config.items()) + list(_DEFAULTS.items()):
        if getattr(args, key, None) is None and hasattr(args, key):
            setattr(args, key, value)
    return args


def _tolerances(args) -> Tolerances:
    kw = {}
    if args.tol_kkt is not None:
        kw.update(kkt=args.tol_kkt, feasibility=args.tol_kkt, complementarity=args.tol_kkt)
    if args.tol_binding is not None:
        kw["binding"] = args.tol_binding
    if any(v <= 0 for v in kw.values()):
        raise ValueError("tolerances must be positive")
    return Tolerances(**{**DEFAULT_TOLERANCES.__dict__, **kw})


def _need(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _out(args) -> Path:
    return Path(args.out or ".")


def _say(args, msg):
    if args.verbose:
        print(msg, file=sys.stderr)


def cmd_dispatch(args, tol):
    _need(args, "network", "fleet", "trajectories")
    net = mio.network_from_doc(mio.read_json(args.network))
    fleet = mio.fleet_from_doc(mio.read_json(args.fleet))
    trajs = mio.trajectories_from_doc(mio.read_json(args.trajectories))
    sol = solve_dispatch(net, fleet, trajs, rapid=bool(args.rapid), tol=tol)
    out = _out(args)
    mio.write_json(out / "solution.json", mio.solution_to_doc(sol))
    mio.write_csv(out / "lmps.csv", mio.lmp_frame(sol.lmp, [f"bus_{b}" for b in net.bus_ids]))
    print(f"objective {sol.objective:.10g}; wrote {out / 'solution.json'} and {out / 'lmps.csv'}")


def _mv_doc(mv):
    doc = {"value": mv.value, "per_period": mv.per_period, "dual_value": mv.dual_value,
           "reconstructed": mv.reconstructed, "agrees": mv.agrees, "warnings": list(mv.warnings)}
    if mv.pattern is not None:
        doc["pattern"] = {"energy": list(mv.pattern.energy), "power": list(mv.pattern.power),
                          "free": list(mv.pattern.free), "ambiguous": list(mv.pattern.ambiguous)}
    return doc


def cmd_mv(args, tol):
    _need(args, "solution")
    sol = mio.solution_from_doc(mio.read_json(args.solution))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = marginal_value_report(sol, tol)
    net = sol.network
    lines = [f"{net.bus_ids[ln.from_bus]}->{net.bus_ids[ln.to_bus]}" for ln in net.lines]
    wire_names = [name for pair in ((a, "->".join(reversed(a.split("->")))) for a in lines) for name in pair]
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "marginal_value_report",
           "mobile": {str(k): _mv_doc(v) for k, v in rep.mobile.items()},
           "stationary": {f"bus_{b}": float(v) for b, v in zip(net.bus_ids, rep.stationary)},
           "wire": {name: float(v) for name, v in zip(wire_names, rep.wire)},
           "warnings": list(rep.warnings)}
    table = pd.DataFrame({"period": np.arange(sol.horizon)})
    for k, v in rep.mobile.items():
        table[f"unit_{k}"] = v.per_period
    for b, col in zip(net.bus_ids, rep.stationary_per_period.T):
        table[f"stationary_bus_{b}"] = col
    for name, col in zip(wire_names, rep.wire_per_period.T):
        table[f"wire_{name}"] = col
    out = _out(args)
    mio.write_json(out / "mv_report.json", doc)
    mio.write_csv(out / "mv_per_period.csv", table)
    print(f"wrote {out / 'mv_report.json'} and {out / 'mv_per_period.csv'}")


def _read_prices(args):
    if args.nodes:
        ds = ingest_lmps(args.lmps, args.nodes)
        return ds.prices, list(ds.nodes)
    return mio.read_lmp_csv(args.lmps)


def cmd_relocate(args, tol):
    _need(args, "lmps", "fleet")
    if args.algo == "approx" and args.soc_step is not None and args.soc_step <= 0:
        raise ValueError("--soc-step must be positive")
    prices, labels = _read_prices(args)
    fleet = mio.fleet_from_doc(mio.read_json(args.fleet))
    transport = fleet.transport_for(prices.shape[1])
    units = []
    for k, unit in enumerate(fleet):
        kw = {"tol": tol} if args.algo == "exact" else {}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = relocate(unit, prices, transport, args.algo, soc_step=args.soc_step, **kw)
        units.append({"unit": k, "name": unit.name, "algorithm": res.algorithm,
                      "trajectory": list(res.trajectory), "nodes": [labels[b] for b in res.trajectory],
                      "schedule_mwh": res.schedule, "soc_mwh": res.soc, "objective_usd": res.objective,
                      "revenue_usd": res.revenue, "travel_cost_usd": res.travel_cost,
                      "bound_usd": res.bound, "soc_step_mwh": res.soc_step,
                      "warnings": [str(w.message) for w in caught]})
        _say(args, f"unit {k}: {res.algorithm} objective {res.objective:.10g}")
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "relocation", "algo": args.algo, "units": units}
    mio.write_json(_out(args) / "relocation.json", doc)
    print(f"wrote {_out(args) / 'relocation.json'}")


def cmd_arbitrage(args, tol):
    _need(args, "lmps", "fleet", "trajectories")
    prices, labels = _read_prices(args)
    fleet = mio.fleet_from_doc(mio.read_json(args.fleet))
    trajs = fleet.validate_trajectories(mio.trajectories_from_doc(mio.read_json(args.trajectories)),
                                        prices.shape[1], prices.shape[0])
    transport = fleet.transport_for(prices.shape[1])
    units = []
    for k, (unit, traj) in enumerate(zip(fleet, trajs)):
        op = travel_split(traj, transport)[1]
        path = prices[np.arange(len(traj)), list(traj)]
        arb = solve_price_arbitrage(unit, path, op, rapid=bool(args.rapid), tol=tol)
        units.append({"unit": k, "trajectory": list(traj), "schedule_mwh": arb.u, "soc_mwh": arb.soc,
                      "revenue_usd": arb.objective, "unique": arb.unique,
                      "energy_bound": list(arb.pattern.energy), "power_bound": list(arb.pattern.power)})
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "arbitrage", "units": units}
    mio.write_json(_out(args) / "arbitrage.json", doc)
    print(f"wrote {_out(args) / 'arbitrage.json'}")


def cmd_casestudy(args, tol):
    _need(args, "lmps", "nodes")
    ds = ingest_lmps(args.lmps, args.nodes)
    vehicle = VEHICLES[args.vehicle]
    date = args.date or ds.dates[0].isoformat()
    rep = run_case_study(ds, vehicle, date, args.soc_step, start=args.start)
    out = _out(args)
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "casestudy_report", **rep.summary(),
           "table": rep.table_frame().to_dict(orient="records")}
    mio.write_json(out / "report.json", doc)
    mio.write_csv(out / "table.csv", rep.table_frame())
    mio.write_csv(out / "trace.csv", rep.trace_frame())
    mio.write_csv(out / "spread.csv", lmp_spread(ds, date))
    print(f"net profit ${rep.net_usd:.2f} (gross ${rep.gross_usd:.2f}, travel ${rep.travel_usd:.2f})")


def cmd_validate(args, tol):
    if not any((args.network, args.fleet, args.trajectories, args.lmps)):
        raise UsageError("nothing to validate; pass --network, --fleet, --trajectories or --lmps")
    net = fleet = None
    if args.network:
        net = mio.network_from_doc(mio.read_json(args.network))
        problems = validate(net)
        if problems:
            raise mio.DocumentError("network: " + "; ".join(f"{p.code}: {p.message or p.subject}" for p in problems))
    if args.fleet:
        fleet = mio.fleet_from_doc(mio.read_json(args.fleet))
    if args.trajectories:
        trajs = mio.trajectories_from_doc(mio.read_json(args.trajectories))
        if fleet is not None:
            n = net.n_buses if net is not None else (fleet.transport.n_buses if fleet.transport else None)
            if n is None:
                raise UsageError("--trajectories needs --network or a fleet transport block to check bus ranges")
            fleet.validate_trajectories(trajs, n, net.horizon if net is not None else None)
    if args.lmps:
        _read_prices(args)
    print("ok")


def cmd_fixture(args, tol):
    from . import fixtures

    out = _out(args)
    if args.kind == "random-prices":
        inst = fixtures.random_price_instance(args.seed)
        from .storage import Fleet

        mio.write_csv(out / "lmps.csv", mio.lmp_frame(inst.prices))
        mio.write_json(out / "fleet.json", mio.fleet_to_doc(Fleet((inst.unit,), inst.transport)))
        print(f"wrote {out / 'lmps.csv'} and {out / 'fleet.json'}")
        return
    if args.kind == "random-dispatch":
        inst = fixtures.random_dispatch_instance(args.seed)
    else:
        inst = getattr(fixtures, args.kind.replace("-", "_"))()
    mio.write_json(out / "network.json", mio.network_to_doc(inst.network))
    mio.write_json(out / "fleet.json", mio.fleet_to_doc(inst.fleet))
    mio.write_json(out / "trajectories.json", mio.trajectories_to_doc(inst.trajectories))
    print(f"wrote network.json, fleet.json and trajectories.json to {out}")


COMMANDS = {"dispatch": cmd_dispatch, "mv": cmd_mv, "relocate": cmd_relocate, "arbitrage": cmd_arbitrage,
            "casestudy": cmd_casestudy, "validate": cmd_validate, "fixture": cmd_fixture}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _resolve(parser.parse_args(argv))
        tol = _tolerances(args)
        COMMANDS[args.command](args, tol)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
