"""JSON documents and CSV tables for networks, fleets, trajectories and results.

Every document carries ``schema_version`` and ``kind``.  Loaders validate
against a JSON schema that rejects unknown keys.  Bus references in files
are 0-based indices; ``null`` stands for an infinite limit or an
unreachable pair.  Writers are deterministic and atomic.
"""
from __future__ import annotations

import io as _io
import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from .network import Line, PowerNetwork
from .storage import Fleet, MobileStorageUnit, TransportModel

SCHEMA_VERSION = 1


class DocumentError(ValueError):
    pass


_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}
_idx = {"type": "integer", "minimum": 0}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}
_opt_matrix = {"type": "array", "items": {"type": "array", "items": _opt_num}}


def _doc(kind, properties, required):
    return {
        "type": "object",
        "additionalProperties": False,
        "properties": {"schema_version": {"const": SCHEMA_VERSION}, "kind": {"const": kind}, **properties},
        "required": ["schema_version", "kind", *required],
    }


def _obj(properties, required):
    return {"type": "object", "additionalProperties": False, "properties": properties, "required": required}


NETWORK_SCHEMA = _doc("network", {
    "buses": {"type": "array", "minItems": 1, "items": _obj({
        "id": {"type": ["integer", "string"]}, "cost_a": _num, "cost_b": _num,
        "gen_max": _opt_num, "gen_min": _opt_num}, ["cost_a", "cost_b"])},
    "lines": {"type": "array", "items": _obj({
        "from": _idx, "to": _idx, "susceptance": _num, "limit": _opt_num}, ["from", "to", "susceptance", "limit"])},
    "loads": _matrix,
    "slack": _idx,
}, ["buses", "lines", "loads"])

TRANSPORT_SCHEMA = _obj({"travel_time_matrix_h": _opt_matrix, "period_h": _num, "kappa_per_h": _num},
                        ["travel_time_matrix_h"])

UNIT_SCHEMA = _obj({
    "name": {"type": "string"}, "capacity_mwh": _num, "power_slope_mw_per_mwh": _num, "power_intercept_mw": _num,
    "admissible_buses": {"type": "array", "items": _idx, "minItems": 1}, "initial_bus": _idx,
    "initial_soc_mwh": _num}, ["capacity_mwh", "power_slope_mw_per_mwh", "power_intercept_mw",
                               "admissible_buses", "initial_bus"])

FLEET_SCHEMA = _doc("fleet", {"units": {"type": "array", "items": UNIT_SCHEMA}, "transport": TRANSPORT_SCHEMA},
                    ["units"])

TRAJECTORIES_SCHEMA = _doc("trajectories", {"trajectories": {"type": "array", "items": {
    "type": "array", "items": _idx, "minItems": 1}}}, ["trajectories"])

CONFIG_SCHEMA = _obj({
    "network": {"type": "string"}, "fleet": {"type": "string"}, "trajectories": {"type": "string"},
    "solution": {"type": "string"}, "lmps": {"type": "string"}, "nodes": {"type": "string"},
    "out": {"type": "string"}, "algo": {"enum": ["rapid", "exact", "approx", "brute"]},
    "soc_step": {"type": "number", "exclusiveMinimum": 0}, "seed": {"type": "integer"},
    "tol_kkt": {"type": "number", "exclusiveMinimum": 0}, "tol_binding": {"type": "number", "exclusiveMinimum": 0},
    "rapid": {"type": "boolean"}, "vehicle": {"type": "string"}, "date": {"type": "string"},
    "verbose": {"type": "integer", "minimum": 0}}, [])


def check(document, schema, what="document"):
    try:
        jsonschema.validate(document, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DocumentError(f"{what}: {exc.message} at {where}") from None
    return document


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _none_to(x, default):
    return default if x is None else float(x)


def _array(a):
    """Nested lists with ``None`` for non-finite entries (JSON has no inf)."""
    if a is None:
        return None
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        return _finite_or_none(arr)
    return [_array(row) for row in arr]


def _from_array(v, fill=np.inf):
    if v is None:
        return None
    return np.array([[fill if x is None else x for x in row] for row in v], dtype=float) if v and isinstance(v[0], list) \
        else np.array([fill if x is None else x for x in v], dtype=float)


# --- network ---------------------------------------------------------------

def network_to_doc(net: PowerNetwork) -> dict:
    buses = []
    for i in range(net.n_buses):
        b = {"id": net.bus_ids[i], "cost_a": float(net.cost_a[i]), "cost_b": float(net.cost_b[i])}
        if np.isfinite(net.gen_max[i]):
            b["gen_max"] = float(net.gen_max[i])
        if np.isfinite(net.gen_min[i]):
            b["gen_min"] = float(net.gen_min[i])
        buses.append(b)
    lines = [{"from": ln.from_bus, "to": ln.to_bus, "susceptance": float(ln.susceptance),
              "limit": _finite_or_none(ln.limit)} for ln in net.lines]
    return {"schema_version": SCHEMA_VERSION, "kind": "network", "buses": buses, "lines": lines,
            "loads": _array(net.loads), "slack": int(net.slack)}


def network_from_doc(doc: dict) -> PowerNetwork:
    check(doc, NETWORK_SCHEMA, "network")
    buses = doc["buses"]
    n = len(buses)
    for k, ln in enumerate(doc["lines"]):
        if ln["from"] >= n or ln["to"] >= n:
            raise DocumentError(f"network: line {k} references a bus outside [0, {n})")
    loads = np.asarray(doc["loads"], dtype=float)
    if loads.ndim != 2 or loads.shape[1] != n:
        raise DocumentError(f"network: loads must be a T x {n} matrix")
    return PowerNetwork(
        cost_a=[b["cost_a"] for b in buses], cost_b=[b["cost_b"] for b in buses],
        lines=[Line(ln["from"], ln["to"], ln["susceptance"], _none_to(ln["limit"], np.inf)) for ln in doc["lines"]],
        loads=loads, slack=doc.get("slack", 0),
        gen_max=[_none_to(b.get("gen_max"), np.inf) for b in buses],
        gen_min=[_none_to(b.get("gen_min"), -np.inf) for b in buses],
        bus_ids=tuple(b.get("id", i + 1) for i, b in enumerate(buses)),
    )


# --- fleet -----------------------------------------------------------------

def transport_to_doc(tm: TransportModel) -> dict:
    return {"travel_time_matrix_h": _array(tm.travel_time), "period_h": float(tm.period), "kappa_per_h": float(tm.kappa)}


def transport_from_doc(doc: dict) -> TransportModel:
    return TransportModel(_from_array(doc["travel_time_matrix_h"]), doc.get("period_h", 1.0), doc.get("kappa_per_h", 0.0))


def unit_to_doc(u: MobileStorageUnit) -> dict:
    return {"name": u.name, "capacity_mwh": float(u.capacity), "power_slope_mw_per_mwh": float(u.power_slope),
            "power_intercept_mw": float(u.power_intercept), "admissible_buses": list(u.admissible_buses),
            "initial_bus": u.initial_bus, "initial_soc_mwh": float(u.initial_soc)}


def unit_from_doc(d: dict) -> MobileStorageUnit:
    return MobileStorageUnit(d["capacity_mwh"], d["power_slope_mw_per_mwh"], d["power_intercept_mw"],
                             tuple(d["admissible_buses"]), d["initial_bus"], d.get("initial_soc_mwh", 0.0),
                             d.get("name", ""))


def fleet_to_doc(fleet: Fleet) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "fleet", "units": [unit_to_doc(u) for u in fleet]}
    if fleet.transport is not None:
        doc["transport"] = transport_to_doc(fleet.transport)
    return doc


def fleet_from_doc(doc: dict) -> Fleet:
    check(doc, FLEET_SCHEMA, "fleet")
    units = tuple(unit_from_doc(d) for d in doc["units"])
    tm = transport_from_doc(doc["transport"]) if "transport" in doc else None
    return Fleet(units, tm)


def trajectories_to_doc(trajs) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": "trajectories",
            "trajectories": [[int(b) for b in tr] for tr in trajs]}


def trajectories_from_doc(doc: dict) -> list:
    check(doc, TRAJECTORIES_SCHEMA, "trajectories")
    return [tuple(tr) for tr in doc["trajectories"]]


# --- dispatch solutions ----------------------------------------------------

_SOLUTION_ARRAYS = ("g", "u", "soc", "gamma", "beta", "nu", "mu", "omega", "phi", "lmp", "flows", "operating_time")

SOLUTION_SCHEMA = _doc("dispatch_solution", {
    "network": {"type": "object"}, "fleet": {"type": "object"}, "trajectories": {"type": "object"},
    "rapid": {"type": "boolean"}, "reference": {"type": "string"}, "objective": _num,
    "degenerate": {"type": "boolean"},
    **{name: {"type": ["array", "null"]} for name in _SOLUTION_ARRAYS},
}, ["network", "fleet", "trajectories", "rapid", "objective", "lmp", "gamma", "beta", "u", "g"])


def solution_to_doc(sol) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "dispatch_solution",
           "network": network_to_doc(sol.network), "fleet": fleet_to_doc(sol.fleet),
           "trajectories": trajectories_to_doc(sol.trajectories), "rapid": bool(sol.rapid),
           "reference": sol.shift.reference, "objective": float(sol.objective), "degenerate": bool(sol.degenerate)}
    for name in _SOLUTION_ARRAYS:
        doc[name] = _array(getattr(sol, name))
    return doc


def solution_from_doc(doc: dict):
    """Rebuild a :class:`~mobistore.dispatch.DispatchSolution` (without the raw QP record)."""
    from .dispatch import DispatchSolution
    from .network import build_shift_factors

    check(doc, SOLUTION_SCHEMA, "dispatch solution")
    net = network_from_doc(doc["network"])
    fleet = fleet_from_doc(doc["fleet"])
    trajs = trajectories_from_doc(doc["trajectories"])
    K, T = len(fleet), net.horizon

    def arr(name, shape):
        v = doc.get(name)
        if v is None:
            return None
        a = np.asarray(_from_array(v, np.nan), dtype=float) if v and isinstance(v[0], list) else np.asarray(v, float)
        return a.reshape(shape)

    shift = build_shift_factors(net, doc.get("reference", "slack"))
    m2 = shift.H.shape[0]
    return DispatchSolution(
        network=net, fleet=fleet, trajectories=tuple(trajs), shift=shift,
        g=arr("g", (T, net.n_buses)), u=arr("u", (K, T)), soc=arr("soc", (K, T)), gamma=arr("gamma", (T,)),
        beta=arr("beta", (T, m2)), nu=arr("nu", (K, T)), mu=arr("mu", (K, T)), omega=arr("omega", (K, T)),
        phi=arr("phi", (K, T)), lmp=arr("lmp", (T, net.n_buses)), flows=arr("flows", (T, m2)),
        operating_time=arr("operating_time", (K, T)), objective=float(doc["objective"]), rapid=doc["rapid"],
        degenerate=bool(doc.get("degenerate", False)), qp=None,
    )


# --- generic documents and files --------------------------------------------

def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _array(obj) if obj.dtype.kind == "f" else obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite_or_none(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path, text: str):
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    atomic_write(path, dumps(doc))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: not valid JSON ({exc})") from None


def frame_to_csv(frame: pd.DataFrame) -> str:
    buf = _io.StringIO()
    frame.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def write_csv(path, frame: pd.DataFrame):
    atomic_write(path, frame_to_csv(frame))


def lmp_frame(prices, labels=None) -> pd.DataFrame:
    """Wide LMP table: one row per period, one column per bus."""
    lam = np.atleast_2d(np.asarray(prices, dtype=float))
    labels = labels or [f"bus_{i + 1}" for i in range(lam.shape[1])]
    frame = pd.DataFrame(lam, columns=[str(c) for c in labels])
    frame.insert(0, "period", np.arange(lam.shape[0]))
    return frame


def read_lmp_csv(path):
    """Read an LMP table in wide (``period,<bus>...``) or long (``timestamp,node,lmp_usd_per_mwh``) form.

    Returns ``(prices (T, n), bus labels)``; long tables keep the node order
    of first appearance.
    """
    frame = pd.read_csv(path)
    if {"timestamp", "node", "lmp_usd_per_mwh"} <= set(frame.columns):
        nodes = list(dict.fromkeys(frame["node"].astype(str)))
        frame["node"] = frame["node"].astype(str)
        if frame.duplicated(["timestamp", "node"]).any():
            raise DocumentError(f"{path}: duplicate (timestamp, node) rows")
        wide = frame.pivot(index="timestamp", columns="node", values="lmp_usd_per_mwh")[nodes]
        wide.index = pd.to_datetime(wide.index)
        wide = wide.sort_index()
        if wide.isna().any().any():
            raise DocumentError(f"{path}: some (timestamp, node) prices are missing")
        return wide.to_numpy(float), nodes
    if frame.columns[0] != "period":
        raise DocumentError(f"{path}: expected a 'period' column or timestamp,node,lmp_usd_per_mwh")
    if frame.isna().any().any():
        raise DocumentError(f"{path}: empty cells in LMP table")
    return frame.iloc[:, 1:].to_numpy(float), [str(c) for c in frame.columns[1:]]
