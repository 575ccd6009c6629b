"""Arbitrage-driven relocation of a single vehicle over one day of hourly LMPs.

Internal units are MWh, MW, hours and dollars.  Vehicle data arrive in
kWh, kW, mph and cents per mile and are converted once, in
:func:`vehicle_unit` and :func:`travel_matrices`.
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .relocation import RelocationResult, relocate_approx
from .storage import MobileStorageUnit, TransportModel

EARTH_RADIUS_MI = 3958.8
HOURS_PER_DAY = 24
PRICE_COLUMNS = ("timestamp", "node", "lmp_usd_per_mwh")
NODE_COLUMNS = ("node", "lat", "lon")


class CaseStudyError(ValueError):
    pass


@dataclass(frozen=True)
class LmpDataset:
    """Hourly LMPs (rows: hours, columns: nodes) plus node coordinates."""

    nodes: tuple
    lat: np.ndarray
    lon: np.ndarray
    timestamps: pd.DatetimeIndex
    prices: np.ndarray  # (hours, nodes), $/MWh
    timezone: str = "UTC"

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise CaseStudyError("need at least two nodes")
        lat = np.asarray(self.lat, dtype=float)
        lon = np.asarray(self.lon, dtype=float)
        if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180) or not np.all(np.isfinite(lat + lon)):
            raise CaseStudyError("coordinates outside valid latitude/longitude ranges")
        prices = np.asarray(self.prices, dtype=float)
        if prices.shape != (len(self.timestamps), len(self.nodes)):
            raise CaseStudyError("price matrix shape does not match timestamps x nodes")
        if not np.all(np.isfinite(prices)):
            raise CaseStudyError("prices must be finite")
        for name, arr in (("lat", lat), ("lon", lon), ("prices", prices)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))

    def index(self, node: str) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise CaseStudyError(f"unknown node {node!r}") from None

    @property
    def dates(self) -> list:
        return sorted(set(self.timestamps.date))

    def day(self, date) -> tuple:
        """Timestamps and the (24, n) price block of one calendar day."""
        day = _as_date(date)
        mask = self.timestamps.date == day
        if not mask.any():
            raise CaseStudyError(f"date {day} outside the dataset range {self.dates[0]}..{self.dates[-1]}")
        if mask.sum() != HOURS_PER_DAY:
            raise CaseStudyError(f"date {day} has {int(mask.sum())} hours, expected {HOURS_PER_DAY}")
        return self.timestamps[mask], self.prices[mask]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.prices, index=self.timestamps, columns=list(self.nodes))
        frame.index.name = "timestamp"
        return frame.reset_index().melt(id_vars="timestamp", var_name="node", value_name="lmp_usd_per_mwh")


def _as_date(date) -> _dt.date:
    if isinstance(date, _dt.datetime):
        return date.date()
    if isinstance(date, _dt.date):
        return date
    return _dt.date.fromisoformat(str(date))


def _require_columns(frame, columns, what):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise CaseStudyError(f"{what} is missing columns {missing}")


def ingest_lmps(csv_path, nodes_path, timezone: Optional[str] = None) -> LmpDataset:
    """Load and validate a long-format LMP CSV and its node metadata.

    Raises :class:`CaseStudyError` for gaps in hourly coverage (naming the
    missing hours), duplicated ``(timestamp, node)`` rows and nodes missing
    from either file.
    """
    prices = pd.read_csv(csv_path, dtype={"node": str})
    meta = pd.read_csv(nodes_path, dtype={"node": str})
    _require_columns(prices, PRICE_COLUMNS, "LMP file")
    _require_columns(meta, NODE_COLUMNS, "node metadata")
    return dataset_from_frames(prices, meta, timezone)


def dataset_from_frames(prices: pd.DataFrame, meta: pd.DataFrame, timezone: Optional[str] = None) -> LmpDataset:
    prices = prices.copy()
    try:
        prices["timestamp"] = pd.to_datetime(prices["timestamp"])
    except (ValueError, TypeError) as exc:
        raise CaseStudyError(f"unparseable timestamp: {exc}") from None
    ts = prices["timestamp"]
    tz = str(ts.dt.tz) if ts.dt.tz is not None else (timezone or "UTC")
    if ts.dt.tz is None and timezone:
        prices["timestamp"] = ts.dt.tz_localize(timezone)

    if meta["node"].duplicated().any():
        raise CaseStudyError(f"duplicate nodes in metadata: {sorted(meta.loc[meta['node'].duplicated(), 'node'])}")
    dup = prices.duplicated(subset=["timestamp", "node"], keep=False)
    if dup.any():
        rows = prices.loc[dup, ["timestamp", "node"]].drop_duplicates()
        listed = ", ".join(f"{r.node}@{r.timestamp.isoformat()}" for r in rows.itertuples())
        raise CaseStudyError(f"duplicate (timestamp, node) rows: {listed}")
    unknown = sorted(set(prices["node"]) - set(meta["node"]))
    if unknown:
        raise CaseStudyError(f"nodes in prices but not in metadata: {unknown}")
    unpriced = sorted(set(meta["node"]) - set(prices["node"]))
    if unpriced:
        raise CaseStudyError(f"nodes in metadata without prices: {unpriced}")

    nodes = list(meta["node"])
    wide = prices.pivot(index="timestamp", columns="node", values="lmp_usd_per_mwh")[nodes].sort_index()
    full = pd.date_range(wide.index[0], wide.index[-1], freq="h")
    missing_rows = full.difference(wide.index)
    holes = wide.reindex(full).isna()
    if len(missing_rows) or holes.any().any():
        gaps = sorted(set(missing_rows) | set(holes.index[holes.any(axis=1)]))
        raise CaseStudyError("missing hours: " + ", ".join(t.isoformat() for t in gaps))
    if not wide.index.equals(full):
        raise CaseStudyError("timestamps must fall on whole hours")
    return LmpDataset(tuple(nodes), meta["lat"].to_numpy(float), meta["lon"].to_numpy(float),
                      pd.DatetimeIndex(wide.index), wide.to_numpy(float), tz)


@dataclass(frozen=True)
class VehicleProfile:
    name: str
    capacity_kwh: float
    power_kw: float
    speed_mph: float = 50.0
    cost_cents_per_mile: float = 4.0
    initial_soc_fraction: float = 0.0
    initial_node: Optional[str] = None

    def __post_init__(self):
        if not (self.capacity_kwh > 0 and self.power_kw > 0 and self.speed_mph > 0):
            raise CaseStudyError("capacity, power and speed must be positive")
        if self.cost_cents_per_mile < 0:
            raise CaseStudyError("travel cost must be non-negative")
        if not 0.0 <= self.initial_soc_fraction <= 1.0:
            raise CaseStudyError(f"initial SoC fraction {self.initial_soc_fraction} outside [0, 1]")

    def with_power(self, power_kw: float) -> "VehicleProfile":
        return replace(self, power_kw=power_kw)

    @property
    def kappa_usd_per_h(self) -> float:
        """Travel cost per driving hour: mph times dollars per mile."""
        return self.speed_mph * self.cost_cents_per_mile / 100.0


MODEL_3 = VehicleProfile("Tesla Model 3", 50.0, 11.0, 50.0, 4.0, 0.4)
MODEL_3_FAST = MODEL_3.with_power(100.0)
SEMI = VehicleProfile("Tesla Semi", 500.0, 100.0, 50.0, 16.0, 0.4)
SEMI_FAST = SEMI.with_power(750.0)


def haversine_miles(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_MI * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def travel_matrices(dataset: LmpDataset, vehicle: VehicleProfile, period_h: float = 1.0):
    """Straight-line travel times (hours) and per-move costs (dollars).

    Pairs that cannot be reached within one period get ``inf`` in both
    matrices and are excluded from relocation.
    """
    lat, lon = dataset.lat, dataset.lon
    dist = haversine_miles(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(dist, 0.0)
    D = dist / vehicle.speed_mph
    cost = dist * vehicle.cost_cents_per_mile / 100.0
    far = D > period_h * (1.0 + 1e-9)  # a move of exactly one period is allowed
    return np.where(far, np.inf, D), np.where(far, np.inf, cost)


def unreachable_pairs(dataset: LmpDataset, vehicle: VehicleProfile, period_h: float = 1.0) -> list:
    D, _ = travel_matrices(dataset, vehicle, period_h)
    return [(dataset.nodes[i], dataset.nodes[j]) for i, j in zip(*np.nonzero(~np.isfinite(D)))]


def vehicle_unit(dataset: LmpDataset, vehicle: VehicleProfile, *, stationary_at: Optional[str] = None,
                 start: Optional[str] = None) -> MobileStorageUnit:
    """Storage unit equivalent of a vehicle (constant power, so zero rating slope)."""
    node = start or stationary_at or vehicle.initial_node or dataset.nodes[0]
    i0 = dataset.index(node)
    admissible = (dataset.index(stationary_at),) if stationary_at else tuple(range(len(dataset.nodes)))
    cap = vehicle.capacity_kwh / 1000.0
    return MobileStorageUnit(cap, 0.0, vehicle.power_kw / 1000.0, admissible, i0,
                             vehicle.initial_soc_fraction * cap, vehicle.name)


@dataclass(frozen=True)
class DwellRow:
    node: str
    start: pd.Timestamp
    end: pd.Timestamp  # exclusive
    soc_change_mwh: float
    value_usd: float
    travel_usd: float  # cost of the move leaving this node


@dataclass(frozen=True)
class TraceRow:
    timestamp: pd.Timestamp
    node: str
    soc_mwh: float  # at the end of the hour
    charge_mwh: float
    travel_h: float  # driving time spent leaving during this hour


@dataclass(frozen=True)
class CaseStudyReport:
    vehicle: VehicleProfile
    date: _dt.date
    soc_step_mwh: float
    table: tuple
    trace: tuple
    gross_usd: float
    travel_usd: float
    net_usd: float
    bound_usd: float
    relocation: RelocationResult = field(repr=False)

    @property
    def trajectory(self) -> tuple:
        return self.relocation.trajectory

    def table_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "node": r.node, "start": r.start.isoformat(), "end": r.end.isoformat(),
            "soc_change_mwh": r.soc_change_mwh, "value_usd": r.value_usd, "travel_usd": r.travel_usd,
        } for r in self.table])

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "timestamp": r.timestamp.isoformat(), "node": r.node, "soc_mwh": r.soc_mwh,
            "charge_mwh": r.charge_mwh, "travel_h": r.travel_h,
        } for r in self.trace])

    def summary(self) -> dict:
        return {
            "vehicle": self.vehicle.name,
            "date": self.date.isoformat(),
            "soc_step_mwh": self.soc_step_mwh,
            "gross_usd": self.gross_usd,
            "travel_usd": self.travel_usd,
            "net_usd": self.net_usd,
            "discretization_bound_usd": self.bound_usd,
            "trajectory": [r.node for r in self.trace],
        }


def run_case_study(dataset: LmpDataset, vehicle: VehicleProfile, date, h: Optional[float] = None, *,
                   stationary_at: Optional[str] = None, start: Optional[str] = None) -> CaseStudyReport:
    """Optimize one vehicle-day with the SoC-discretized relocation DP.

    ``h`` is the SoC step in MWh (default: 1/100 of the capacity).
    ``stationary_at`` pins the vehicle to one node for the stationary
    comparison.
    """
    if vehicle.initial_soc_fraction > 1.0:
        raise CaseStudyError("initial SoC exceeds capacity")
    stamps, lam = dataset.day(date)
    unit = vehicle_unit(dataset, vehicle, stationary_at=stationary_at, start=start)
    D, _ = travel_matrices(dataset, vehicle)
    transport = TransportModel(D, 1.0, vehicle.kappa_usd_per_h)
    step = unit.capacity / 100.0 if h is None else float(h)
    res = relocate_approx(unit, lam, transport, step)
    return _report(dataset, vehicle, _as_date(date), stamps, lam, transport, res)


def _report(dataset, vehicle, day, stamps, lam, transport, res: RelocationResult) -> CaseStudyReport:
    traj = list(res.trajectory)
    T = len(traj)
    u = np.asarray(res.schedule, dtype=float)
    soc = res.diagnostics["initial_soc"] + np.cumsum(u)
    nxt = traj[1:] + traj[-1:]
    D = transport.travel_time
    moving = np.array([D[a, b] for a, b in zip(traj, nxt)])
    move_cost = transport.kappa * moving
    earned = -lam[np.arange(T), traj] * u

    trace = tuple(TraceRow(stamps[t], dataset.nodes[traj[t]], float(soc[t]), float(u[t]), float(moving[t]))
                  for t in range(T))
    rows = []
    start = 0
    for t in range(1, T + 1):
        if t == T or traj[t] != traj[start]:
            seg = slice(start, t)
            end = stamps[t] if t < T else stamps[T - 1] + pd.Timedelta(hours=1)
            rows.append(DwellRow(dataset.nodes[traj[start]], stamps[start], end, float(u[seg].sum()),
                                 float(earned[seg].sum()), float(move_cost[seg].sum())))
            start = t
    gross = float(sum(r.value_usd for r in rows))
    travel = float(sum(r.travel_usd for r in rows))
    return CaseStudyReport(vehicle, day, float(res.soc_step), tuple(rows), trace, gross, travel, gross - travel,
                           float(res.bound), res)


def stationary_comparison(dataset: LmpDataset, vehicle: VehicleProfile, date, h: Optional[float] = None) -> dict:
    """Net profit of the mobile vehicle and of a battery pinned at each node."""
    out = {"mobile": run_case_study(dataset, vehicle, date, h).net_usd}
    for node in dataset.nodes:
        out[node] = run_case_study(dataset, vehicle, date, h, stationary_at=node).net_usd
    return out


def lmp_spread(dataset: LmpDataset, date) -> pd.DataFrame:
    """Per-hour min, quartiles and max across nodes (linear interpolation)."""
    stamps, lam = dataset.day(date)
    q = np.quantile(lam, [0.0, 0.25, 0.5, 0.75, 1.0], axis=1, method="linear")
    return pd.DataFrame({"timestamp": [s.isoformat() for s in stamps], "min": q[0], "q1": q[1],
                         "median": q[2], "q3": q[3], "max": q[4]})


# ---------------------------------------------------------------------------
# Shipped synthetic fixtures

FIXTURES = ("synthetic3", "synthetic2")


def synthetic_frames(name: str = "synthetic3") -> tuple:
    """Deterministic price and node tables behind the shipped fixtures.

    Nodes sit on one meridian 25 miles apart, so at 50 mph every move takes
    half an hour (a full hour for the 50-mile pair).
    """
    step = float(np.degrees(25.0 / EARTH_RADIUS_MI))
    stamps = pd.date_range("2021-05-04", periods=HOURS_PER_DAY, freq="h")
    hours = np.arange(HOURS_PER_DAY)
    if name == "synthetic3":
        names = ["ALPHA", "BRAVO", "CHARLIE"]
        rng = np.random.default_rng(20210504)
        alpha = np.where((hours < 6) | (hours >= 22), 18.0, 31.0)
        bravo = 34.0 + 48.0 * np.exp(-0.5 * ((hours - 12) / 1.6) ** 2)
        charlie = 27.0 + 95.0 * np.exp(-0.5 * ((hours - 19) / 1.3) ** 2)
        lam = np.stack([alpha, bravo, charlie], axis=1) + rng.normal(0.0, 2.0, (HOURS_PER_DAY, 3))
        lam = np.round(lam, 2)
    elif name == "synthetic2":
        names = ["A", "B"]
        lam = np.zeros((HOURS_PER_DAY, 2))
        lam[18, 1] = 100.0
    else:
        raise CaseStudyError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    meta = pd.DataFrame({"node": names, "lat": [39.0 + k * step for k in range(len(names))],
                         "lon": [-77.0] * len(names)})
    prices = pd.DataFrame({"timestamp": np.repeat([s.isoformat() for s in stamps], len(names)),
                           "node": names * HOURS_PER_DAY, "lmp_usd_per_mwh": lam.ravel()})
    return prices, meta


def fixture_paths(name: str = "synthetic3") -> tuple:
    if name not in FIXTURES:
        raise CaseStudyError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    base = resources.files("mobistore") / "data"
    return Path(str(base / f"{name}_lmps.csv")), Path(str(base / f"{name}_nodes.csv"))


def load_fixture(name: str = "synthetic3") -> LmpDataset:
    prices, nodes = fixture_paths(name)
    return ingest_lmps(prices, nodes)
