"""Mobile storage units, trajectories and the transport model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class StorageError(ValueError):
    pass


@dataclass(frozen=True)
class MobileStorageUnit:
    """A storage unit with an affine power rating ``u_max(cap) = slope*cap + intercept``.

    Energies are MWh, powers MW, bus references 0-based indices.  A unit
    with a single admissible bus is stationary.
    """

    capacity: float
    power_slope: float
    power_intercept: float
    admissible_buses: tuple
    initial_bus: int
    initial_soc: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "admissible_buses", tuple(sorted(int(b) for b in self.admissible_buses)))
        object.__setattr__(self, "initial_bus", int(self.initial_bus))
        if not 0.0 <= self.initial_soc <= self.capacity:
            raise StorageError(f"initial SoC {self.initial_soc} outside [0, {self.capacity}]")
        if not self.power_rating() > 0:
            raise StorageError("power rating at nominal capacity must be positive")
        if self.initial_bus not in self.admissible_buses:
            raise StorageError(f"initial bus {self.initial_bus} is not admissible")

    def power_rating(self, capacity=None) -> float:
        cap = self.capacity if capacity is None else capacity
        return self.power_slope * cap + self.power_intercept

    @property
    def rating_derivative(self) -> float:
        return self.power_slope

    @property
    def mobile(self) -> bool:
        return len(self.admissible_buses) > 1

    def with_capacity(self, capacity: float) -> "MobileStorageUnit":
        from dataclasses import replace

        return replace(self, capacity=capacity, initial_soc=min(self.initial_soc, capacity))

    def validate_trajectory(self, trajectory: Sequence[int], n_buses=None):
        traj = tuple(int(b) for b in trajectory)
        if not traj:
            raise StorageError("empty trajectory")
        if n_buses is not None and any(not 0 <= b < n_buses for b in traj):
            raise StorageError(f"trajectory {traj} references a bus outside [0, {n_buses})")
        bad = [b for b in traj if b not in self.admissible_buses]
        if bad:
            raise StorageError(f"trajectory visits non-admissible buses {sorted(set(bad))}")
        if traj[0] != self.initial_bus:
            raise StorageError(f"trajectory starts at {traj[0]}, unit starts at {self.initial_bus}")
        return traj


def stationary_unit(bus: int, capacity: float, power_slope=0.0, power_intercept=1e6, name="") -> MobileStorageUnit:
    return MobileStorageUnit(capacity, power_slope, power_intercept, (bus,), bus, 0.0, name)


@dataclass(frozen=True)
class TransportModel:
    """Travel times ``D`` (hours), period length and relocation cost per travel hour.

    ``inf`` entries mark moves that cannot be completed within one period;
    they are excluded from relocation graphs.
    """

    travel_time: np.ndarray
    period: float = 1.0
    kappa: float = 0.0

    def __post_init__(self):
        D = np.array(self.travel_time, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise StorageError("travel-time matrix must be square")
        if np.any(np.diag(D) != 0):
            raise StorageError("travel-time matrix must have a zero diagonal")
        finite = np.isfinite(D)
        if np.any(D[finite] < 0):
            raise StorageError("travel times must be non-negative")
        if np.any(D[finite] > self.period + 1e-12):
            raise StorageError("travel times must not exceed the period length")
        if np.any(np.isnan(D)):
            raise StorageError("travel-time matrix contains NaN")
        if not self.period > 0:
            raise StorageError("period length must be positive")
        if self.kappa < 0:
            raise StorageError("relocation cost must be non-negative")
        D.flags.writeable = False
        object.__setattr__(self, "travel_time", D)

    @property
    def n_buses(self) -> int:
        return self.travel_time.shape[0]

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.travel_time)

    @classmethod
    def static(cls, n_buses: int, period=1.0, kappa=0.0) -> "TransportModel":
        return cls(np.zeros((n_buses, n_buses)), period, kappa)


def _next_stops(trajectory):
    traj = np.asarray(trajectory, dtype=int)
    return traj, np.append(traj[1:], traj[-1])


def snapshot_matrices(trajectories: Sequence[Sequence[int]], n_buses: int) -> np.ndarray:
    """Location matrices ``E(t)`` stacked as an array of shape (T, n, K)."""
    trajs = [np.asarray(tr, dtype=int) for tr in trajectories]
    if not trajs:
        raise StorageError("need at least one trajectory to infer the horizon")
    T = trajs[0].size
    if any(tr.size != T for tr in trajs):
        raise StorageError("trajectories have different lengths")
    for tr in trajs:
        if np.any(tr < 0) or np.any(tr >= n_buses):
            raise StorageError(f"bus index out of range [0, {n_buses})")
    E = np.zeros((T, n_buses, len(trajs)))
    for k, tr in enumerate(trajs):
        E[np.arange(T), tr, k] = 1.0
    return E


def trajectories_from_snapshots(E: np.ndarray) -> list:
    E = np.asarray(E)
    if not np.all(E.sum(axis=1) == 1) or not np.all((E == 0) | (E == 1)):
        raise StorageError("each column of E(t) must be an elementary vector")
    return [tuple(int(b) for b in np.argmax(E[:, :, k], axis=1)) for k in range(E.shape[2])]


def travel_split(trajectory: Sequence[int], transport: TransportModel):
    """Per-period travel time and remaining operating time ``(moving, operating)``.

    The unit stays put after the horizon, so the last period has no travel.
    """
    cur, nxt = _next_stops(trajectory)
    moving = transport.travel_time[cur, nxt]
    if not np.all(np.isfinite(moving)):
        raise StorageError("trajectory uses a move longer than one period")
    operating = transport.period - moving
    return moving, np.clip(operating, 0.0, transport.period)


def relocation_cost(trajectories: Sequence[Sequence[int]], transport: TransportModel):
    """Total relocation cost and the per-unit breakdown, in dollars."""
    per_unit = []
    for tr in trajectories:
        cur, nxt = _next_stops(tr)
        per_unit.append(float(transport.kappa * transport.travel_time[cur, nxt].sum()))
    return float(sum(per_unit)), per_unit


@dataclass(frozen=True)
class Fleet:
    """Storage units together with the transport model they share."""

    units: tuple = ()
    transport: Optional[TransportModel] = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __getitem__(self, k):
        return self.units[k]

    def transport_for(self, n_buses: int) -> TransportModel:
        if self.transport is None:
            return TransportModel.static(n_buses)
        if self.transport.n_buses != n_buses:
            raise StorageError(f"travel-time matrix is {self.transport.n_buses}x{self.transport.n_buses}, network has {n_buses} buses")
        return self.transport

    def with_capacities(self, capacities) -> "Fleet":
        return Fleet(tuple(u.with_capacity(float(c)) for u, c in zip(self.units, capacities)), self.transport)

    def validate_trajectories(self, trajectories, n_buses, horizon=None):
        if len(trajectories) != len(self.units):
            raise StorageError(f"{len(trajectories)} trajectories for {len(self.units)} units")
        out = [u.validate_trajectory(tr, n_buses) for u, tr in zip(self.units, trajectories)]
        if horizon is not None and any(len(tr) != horizon for tr in out):
            raise StorageError(f"trajectories must have length {horizon}")
        tm = self.transport_for(n_buses)
        for tr in out:
            cur, nxt = _next_stops(tr)
            if not np.all(np.isfinite(tm.travel_time[cur, nxt])):
                raise StorageError(f"trajectory {tr} uses a move longer than one period")
        return out
