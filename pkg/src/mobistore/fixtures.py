"""Reference instances: the textbook examples plus seeded random generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Line, PowerNetwork
from .storage import Fleet, MobileStorageUnit, TransportModel

# Storage without a meaningful power limit (the rapid model ignores it anyway).
UNLIMITED = 1e6


def triangle_network(loads) -> PowerNetwork:
    """Three buses, identical lines of susceptance 1 and limit 0.5, cost g^2 everywhere.

    Lines are oriented 3->1, 2->1 and 3->2 (0-based: 2->0, 1->0, 2->1), so the
    forward row of each line is the flow direction named first.
    """
    lines = [Line(2, 0, 1.0, 0.5), Line(1, 0, 1.0, 0.5), Line(2, 1, 1.0, 0.5)]
    return PowerNetwork(cost_a=[1.0, 1.0, 1.0], cost_b=[0.0, 0.0, 0.0], lines=lines, loads=loads)


def _example_fleet():
    stationary = MobileStorageUnit(0.5, 0.0, UNLIMITED, (0,), 0, 0.0, "stationary@1")
    mobile = MobileStorageUnit(0.5, 0.0, UNLIMITED, (0, 2), 2, 0.0, "mobile 3->1")
    return Fleet((stationary, mobile))


@dataclass(frozen=True)
class Instance:
    network: PowerNetwork
    fleet: Fleet
    trajectories: tuple
    description: str = ""


def example2() -> Instance:
    """Loop network, demand only at bus 1 (5 then 10); mobile unit goes 3 -> 1."""
    net = triangle_network([[5.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    return Instance(net, _example_fleet(), ((0, 0), (2, 0)), "mobile storage beats storage plus wire")


def example3() -> Instance:
    """As example 2 with an extra 5 units of demand at bus 2 in period 1."""
    net = triangle_network([[5.0, 5.0, 0.0], [10.0, 0.0, 0.0]])
    return Instance(net, _example_fleet(), ((0, 0), (2, 0)), "mobile storage worth less than storage plus wire")


def example1() -> Instance:
    """Two buses, one line of limit 0.5, demand at bus 2 of 5 then 10.

    Prices come out as 2 and 9 in period 1 and 18 at bus 2 in period 2, so
    the price at bus 2 rises over time and exceeds the bus-1 price.  A
    mobile unit moves 1 -> 2.
    """
    net = PowerNetwork(cost_a=[1.0, 1.0], cost_b=[0.0, 0.0], lines=[Line(0, 1, 1.0, 0.5)],
                       loads=[[0.0, 5.0], [0.0, 10.0]])
    fleet = Fleet((MobileStorageUnit(0.5, 0.0, UNLIMITED, (0, 1), 0, 0.0, "mobile 1->2"),))
    return Instance(net, fleet, ((0, 1),), "mobile storage equals storage plus wire")


def random_network(rng: np.random.Generator, n: int, T: int, *, congested=True) -> PowerNetwork:
    """Connected network: a random spanning tree plus at most one extra line."""
    lines = []
    for b in range(1, n):
        lines.append((int(rng.integers(b)), b))
    if n >= 3 and rng.random() < 0.5:
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        if (a, b) not in lines:
            lines.append((a, b))
    lim_hi = 2.0 if congested else 1e3
    objs = [Line(a, b, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, lim_hi))) for a, b in lines]
    a = rng.uniform(0.5, 2.0, n)
    bcost = rng.uniform(0.0, 10.0, n)
    loads = rng.uniform(0.0, 4.0, (T, n))
    return PowerNetwork(a, bcost, objs, loads)


def random_dispatch_instance(seed: int, n: int = 3, T: int = 4, *, rapid=False) -> Instance:
    """Random network with one mobile unit on a random path and one stationary unit."""
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, T)
    start = int(rng.integers(n))
    traj = [start]
    for _ in range(T - 1):
        traj.append(int(rng.integers(n)) if rng.random() < 0.5 else traj[-1])
    D = rng.uniform(0.0, 0.6, (n, n))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0.0)
    slope = UNLIMITED if rapid else float(rng.uniform(0.3, 1.2))
    intercept = 0.0 if not rapid else 0.0
    mobile = MobileStorageUnit(float(rng.uniform(0.2, 1.0)), slope, intercept, tuple(range(n)), start, 0.0, "mobile")
    sbus = int(rng.integers(n))
    stationary = MobileStorageUnit(float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.3, 1.2)) if not rapid else UNLIMITED,
                                   0.0, (sbus,), sbus, 0.0, "stationary")
    fleet = Fleet((mobile, stationary), TransportModel(D, 1.0, 0.0))
    return Instance(net, fleet, (tuple(traj), (sbus,) * T), f"random dispatch seed {seed}")


@dataclass(frozen=True)
class PriceInstance:
    unit: MobileStorageUnit
    prices: np.ndarray
    transport: TransportModel


def random_price_instance(seed: int, n: int = 3, T: int = 4, *, low=-50.0, high=50.0,
                          slope=None, capacity=1.0, max_travel=0.8) -> PriceInstance:
    """Random price field, symmetric travel times and a unit with ``rating = slope * capacity``."""
    rng = np.random.default_rng(seed)
    prices = np.round(rng.uniform(low, high, (T, n)), 2)
    D = rng.uniform(0.0, max_travel, (n, n))
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0.0)
    tm = TransportModel(D, 1.0, float(rng.uniform(0.0, 3.0)))
    s = float(rng.uniform(0.3, 1.5)) if slope is None else slope
    unit = MobileStorageUnit(capacity, s, 0.0, tuple(range(n)), int(rng.integers(n)), 0.0)
    return PriceInstance(unit, prices, tm)
