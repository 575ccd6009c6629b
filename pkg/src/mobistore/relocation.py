"""Trajectory optimization for a single storage unit facing a fixed price field.

``prices`` is always a (T, n) matrix of LMPs computed with zero storage
capacity, so units decouple and can be routed one at a time.  Objectives
are profits: arbitrage revenue ``-sum(price * u)`` minus relocation cost.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import TimeExpandedGraph, shortest_path
from .kernels import backward_min_plus, max_workers, soc_edge_weights
from .marginal import BindingPattern, binding_pattern, positive_increments, solve_price_arbitrage
from .qp import DEFAULT_TOLERANCES, Tolerances
from .storage import MobileStorageUnit, TransportModel, relocation_cost, travel_split

MAX_EXACT_HORIZON = 16
BRUTE_FORCE_LIMIT = 10 ** 6


class RelocationError(RuntimeError):
    pass


class RelocationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RelocationResult:
    trajectory: tuple
    objective: float  # revenue - travel cost, dollars
    algorithm: str
    travel_cost: float
    revenue: float
    schedule: Optional[np.ndarray] = None
    pattern: Optional[BindingPattern] = None
    bound: Optional[float] = None
    soc_step: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def soc(self) -> Optional[np.ndarray]:
        if self.schedule is None:
            return None
        return self.diagnostics.get("initial_soc", 0.0) + np.cumsum(self.schedule)


def _prepare(unit: MobileStorageUnit, prices, transport: TransportModel):
    lam = np.atleast_2d(np.asarray(prices, dtype=float))
    T, n = lam.shape
    if transport.n_buses != n:
        raise ValueError(f"price matrix has {n} buses, travel-time matrix has {transport.n_buses}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("prices must be finite")
    adm = np.zeros(n, dtype=bool)
    idx = [b for b in unit.admissible_buses if 0 <= b < n]
    if not idx:
        raise RelocationError("unit has no admissible bus in this network")
    adm[idx] = True
    if not adm[unit.initial_bus]:
        raise RelocationError("initial bus is outside the network")
    move_ok = adm[:, None] & adm[None, :] & transport.reachable
    return lam, T, n, adm, move_ok


def _move_cost(transport, move_ok):
    """Travel cost of every allowed move, ``inf`` for forbidden ones."""
    return np.where(move_ok, transport.kappa * np.where(move_ok, transport.travel_time, 0.0), np.inf)


def _travel(trajectory, transport):
    return relocation_cost([trajectory], transport)[0]


def rapid_schedule(unit: MobileStorageUnit, path_prices) -> np.ndarray:
    """Optimal rapid schedule: full whenever the next price is strictly higher, else empty."""
    inc = np.append(path_prices[1:], 0.0) - path_prices
    soc = np.where(inc > 0, unit.capacity, 0.0)
    return np.diff(np.concatenate([[unit.initial_soc], soc]))


def rapid_value(unit: MobileStorageUnit, path_prices) -> float:
    """Rapid arbitrage revenue along a path: capacity times the increment sum plus the initial charge's worth."""
    p = np.asarray(path_prices, dtype=float)
    return float(unit.capacity * positive_increments(p).sum() + unit.initial_soc * p[0])


def relocate_rapid(unit: MobileStorageUnit, prices, transport: TransportModel) -> RelocationResult:
    """Best path for a unit without power limits (shortest path over T layers of buses)."""
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    cap = unit.capacity
    C = _move_cost(transport, move_ok)
    W = np.full((max(T - 1, 0), n, n), np.inf)
    for t in range(T - 1):
        gain = np.maximum(lam[t + 1][None, :] - lam[t][:, None], 0.0)
        W[t] = C - cap * gain
    terminal = np.where(adm, -cap * np.maximum(-lam[T - 1], 0.0), np.inf)
    res = shortest_path(TimeExpandedGraph(W, terminal, unit.initial_bus))
    traj = res.nodes
    path_prices = lam[np.arange(T), traj]
    u = rapid_schedule(unit, path_prices)
    travel = _travel(traj, transport)
    revenue = float(-(path_prices @ u))
    return RelocationResult(traj, revenue - travel, "rapid", travel, revenue, u,
                            diagnostics={"path_weight": res.cost, "initial_soc": unit.initial_soc})


# ---------------------------------------------------------------------------
# Binding-pattern enumeration

def _power_weights(lam_t, dest_price, unit, transport, move_ok):
    """Per-edge cost of a power-bound period: travel minus the power-limited value."""
    D = transport.travel_time
    op = np.where(move_ok, transport.period - D, 0.0)
    gain = unit.capacity * unit.rating_derivative * op * np.abs(dest_price - lam_t)[:, None]
    return _move_cost(transport, move_ok) - gain


def solve_sp_p(i: int, j: int, t_from: int, t_to: int, prices, unit: MobileStorageUnit,
               transport: TransportModel):
    """Cheapest route ``i@t_from -> ... -> j@t_to`` through power-bound periods in between.

    Returns ``(cost, intermediate buses)``.
    """
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    costs, paths = _sp_p_all(lam, t_from, t_to, j, unit, transport, move_ok)
    return float(costs[i]), paths[i]


def _sp_p_all(lam, t_from, t_to, j, unit, transport, move_ok):
    """SP-P costs to destination ``j`` from every source bus, with the routes."""
    n = lam.shape[1]
    mids = list(range(t_from + 1, t_to))
    if not mids:
        raise ValueError("SP-P needs at least one intermediate period")
    W = np.full((len(mids), n, n), np.inf)
    W[0] = _move_cost(transport, move_ok)
    dest = lam[t_to, j]
    for s in range(len(mids) - 1):
        W[s + 1] = _power_weights(lam[mids[s]], dest, unit, transport, move_ok)
    terminal = _power_weights(lam[mids[-1]], dest, unit, transport, move_ok)[:, j]
    cost, choice = backward_min_plus(W, terminal, 1e-12)
    paths = []
    for i in range(n):
        route, node = [], i
        if np.isfinite(cost[0, i]):
            for layer in range(len(mids)):
                node = int(choice[layer, node])
                route.append(node)
        paths.append(tuple(route))
    return cost[0], paths


def _prefix_all(lam, t_first, i0, unit, transport, move_ok):
    """Route from ``i0@0`` through power-bound periods ``0..t_first-1`` to each bus at ``t_first``."""
    n = lam.shape[1]
    costs = np.full(n, np.inf)
    routes = [()] * n
    for j in range(n):
        dest = lam[t_first, j]
        W = np.full((t_first - 1, n, n), np.inf)
        for s in range(t_first - 1):
            W[s] = _power_weights(lam[s], dest, unit, transport, move_ok)
        terminal = _power_weights(lam[t_first - 1], dest, unit, transport, move_ok)[:, j]
        cost, choice = backward_min_plus(W, terminal, 1e-12)
        if np.isfinite(cost[0, i0]):
            costs[j] = cost[0, i0]
            route, node = [i0], i0
            for layer in range(t_first - 1):
                node = int(choice[layer, node])
                route.append(node)
            routes[j] = tuple(route)
    return costs, routes


@dataclass(frozen=True)
class PatternCandidate:
    pattern: BindingPattern
    trajectory: tuple
    formula_value: float  # minus the SP-E path weight


def solve_sp_e(pattern: BindingPattern, prices, unit: MobileStorageUnit,
               transport: TransportModel) -> PatternCandidate:
    """Best trajectory under an assumed binding pattern (last period energy-bound)."""
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    if pattern.horizon != T or not pattern.closes_at_end:
        raise ValueError("pattern must cover the horizon and end energy-bound")
    te = list(pattern.energy)
    cap = unit.capacity
    C = _move_cost(transport, move_ok)
    i0 = unit.initial_bus
    layers = []
    segments = []
    if te[0] > 0:
        pre_cost, pre_routes = _prefix_all(lam, te[0], i0, unit, transport, move_ok)
        first = np.full((n, n), np.inf)
        first[i0] = pre_cost
        layers.append(first)
    for r in range(len(te) - 1):
        a, b = te[r], te[r + 1]
        gain = cap * np.maximum(lam[b][None, :] - lam[a][:, None], 0.0)
        if b == a + 1:
            W = C - gain
            segments.append(None)
        else:
            Jp = np.full((n, n), np.inf)
            routes = {}
            for j in range(n):
                if not adm[j]:
                    continue
                c, p = _sp_p_all(lam, a, b, j, unit, transport, move_ok)
                Jp[:, j] = c
                for i in range(n):
                    routes[(i, j)] = p[i]
            W = Jp - gain
            segments.append(routes)
        W = np.where(adm[:, None] & adm[None, :], W, np.inf)
        layers.append(W)
    terminal = np.where(adm, -cap * np.maximum(-lam[T - 1], 0.0), np.inf)
    W_all = np.stack(layers) if layers else np.zeros((0, n, n))
    res = shortest_path(TimeExpandedGraph(W_all, terminal, i0))
    nodes = list(res.nodes)
    traj = [None] * T
    if te[0] > 0:
        nodes = nodes[1:]
        traj[: te[0]] = pre_routes[nodes[0]]
    for r, node in enumerate(nodes):
        traj[te[r]] = node
    for r, routes in enumerate(segments):
        if routes is not None:
            mid = routes[(nodes[r], nodes[r + 1])]
            traj[te[r] + 1: te[r + 1]] = mid
    return PatternCandidate(pattern, tuple(int(b) for b in traj), -res.cost)


def enumerate_patterns(T: int):
    """Every partition with the last period energy-bound, in a fixed order."""
    for mask in range(2 ** (T - 1)):
        energy = [t for t in range(T - 1) if (mask >> t) & 1] + [T - 1]
        yield BindingPattern.from_energy_set(energy, T)


def _evaluate(unit, lam, trajectory, transport, tol, check_unique=True):
    op = travel_split(trajectory, transport)[1]
    path_prices = lam[np.arange(lam.shape[0]), list(trajectory)]
    arb = solve_price_arbitrage(unit, path_prices, op, check_unique=check_unique, tol=tol)
    return arb, arb.objective - _travel(trajectory, transport)


def relocate_exact(unit: MobileStorageUnit, prices, transport: TransportModel, *,
                   max_horizon: int = MAX_EXACT_HORIZON, fallback_step: Optional[float] = None,
                   workers: Optional[int] = None, tol: Tolerances = DEFAULT_TOLERANCES) -> RelocationResult:
    """Enumerate binding patterns, route each by SP-E and keep the best admissible one.

    A candidate is admissible when the arbitrage LP along its trajectory
    binds exactly the assumed pattern.  Patterns that only match at ten
    times the activity tolerance are accepted with a warning.  If nothing
    is admissible and degeneracy was observed, the result falls back to
    :func:`relocate_approx` with a warning; otherwise
    :class:`RelocationError` is raised.
    """
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    if T > max_horizon:
        raise RelocationError(f"horizon {T} exceeds the enumeration guard {max_horizon}")
    patterns = list(enumerate_patterns(T))

    def run(pattern):
        cand = solve_sp_e(pattern, lam, unit, transport)
        arb, value = _evaluate(unit, lam, cand.trajectory, transport, tol)
        op = travel_split(cand.trajectory, transport)[1]
        consistent = abs(cand.formula_value - value) <= 1e-6 * (1.0 + abs(value))
        if arb.pattern.key == pattern.key and arb.pattern.reliable:
            return cand, arb, value, "admissible"
        if arb.unique and consistent and arb.pattern.compatible_with(pattern):
            return cand, arb, value, "compatible"
        loose = binding_pattern(arb.u, unit, op, tol=10 * tol.binding, unique=arb.unique)
        if loose.key == pattern.key and loose.reliable:
            return cand, arb, value, "near-degenerate"
        if not arb.unique or arb.pattern.ambiguous:
            return cand, arb, value, "degenerate"
        return cand, arb, value, "inadmissible"

    nw = workers or max_workers()
    if nw > 1:
        with ThreadPoolExecutor(nw) as pool:
            outcomes = list(pool.map(run, patterns))
    else:
        outcomes = [run(p) for p in patterns]

    best = None
    counts = {}
    for cand, arb, value, status in outcomes:
        counts[status] = counts.get(status, 0) + 1
        if status not in ("admissible", "compatible", "near-degenerate"):
            continue
        if best is None or value > best[2] + 1e-12 * (1.0 + abs(best[2])):
            best = (cand, arb, value, status)
    if best is None:
        if counts.get("degenerate"):
            warnings.warn("no admissible binding pattern (degenerate arbitrage optima); "
                          "falling back to the discretized solver", RelocationWarning, stacklevel=2)
            step = fallback_step or unit.capacity / 64.0
            res = relocate_approx(unit, lam, transport, step)
            diag = dict(res.diagnostics, fallback=True, pattern_counts=counts)
            return RelocationResult(res.trajectory, res.objective, "exact->approx", res.travel_cost, res.revenue,
                                    res.schedule, None, res.bound, res.soc_step, diag)
        raise RelocationError(f"no admissible binding pattern among {len(patterns)}: {counts}")
    cand, arb, value, status = best
    if status == "near-degenerate":
        warnings.warn(f"selected pattern {cand.pattern} matched only at a loosened tolerance",
                      RelocationWarning, stacklevel=2)
    elif status == "compatible":
        warnings.warn(f"selected pattern {cand.pattern} labels periods where both storage limits bind",
                      RelocationWarning, stacklevel=2)
    travel = _travel(cand.trajectory, transport)
    return RelocationResult(cand.trajectory, value, "exact", travel, arb.objective, arb.u, cand.pattern,
                            diagnostics={"formula_value": cand.formula_value, "pattern_counts": counts,
                                         "status": status, "initial_soc": unit.initial_soc})


# ---------------------------------------------------------------------------
# SoC-discretized dynamic program

def approx_bound(prices, initial_bus: int, h: float) -> float:
    """Discretization error bound ``h (|p_start(0)| + sum_{t>=1} max_i |p_i(t)|)``."""
    lam = np.atleast_2d(np.asarray(prices, dtype=float))
    return float(h * (abs(lam[0, initial_bus]) + np.abs(lam[1:]).max(axis=1).sum()))


def relocate_approx(unit: MobileStorageUnit, prices, transport: TransportModel, h: float, *,
                    convention: str = "closed") -> RelocationResult:
    """Longest path over (bus, SoC level) nodes with SoC step ``h``.

    ``h`` is shrunk so that the capacity is an integer number of steps and
    the initial SoC is floored onto the grid.  ``convention="floor"`` adds
    one SoC cell above the capacity that floors back onto it; the optimum
    is unchanged either way.
    """
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    cap = unit.capacity
    if not (h > 0 and h <= cap * (1 + 1e-12)):
        raise ValueError(f"SoC step must satisfy 0 < h <= capacity ({cap}), got {h}")
    if convention not in ("closed", "floor"):
        raise ValueError(f"unknown convention {convention!r}")
    z = max(1, int(math.ceil(cap / h - 1e-9)))
    step = cap / z
    k0 = min(z, int(math.floor(unit.initial_soc / step + 1e-9)))
    rating = unit.power_rating()
    D = transport.travel_time
    limits = np.where(move_ok, rating * (transport.period - np.where(move_ok, D, 0.0)), -1.0)
    levels = z + 1 if convention == "closed" else z + 2
    Z = levels
    N = n * Z

    if convention == "closed":
        W = np.empty((max(T - 1, 0), N, N))
        for t in range(T - 1):
            W[t] = soc_edge_weights(lam[t], np.where(move_ok, D, np.inf), transport.kappa, limits, step, z, adm)
    else:
        W = np.stack([_floor_weights(lam[t], D, move_ok, transport.kappa, limits, step, z)
                      for t in range(T - 1)]) if T > 1 else np.zeros((0, N, N))

    value_of = np.minimum(np.arange(Z), z) * step
    du = value_of[None, :] - value_of[:, None]
    last_lim = rating * transport.period + 1e-9 * (1.0 + step)
    terminal = np.full(N, np.inf)
    term_choice = np.zeros(N, dtype=int)
    for i in np.flatnonzero(adm):
        c = np.where(np.abs(du) <= last_lim, lam[T - 1, i] * du, np.inf)
        best = c.min(axis=1)
        term_choice[i * Z:(i + 1) * Z] = np.argmax(c <= (best + 1e-12 * (1 + np.abs(best)))[:, None], axis=1)
        terminal[i * Z:(i + 1) * Z] = best
    source = unit.initial_bus * Z + k0
    res = shortest_path(TimeExpandedGraph(W, terminal, source))
    buses = tuple(int(s // Z) for s in res.nodes)
    ks = [int(s % Z) for s in res.nodes] + [int(term_choice[res.nodes[-1]])]
    soc = value_of[ks]
    u = np.diff(soc)
    travel = _travel(buses, transport)
    path_prices = lam[np.arange(T), list(buses)]
    revenue = float(-(path_prices @ u))
    return RelocationResult(buses, revenue - travel, "approx", travel, revenue, u,
                            bound=approx_bound(lam, unit.initial_bus, step), soc_step=step,
                            diagnostics={"levels": z, "initial_soc": float(k0 * step),
                                         "dp_value": -res.cost, "convention": convention})


def _floor_weights(prices_t, D, move_ok, kappa, limits, step, z):
    n = D.shape[0]
    Z = z + 2
    vals = np.minimum(np.arange(Z), z) * step
    du = vals[None, :] - vals[:, None]
    W = np.full((n, Z, n, Z), np.inf)
    for i in range(n):
        for j in range(n):
            if move_ok[i, j]:
                ok = np.abs(du) <= limits[i, j] + 1e-9 * (1.0 + step)
                W[i, :, j, :] = np.where(ok, prices_t[i] * du + kappa * D[i, j], np.inf)
    return W.reshape(n * Z, n * Z)


# ---------------------------------------------------------------------------
# Oracle and fleet helpers

def brute_force_relocation(unit: MobileStorageUnit, prices, transport: TransportModel, *,
                           evaluator: str = "lp", limit: int = BRUTE_FORCE_LIMIT,
                           tol: Tolerances = DEFAULT_TOLERANCES) -> RelocationResult:
    """Try every trajectory.  ``evaluator`` is ``"lp"`` (arbitrage LP) or ``"rapid"`` (closed form)."""
    lam, T, n, adm, move_ok = _prepare(unit, prices, transport)
    buses = np.flatnonzero(adm)
    if len(buses) ** max(T - 1, 0) > limit:
        raise RelocationError(f"{len(buses)}^{T - 1} trajectories exceed the enumeration limit {limit}")
    if evaluator not in ("lp", "rapid"):
        raise ValueError(f"unknown evaluator {evaluator!r}")
    best = None
    for tail in itertools.product(buses.tolist(), repeat=T - 1):
        traj = (unit.initial_bus,) + tail
        if not all(move_ok[a, b] for a, b in zip(traj[:-1], traj[1:])):
            continue
        if evaluator == "lp":
            arb, value = _evaluate(unit, lam, traj, transport, tol, check_unique=False)
            u, revenue = arb.u, arb.objective
        else:
            pp = lam[np.arange(T), list(traj)]
            u = rapid_schedule(unit, pp)
            revenue = rapid_value(unit, pp)
            value = revenue - _travel(traj, transport)
        if best is None or value > best[1] + 1e-12 * (1.0 + abs(best[1])):
            best = (traj, value, u, revenue)
    traj, value, u, revenue = best
    return RelocationResult(traj, value, f"brute-{evaluator}", _travel(traj, transport), revenue, u,
                            diagnostics={"initial_soc": unit.initial_soc})


ALGORITHMS = ("rapid", "exact", "approx", "brute")


def relocate(unit, prices, transport, algo="rapid", *, soc_step=None, **kw) -> RelocationResult:
    if algo == "rapid":
        return relocate_rapid(unit, prices, transport)
    if algo == "exact":
        return relocate_exact(unit, prices, transport, **kw)
    if algo == "approx":
        return relocate_approx(unit, prices, transport, soc_step or unit.capacity / 64.0, **kw)
    if algo == "brute":
        return brute_force_relocation(unit, prices, transport, **kw)
    raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")


def relocate_fleet(fleet, prices, algo="rapid", *, workers=None, **kw) -> list:
    """Route every unit independently against the same zero-capacity prices."""
    transport = fleet.transport_for(np.atleast_2d(prices).shape[1])
    nw = workers or max_workers()
    jobs = [lambda u=u: relocate(u, prices, transport, algo, **kw) for u in fleet]
    if nw > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(nw) as pool:
            return list(pool.map(lambda f: f(), jobs))
    return [f() for f in jobs]
