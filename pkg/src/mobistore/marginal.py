"""Marginal values of storage and wires, and the per-unit price-arbitrage LP.

All period indices are 0-based.  The price after the horizon is taken to
be zero, so a unit holding charge in the last period values it at nothing.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dispatch import DispatchSolution
from .qp import DEFAULT_TOLERANCES, QpSolution, QuadraticProgram, Tolerances, solve_lp
from .storage import MobileStorageUnit

AGREEMENT_TOL = 1e-5


class MarginalValueWarning(UserWarning):
    """Closed-form and dual-based values could not be cross-checked."""


def positive_increments(prices) -> np.ndarray:
    """``(p(t+1) - p(t))_+`` for every period, with ``p(T) := 0``."""
    p = np.asarray(prices, dtype=float)
    return np.maximum(np.append(p[1:], 0.0) - p, 0.0)


@dataclass(frozen=True)
class BindingPattern:
    """Partition of the horizon into energy-bound and power-bound periods.

    ``free`` lists periods with no binding storage constraint and
    ``ambiguous`` periods where both kinds bind (or the unit cannot operate
    at all).  Either makes the pattern unreliable for dual reconstruction.
    """

    energy: tuple
    power: tuple
    horizon: int
    free: tuple = ()
    ambiguous: tuple = ()
    unique: bool = True
    energy_bound: tuple = ()
    power_bound: tuple = ()

    @property
    def reliable(self) -> bool:
        return self.unique and not self.free and not self.ambiguous

    @property
    def key(self) -> tuple:
        return (self.energy, self.power)

    @property
    def closes_at_end(self) -> bool:
        return (self.horizon - 1) in self.energy

    @property
    def sigma(self) -> dict:
        """Next energy-bound period after each power-bound one (where defined)."""
        out = {}
        for tp in self.power:
            nxt = [te for te in self.energy if te > tp]
            if nxt:
                out[tp] = nxt[0]
        return out

    def compatible_with(self, assumed: "BindingPattern") -> bool:
        """Whether ``assumed`` is one way of labelling the constraints that actually bind here.

        Periods where both kinds bind may be labelled either way.
        """
        if self.free or assumed.horizon != self.horizon:
            return False
        e = set(self.energy_bound or self.energy)
        p = set(self.power_bound or self.power)
        return all(t in e for t in assumed.energy) and all(t in p for t in assumed.power)

    @classmethod
    def from_energy_set(cls, energy, horizon) -> "BindingPattern":
        energy = tuple(sorted(set(int(t) for t in energy)))
        power = tuple(t for t in range(horizon) if t not in energy)
        return cls(energy, power, horizon)

    def __str__(self):
        return f"Te={list(self.energy)} Tp={list(self.power)}"


def binding_pattern(u, unit: MobileStorageUnit, operating_time=None, *, rapid=False,
                    tol: float = 1e-6, unique=True, capacity=None) -> BindingPattern:
    """Read the binding storage constraints off a charge schedule."""
    u = np.asarray(u, dtype=float)
    T = u.size
    cap = unit.capacity if capacity is None else capacity
    op = np.ones(T) if operating_time is None else np.asarray(operating_time, dtype=float)
    soc = unit.initial_soc + np.cumsum(u)
    e_bind = (soc <= tol) | (soc >= cap - tol)
    if rapid:
        p_bind = np.zeros(T, dtype=bool)
        no_op = np.zeros(T, dtype=bool)
    else:
        limit = unit.power_rating(cap) * op
        no_op = limit <= tol
        p_bind = np.abs(u) >= limit - tol
    energy, power, free, amb = [], [], [], []
    for t in range(T):
        if no_op[t] or (e_bind[t] and p_bind[t]):
            amb.append(t)
        elif e_bind[t]:
            energy.append(t)
        elif p_bind[t]:
            power.append(t)
        else:
            free.append(t)
    return BindingPattern(tuple(energy), tuple(power), T, tuple(free), tuple(amb), bool(unique),
                          tuple(int(t) for t in np.flatnonzero(e_bind)),
                          tuple(int(t) for t in np.flatnonzero(p_bind | no_op)))


def reconstruct_duals(pattern: BindingPattern, prices) -> tuple:
    """Storage duals implied by a binding pattern and the prices along the path.

    Returns ``(mu, omega_plus_phi)``.  Requires the last period to be
    energy-bound, otherwise the next-energy map is undefined.
    """
    p = np.asarray(prices, dtype=float)
    T = pattern.horizon
    if not pattern.closes_at_end:
        raise ValueError("last period is not energy-bound; reconstruction undefined")
    ext = np.append(p, 0.0)
    mu = np.zeros(T)
    op = np.zeros(T)
    te = list(pattern.energy) + [T]
    for r in range(len(te) - 1):
        mu[te[r]] = max(ext[te[r + 1]] - ext[te[r]], 0.0)
    for tp, s in pattern.sigma.items():
        op[tp] = abs(ext[s] - ext[tp])
    return mu, op


@dataclass(frozen=True)
class ArbitrageResult:
    u: np.ndarray
    soc: np.ndarray
    objective: float  # revenue -sum(price * u)
    unique: bool
    pattern: BindingPattern
    qp: QpSolution = field(repr=False)


def arbitrage_problem(unit: MobileStorageUnit, prices, operating_time=None, *, rapid=False,
                      capacity=None) -> QuadraticProgram:
    p = np.asarray(prices, dtype=float)
    T = p.size
    cap = unit.capacity if capacity is None else capacity
    op = np.ones(T) if operating_time is None else np.asarray(operating_time, dtype=float)
    L = np.tril(np.ones((T, T)))
    rows = [-L, L]
    rhs = [np.full(T, unit.initial_soc), np.full(T, cap - unit.initial_soc)]
    if not rapid:
        lim = unit.power_rating(cap) * op
        rows += [-np.eye(T), np.eye(T)]
        rhs += [lim, lim]
    return QuadraticProgram(c=p, A_in=np.vstack(rows), b_in=np.concatenate(rhs))


def solve_price_arbitrage(unit: MobileStorageUnit, prices, operating_time=None, *, rapid=False,
                          capacity=None, check_unique=True,
                          tol: Tolerances = DEFAULT_TOLERANCES) -> ArbitrageResult:
    """Revenue-maximizing schedule for one unit facing fixed prices along its path."""
    P = arbitrage_problem(unit, prices, operating_time, rapid=rapid, capacity=capacity)
    sol = solve_lp(P, tol, check_unique=check_unique)
    if not sol.optimal:
        raise RuntimeError(f"arbitrage LP failed: {sol.status.value} {sol.message}")
    unique = bool(sol.unique) if check_unique else True
    pattern = binding_pattern(sol.x, unit, operating_time, rapid=rapid, tol=tol.binding,
                              unique=unique, capacity=capacity)
    return ArbitrageResult(u=sol.x, soc=unit.initial_soc + np.cumsum(sol.x), objective=-float(sol.objective),
                           unique=unique, pattern=pattern, qp=sol)


@dataclass(frozen=True)
class MarginalValue:
    """Marginal value of one storage unit with its per-period terms."""

    value: float
    per_period: np.ndarray
    dual_value: Optional[float] = None
    reconstructed: Optional[float] = None
    mu: Optional[np.ndarray] = None
    omega_phi: Optional[np.ndarray] = None
    pattern: Optional[BindingPattern] = None
    warnings: tuple = ()

    @property
    def agrees(self) -> Optional[bool]:
        if self.dual_value is None or self.reconstructed is None:
            return None
        return abs(self.dual_value - self.reconstructed) <= AGREEMENT_TOL * (1.0 + abs(self.dual_value))


def _emit(msgs):
    for m in msgs:
        warnings.warn(m, MarginalValueWarning, stacklevel=3)


def mv_rapid(solution: DispatchSolution, k: int = 0, trajectory=None) -> MarginalValue:
    """Capacity value of rapid unit ``k`` from the LMP increments along its path.

    When the unit took part in the solve its upper-SoC duals are summed too
    and the two numbers are cross-checked.
    """
    traj = solution.trajectories[k] if trajectory is None else tuple(trajectory)
    terms = positive_increments(solution.lmp_along(traj))
    value = float(terms.sum())
    msgs = []
    dual = None
    if trajectory is None and solution.mu is not None and k < solution.n_units:
        dual = float(solution.mu[k].sum())
        if abs(dual - value) > AGREEMENT_TOL * (1.0 + abs(value)):
            msgs.append(f"unit {k}: dual sum {dual:.8g} differs from LMP formula {value:.8g}; duals may be non-unique")
        if solution.degenerate:
            msgs.append("dispatch solution is degenerate; duals may be non-unique")
    _emit(msgs)
    return MarginalValue(value=value, per_period=terms, dual_value=dual, reconstructed=value,
                         mu=None if dual is None else solution.mu[k].copy(), warnings=tuple(msgs))


def mv_general(solution: DispatchSolution, k: int = 0, tol: Tolerances = DEFAULT_TOLERANCES) -> MarginalValue:
    """Capacity value of unit ``k`` from its SoC and power duals.

    The result is cross-checked against the value rebuilt from LMPs and the
    binding pattern of the unit's arbitrage problem.
    """
    unit = solution.fleet[k]
    traj = solution.trajectories[k]
    op = solution.operating_time[k]
    mu = solution.mu[k].copy()
    if solution.rapid:
        opp = np.zeros_like(mu)
    else:
        opp = solution.omega[k] + solution.phi[k]
    slope = unit.rating_derivative
    per_period = mu + slope * op * opp
    dual = float(per_period.sum())
    msgs = []
    prices = solution.lmp_along(traj)
    arb = solve_price_arbitrage(unit, prices, op, rapid=solution.rapid, tol=tol)
    pattern = arb.pattern
    recon = None
    if solution.degenerate:
        msgs.append("dispatch solution is degenerate; reconstruction from LMPs skipped")
    elif not pattern.reliable:
        msgs.append(f"unit {k}: binding pattern unreliable ({pattern}); reconstruction from LMPs skipped")
    elif not pattern.closes_at_end:
        msgs.append(f"unit {k}: last period is not energy-bound; reconstruction from LMPs skipped")
    else:
        r_mu, r_opp = reconstruct_duals(pattern, prices)
        recon = float(r_mu.sum() + slope * (op * r_opp).sum())
        if abs(recon - dual) > AGREEMENT_TOL * (1.0 + abs(dual)):
            msgs.append(f"unit {k}: dual value {dual:.8g} differs from reconstruction {recon:.8g}")
    _emit(msgs)
    return MarginalValue(value=dual, per_period=per_period, dual_value=dual, reconstructed=recon,
                         mu=mu, omega_phi=opp, pattern=pattern, warnings=tuple(msgs))


def mv_stationary(solution: DispatchSolution, bus: int, k: Optional[int] = None,
                  tol: Tolerances = DEFAULT_TOLERANCES) -> MarginalValue:
    """Capacity value of storage parked at ``bus``.

    With ``k`` naming a stationary unit at that bus, its duals are used.
    Otherwise the value of a vanishing unit is read from the bus prices.
    """
    if k is not None:
        if set(solution.trajectories[k]) != {bus}:
            raise ValueError(f"unit {k} is not parked at bus {bus} for the whole horizon")
        return mv_general(solution, k, tol)
    terms = positive_increments(solution.lmp[:, bus])
    return MarginalValue(value=float(terms.sum()), per_period=terms)


def mv_wire(solution: DispatchSolution) -> tuple:
    """Per-period and total capacity value of every directed line, ``(per_period, total)``."""
    per = solution.beta.copy()
    return per, per.sum(axis=0)


def directed_row(solution: DispatchSolution, a: int, b: int) -> int:
    """Row of ``H`` for flow from bus ``a`` to bus ``b`` over a single line."""
    for j, ln in enumerate(solution.network.lines):
        if (ln.from_bus, ln.to_bus) == (a, b):
            return 2 * j
        if (ln.from_bus, ln.to_bus) == (b, a):
            return 2 * j + 1
    raise KeyError(f"no line between buses {a} and {b}")


def _bus_path(network, i, j):
    adj = {b: [] for b in range(network.n_buses)}
    for ln in network.lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    prev = {i: None}
    queue = deque([i])
    while queue:
        a = queue.popleft()
        for b in sorted(adj[a]):
            if b not in prev:
                prev[b] = a
                queue.append(b)
    path = [j]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


@dataclass(frozen=True)
class RadialCheck:
    mobile: float
    wires: float
    stationary: float
    relation: str  # "=", ">" or "<"
    hypotheses_hold: bool
    reason: str = ""

    @property
    def equality(self) -> bool:
        return self.relation == "="


def radial_decomposition_check(solution: DispatchSolution, i: int, j: int, t: int,
                               tol: float = AGREEMENT_TOL) -> RadialCheck:
    """Compare a move ``i@t -> j@t+1`` with a wire path ``i -> j`` plus storage at ``j``."""
    lam = np.vstack([solution.lmp, np.zeros(solution.lmp.shape[1])])
    mobile = float(max(lam[t + 1, j] - lam[t, i], 0.0))
    stationary = float(max(lam[t + 1, j] - lam[t, j], 0.0))
    path = _bus_path(solution.network, i, j)
    rows = [directed_row(solution, a, b) for a, b in zip(path[:-1], path[1:])]
    wires = float(sum(solution.beta[t, r] for r in rows))
    reason = ""
    if not solution.network.is_tree():
        reason = "network has a loop"
    elif any(solution.flows[t, r] < -tol for r in rows):
        reason = "flow on the path is not directed from i to j"
    rhs = wires + stationary
    rel = "=" if abs(mobile - rhs) <= tol else (">" if mobile > rhs else "<")
    return RadialCheck(mobile, wires, stationary, rel, not reason, reason)


@dataclass(frozen=True)
class MarginalValueReport:
    mobile: dict  # unit index -> MarginalValue
    stationary: np.ndarray  # (n,) per bus
    stationary_per_period: np.ndarray  # (T, n)
    wire: np.ndarray  # (2m,)
    wire_per_period: np.ndarray  # (T, 2m)
    warnings: tuple = ()


def marginal_value_report(solution: DispatchSolution, tol: Tolerances = DEFAULT_TOLERANCES) -> MarginalValueReport:
    msgs = []
    mobile = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MarginalValueWarning)
        for k in range(solution.n_units):
            mobile[k] = mv_rapid(solution, k) if solution.rapid else mv_general(solution, k, tol)
    msgs += [str(w.message) for w in caught]
    ss_per = np.column_stack([positive_increments(solution.lmp[:, b]) for b in range(solution.lmp.shape[1])])
    w_per, w_tot = mv_wire(solution)
    return MarginalValueReport(mobile, ss_per.sum(axis=0), ss_per, w_tot, w_per, tuple(msgs))
