"""Multi-period economic dispatch with mobile storage.

Decision vector layout, per solve:

* ``g[t, j]`` for every period ``t`` and every generator bus ``j``
  (buses with ``gen_max == 0`` carry no variable),
* ``u[k, t]`` for every unit ``k`` and period ``t``; charging is positive.

Constraint rows are assembled in a fixed order, which fixes the dual
relabeling:

1. balance ``sum(g(t)) - sum_k u_k(t) = sum(d(t))``, dual ``y_t`` with
   ``gamma(t) = -y_t``;
2. directed line limits ``H p(t) <= f_max``, dual ``beta(t)`` (rows with an
   infinite limit are dropped and report ``beta = 0``);
3. SoC lower bounds ``-(s0 + L u_k) <= 0``, dual ``nu_k``;
4. SoC upper bounds ``s0 + L u_k <= cap_k``, dual ``mu_k``;
5. discharge bounds ``-u_k <= rating_k * op_k``, dual ``omega_k`` (general
   model only);
6. charge bounds ``u_k <= rating_k * op_k``, dual ``phi_k`` (general model
   only);
7. finite generator bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .network import PowerNetwork, ShiftFactorMatrix, build_shift_factors, validate
from .qp import DEFAULT_TOLERANCES, QpSolution, QuadraticProgram, Status, Tolerances, solve_qp
from .storage import Fleet, snapshot_matrices, travel_split


class DispatchError(RuntimeError):
    """The dispatch QP could not be solved to certified optimality."""


class DispatchInfeasible(DispatchError):
    def __init__(self, message, binding=()):
        super().__init__(message)
        self.binding = tuple(binding)


@dataclass(frozen=True)
class DispatchSolution:
    network: PowerNetwork
    fleet: Fleet
    trajectories: tuple
    shift: ShiftFactorMatrix
    g: np.ndarray  # (T, n), zero at buses without a generator
    u: np.ndarray  # (K, T)
    soc: np.ndarray  # (K, T), end-of-period state of charge
    gamma: np.ndarray  # (T,)
    beta: np.ndarray  # (T, 2m)
    nu: np.ndarray  # (K, T)
    mu: np.ndarray  # (K, T)
    omega: Optional[np.ndarray]  # (K, T), None for the rapid model
    phi: Optional[np.ndarray]
    lmp: np.ndarray  # (T, n)
    flows: np.ndarray  # (T, 2m) directed flows H p(t)
    operating_time: np.ndarray  # (K, T)
    objective: float
    rapid: bool
    degenerate: bool
    qp: QpSolution = field(repr=False)
    row_labels: tuple = field(default=(), repr=False)

    @property
    def horizon(self) -> int:
        return self.g.shape[0]

    @property
    def n_units(self) -> int:
        return self.u.shape[0]

    def lmp_along(self, trajectory) -> np.ndarray:
        traj = np.asarray(trajectory, dtype=int)
        return self.lmp[np.arange(traj.size), traj]


def lmps(solution: DispatchSolution) -> np.ndarray:
    """Assemble ``lambda(t) = gamma(t) 1 - H' beta(t)`` from the stored duals."""
    H = solution.shift.H
    return solution.gamma[:, None] - solution.beta @ H


class _Builder:
    def __init__(self, n_vars):
        self.n = n_vars
        self.rows, self.rhs, self.labels = [], [], []

    def add(self, row, rhs, label):
        self.rows.append(row)
        self.rhs.append(rhs)
        self.labels.append(label)

    def arrays(self):
        if not self.rows:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.vstack(self.rows), np.asarray(self.rhs, dtype=float)


def _check_inputs(network, fleet, trajectories):
    problems = validate(network)
    if problems:
        raise ValueError("invalid network: " + ", ".join(repr(p) for p in problems))
    return fleet.validate_trajectories(list(trajectories), network.n_buses, network.horizon)


def solve_dispatch(network: PowerNetwork, fleet: Fleet, trajectories: Sequence[Sequence[int]], *,
                   rapid: bool = False, reference: str = "slack",
                   tol: Tolerances = DEFAULT_TOLERANCES) -> DispatchSolution:
    trajs = _check_inputs(network, fleet, trajectories)
    shift = build_shift_factors(network, reference)
    H, fmax = shift.H, shift.limits
    T, n, K = network.horizon, network.n_buses, len(fleet)
    gens = np.flatnonzero(network.has_generator)
    G = gens.size
    nv = T * G + K * T
    transport = fleet.transport_for(n)

    def gi(t):
        return t * G + np.arange(G)

    def ui(k):
        return T * G + k * T + np.arange(T)

    E = snapshot_matrices(trajs, n) if K else np.zeros((T, n, 0))
    op = np.array([travel_split(tr, transport)[1] for tr in trajs]).reshape(K, T)
    L = np.tril(np.ones((T, T)))
    d = network.loads

    Q = np.zeros(nv)
    c = np.zeros(nv)
    for t in range(T):
        Q[gi(t)] = 2.0 * network.cost_a[gens]
        c[gi(t)] = network.cost_b[gens]

    A_eq = np.zeros((T, nv))
    for t in range(T):
        A_eq[t, gi(t)] = 1.0
        for k in range(K):
            A_eq[t, ui(k)[t]] = -1.0
    b_eq = d.sum(axis=1)

    ineq = _Builder(nv)
    line_rows = np.full((T, H.shape[0]), -1)
    finite_lines = np.flatnonzero(np.isfinite(fmax))
    for t in range(T):
        HE = H @ E[t]
        for e in finite_lines:
            row = np.zeros(nv)
            row[gi(t)] = H[e, gens]
            for k in range(K):
                row[ui(k)[t]] = -HE[e, k]
            line_rows[t, e] = len(ineq.rows)
            ineq.add(row, fmax[e] + H[e] @ d[t], ("line", t, int(e)))
    blocks = {}
    kinds = ("nu", "mu") if rapid else ("nu", "mu", "omega", "phi")
    for kind in kinds:
        start = len(ineq.rows)
        for k, unit in enumerate(fleet):
            rating = unit.power_rating()
            for t in range(T):
                row = np.zeros(nv)
                if kind == "nu":
                    row[ui(k)] = -L[t]
                    rhs = unit.initial_soc
                elif kind == "mu":
                    row[ui(k)] = L[t]
                    rhs = unit.capacity - unit.initial_soc
                elif kind == "omega":
                    row[ui(k)[t]] = -1.0
                    rhs = rating * op[k, t]
                else:
                    row[ui(k)[t]] = 1.0
                    rhs = rating * op[k, t]
                ineq.add(row, rhs, (kind, k, t))
        blocks[kind] = start
    for t in range(T):
        for jj, j in enumerate(gens):
            if np.isfinite(network.gen_max[j]):
                row = np.zeros(nv)
                row[gi(t)[jj]] = 1.0
                ineq.add(row, network.gen_max[j], ("gen_max", t, int(j)))
            if np.isfinite(network.gen_min[j]):
                row = np.zeros(nv)
                row[gi(t)[jj]] = -1.0
                ineq.add(row, -network.gen_min[j], ("gen_min", t, int(j)))
    A_in, b_in = ineq.arrays()

    P = QuadraticProgram(c=c, Q=np.diag(Q), A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)
    sol = solve_qp(P, tol)
    labels = tuple(ineq.labels)
    if sol.status is Status.INFEASIBLE:
        rows = sol.certificate.binding_rows() if sol.certificate is not None else []
        named = [labels[r] for r in rows]
        raise DispatchInfeasible(f"dispatch infeasible; binding cut involves {named or 'the balance rows'}", named)
    if not sol.optimal:
        raise DispatchError(f"dispatch QP failed: {sol.status.value} {sol.message}")

    x, z = sol.x, sol.z_in
    g = np.zeros((T, n))
    for t in range(T):
        g[t, gens] = x[gi(t)]
    u = np.array([x[ui(k)] for k in range(K)]).reshape(K, T)
    gamma = -sol.y_eq
    beta = np.zeros((T, H.shape[0]))
    mask = line_rows >= 0
    beta[mask] = z[line_rows[mask]]

    def block(kind):
        if kind not in blocks:
            return None
        s = blocks[kind]
        return z[s:s + K * T].reshape(K, T).copy()

    inj = g - d - np.einsum("tnk,kt->tn", E, u)
    result = DispatchSolution(
        network=network, fleet=fleet, trajectories=tuple(tuple(tr) for tr in trajs), shift=shift,
        g=g, u=u, soc=np.array([unit.initial_soc for unit in fleet]).reshape(K, 1) + np.cumsum(u, axis=1),
        gamma=gamma, beta=beta, nu=block("nu"), mu=block("mu"), omega=block("omega"), phi=block("phi"),
        lmp=np.zeros((T, n)), flows=inj @ H.T, operating_time=op, objective=float(sol.objective),
        rapid=rapid, degenerate=_licq_fails(P, sol, tol), qp=sol, row_labels=labels,
    )
    object.__setattr__(result, "lmp", lmps(result))
    return result


def _licq_fails(P: QuadraticProgram, sol: QpSolution, tol: Tolerances) -> bool:
    """Rank test on the Jacobian of equality rows plus binding inequality rows."""
    active = sol.slack <= tol.binding
    J = np.vstack([P.A_eq, P.A_in[active]])
    if J.shape[0] == 0:
        return False
    if J.shape[0] > J.shape[1]:
        return True
    return int(np.linalg.matrix_rank(J, tol=1e-9 * max(1.0, np.abs(J).max()))) < J.shape[0]


def solve_mped_s(network: PowerNetwork, fleet: Fleet, trajectories, *, reference="slack",
                 tol: Tolerances = DEFAULT_TOLERANCES) -> DispatchSolution:
    """Dispatch with storage energy and power limits."""
    return solve_dispatch(network, fleet, trajectories, rapid=False, reference=reference, tol=tol)


def solve_rapid_mped_s(network: PowerNetwork, fleet: Fleet, trajectories, *, reference="slack",
                       tol: Tolerances = DEFAULT_TOLERANCES) -> DispatchSolution:
    """Dispatch with storage energy limits only (power limits dropped)."""
    return solve_dispatch(network, fleet, trajectories, rapid=True, reference=reference, tol=tol)


def operation_cost(network, fleet, trajectories, capacities=None, *, rapid=False,
                   tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Optimal dispatch cost as a function of the fleet capacities."""
    if capacities is not None:
        fleet = fleet.with_capacities(capacities)
    return solve_dispatch(network, fleet, trajectories, rapid=rapid, tol=tol).objective
