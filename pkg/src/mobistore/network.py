"""Transmission network model and DC shift-factor construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float


@dataclass(frozen=True)
class Violation:
    """A failed network invariant.  ``code`` is stable and machine-readable."""

    code: str
    subject: object = None
    message: str = ""

    def __repr__(self):
        return f"{self.code}({self.subject!r})"


@dataclass(frozen=True)
class PowerNetwork:
    """Buses, lines, quadratic generator costs and a (T, n) load matrix.

    Bus and line references are 0-based indices.  ``gen_max[i] == 0`` marks
    a bus without a generator; ``gen_min`` defaults to ``-inf`` (no lower
    bound), matching the unbounded generation of the textbook fixtures.
    """

    cost_a: np.ndarray
    cost_b: np.ndarray
    lines: tuple
    loads: np.ndarray
    slack: int = 0
    gen_max: Optional[np.ndarray] = None
    gen_min: Optional[np.ndarray] = None
    bus_ids: tuple = field(default=())

    def __post_init__(self):
        a = np.array(self.cost_a, dtype=float).ravel()
        n = a.size
        object.__setattr__(self, "cost_a", a)
        object.__setattr__(self, "cost_b", np.array(self.cost_b, dtype=float).ravel())
        object.__setattr__(self, "lines", tuple(Line(*ln) if not isinstance(ln, Line) else ln for ln in self.lines))
        loads = np.atleast_2d(np.array(self.loads, dtype=float))
        object.__setattr__(self, "loads", loads)
        gmax = np.full(n, np.inf) if self.gen_max is None else np.array(self.gen_max, dtype=float).ravel()
        gmin = np.full(n, -np.inf) if self.gen_min is None else np.array(self.gen_min, dtype=float).ravel()
        object.__setattr__(self, "gen_max", gmax)
        object.__setattr__(self, "gen_min", gmin)
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(range(1, n + 1)))
        for arr in (a, self.cost_b, gmax, gmin, loads):
            arr.flags.writeable = False

    @property
    def n_buses(self) -> int:
        return self.cost_a.size

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def horizon(self) -> int:
        return self.loads.shape[0]

    @property
    def has_generator(self) -> np.ndarray:
        return self.gen_max > 0

    @property
    def limits(self) -> np.ndarray:
        """Directed limit vector, ordered (line 0 fwd, line 0 rev, line 1 fwd, ...)."""
        return np.repeat([ln.limit for ln in self.lines], 2).astype(float)

    def with_loads(self, loads) -> "PowerNetwork":
        return _replace(self, loads=np.asarray(loads, dtype=float))

    def with_limits(self, limits: Sequence[float]) -> "PowerNetwork":
        lines = tuple(Line(ln.from_bus, ln.to_bus, ln.susceptance, float(f)) for ln, f in zip(self.lines, limits))
        return _replace(self, lines=lines)

    def components(self) -> list:
        """Connected components as sorted lists of bus indices."""
        parent = list(range(self.n_buses))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for ln in self.lines:
            if 0 <= ln.from_bus < self.n_buses and 0 <= ln.to_bus < self.n_buses:
                ra, rb = find(ln.from_bus), find(ln.to_bus)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups = {}
        for i in range(self.n_buses):
            groups.setdefault(find(i), []).append(i)
        return sorted(groups.values())

    def is_tree(self) -> bool:
        return self.n_lines == self.n_buses - 1 and len(self.components()) == 1


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


def validate(network: PowerNetwork) -> list:
    """Return the list of violated invariants (empty when the network is valid)."""
    out = []
    n = network.n_buses
    if n == 0:
        return [Violation("NoBuses", None, "network has no buses")]
    if network.cost_b.size != n:
        out.append(Violation("BadCostShape", None, "cost_b length differs from bus count"))
    if network.gen_max.size != n or network.gen_min.size != n:
        out.append(Violation("BadGeneratorBounds", None, "generator bound length differs from bus count"))
    else:
        for i in range(n):
            if network.gen_max[i] > 0 and not network.cost_a[i] > 0:
                out.append(Violation("NonStrictlyConvexCost", i, f"bus {network.bus_ids[i]} has a_i <= 0"))
            if network.gen_min[i] > network.gen_max[i]:
                out.append(Violation("BadGeneratorBounds", i, "gen_min exceeds gen_max"))
    for j, ln in enumerate(network.lines):
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            out.append(Violation("BadLineEndpoint", j, "line endpoint out of range"))
            continue
        if ln.from_bus == ln.to_bus:
            out.append(Violation("SelfLoop", j, "line connects a bus to itself"))
        if not ln.susceptance > 0:
            out.append(Violation("BadSusceptance", j, f"line {j} susceptance {ln.susceptance}"))
        if not ln.limit > 0:
            out.append(Violation("BadLimit", j, f"line {j} limit {ln.limit}"))
    if network.loads.ndim != 2 or network.loads.shape[1] != n:
        out.append(Violation("BadLoadShape", network.loads.shape, f"loads must be (T, {n})"))
    elif not np.all(np.isfinite(network.loads)):
        out.append(Violation("NonFiniteLoad", None, "loads contain non-finite values"))
    if not 0 <= network.slack < n:
        out.append(Violation("SlackOutOfRange", network.slack, "slack bus index out of range"))
    comps = network.components()
    if len(comps) > 1:
        named = [[network.bus_ids[i] for i in comp] for comp in comps]
        out.append(Violation("Disconnected", named, f"network has {len(comps)} components: {named}"))
    return out


@dataclass(frozen=True)
class ShiftFactorMatrix:
    """Directed shift factors ``H`` (2m x n) and the matching limit vector."""

    H: np.ndarray
    limits: np.ndarray
    reference: str = "slack"

    @property
    def forward(self) -> np.ndarray:
        return self.H[0::2]


def build_shift_factors(network: PowerNetwork, reference: str = "slack") -> ShiftFactorMatrix:
    """DC power-transfer distribution factors.

    With ``reference="slack"`` the slack bus absorbs every injection, so the
    slack column of ``H`` is zero.  ``reference="distributed"`` uses the
    Laplacian pseudo-inverse instead, which gives ``H @ 1 == 0``.  The two
    agree on every balanced injection (``1'p = 0``) and therefore yield the
    same LMPs.
    """
    n = network.n_buses
    comps = network.components()
    if len(comps) > 1:
        named = [[network.bus_ids[i] for i in comp] for comp in comps]
        raise NetworkError(f"network is disconnected; components: {named}")
    m = network.n_lines
    inc = np.zeros((m, n))
    b = np.empty(m)
    for j, ln in enumerate(network.lines):
        inc[j, ln.from_bus] = 1.0
        inc[j, ln.to_bus] = -1.0
        b[j] = ln.susceptance
    Bf = b[:, None] * inc
    B = inc.T @ Bf
    if reference == "slack":
        keep = np.array([i for i in range(n) if i != network.slack], dtype=int)
        X = np.zeros((n, n))
        if keep.size:
            X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
    elif reference == "distributed":
        X = np.linalg.pinv(B)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    fwd = Bf @ X
    H = np.empty((2 * m, n))
    H[0::2] = fwd
    H[1::2] = -fwd
    H.flags.writeable = False
    limits = network.limits
    limits.flags.writeable = False
    return ShiftFactorMatrix(H=H, limits=limits, reference=reference)
