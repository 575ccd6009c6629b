"""Dense convex QP/LP solver with certified dual multipliers.

Problems have the form::

    minimize    1/2 x'Qx + c'x
    subject to  A_eq x  = b_eq
                A_in x <= b_in

and are solved with a primal-dual interior-point method (Mehrotra
predictor-corrector) followed by an active-set polish step.  Multipliers
follow the Lagrangian ``L = f + y'(A_eq x - b_eq) + z'(A_in x - b_in)``,
so stationarity reads ``Qx + c + A_eq'y + A_in'z = 0`` and ``z >= 0``.
The shadow price of an equality right-hand side is therefore ``-y``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla


class DimensionError(ValueError):
    """Raised when the arrays of a QP do not have consistent shapes."""


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class Tolerances:
    """Solver tolerances; defaults are the documented certification levels."""

    kkt: float = 1e-7
    feasibility: float = 1e-7
    complementarity: float = 1e-7
    dual_feasibility: float = 1e-8
    binding: float = 1e-6
    regularization: float = 1e-10
    uniqueness_perturbation: float = 1e-7
    uniqueness_move: float = 1e-5
    max_iter: int = 150

    def __post_init__(self):
        for name in ("kkt", "feasibility", "complementarity", "dual_feasibility", "binding"):
            if getattr(self, name) <= 0:
                raise ValueError(f"tolerance {name} must be positive")


DEFAULT_TOLERANCES = Tolerances()


def _as_matrix(a, cols):
    if a is None:
        return np.zeros((0, cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, cols))
    return a


def _as_vector(b):
    if b is None:
        return np.zeros(0)
    return np.asarray(b, dtype=float).ravel()


@dataclass(frozen=True)
class QuadraticProgram:
    """Dense QP data.  ``Q`` may be ``None`` for a linear program."""

    c: np.ndarray
    Q: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None

    def __post_init__(self):
        c = _as_vector(self.c)
        n = c.size
        Q = np.zeros((n, n)) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        A_eq, b_eq = _as_matrix(self.A_eq, n), _as_vector(self.b_eq)
        A_in, b_in = _as_matrix(self.A_in, n), _as_vector(self.b_in)
        if Q.shape != (n, n):
            raise DimensionError(f"Q has shape {Q.shape}, expected {(n, n)}")
        for name, A, b in (("eq", A_eq, b_eq), ("in", A_in, b_in)):
            if A.shape[1] != n:
                raise DimensionError(f"A_{name} has {A.shape[1]} columns, expected {n}")
            if A.shape[0] != b.size:
                raise DimensionError(f"A_{name} has {A.shape[0]} rows but b_{name} has {b.size}")
        for name, v in (("c", c), ("Q", Q), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in), ("b_in", b_in)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def is_linear(self) -> bool:
        return not np.any(self.Q)

    def check_convexity(self, sym_tol=1e-10, eig_tol=-1e-9):
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > sym_tol:
            raise ValueError("Q is not symmetric")
        if self.n_vars and np.linalg.eigvalsh(self.Q).min() < eig_tol:
            raise ValueError("Q is not positive semidefinite")

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass(frozen=True)
class FarkasCertificate:
    """Multipliers proving infeasibility.

    They satisfy ``A_eq'y + A_in'z = 0``, ``z >= 0`` and
    ``b_eq'y + b_in'z < 0``.
    """

    y_eq: np.ndarray
    z_in: np.ndarray
    gap: float  # b_eq'y + b_in'z, strictly negative

    def binding_rows(self, top=3):
        """Indices of the inequality rows carrying the largest weight."""
        order = np.argsort(-self.z_in, kind="stable")
        return [int(i) for i in order[:top] if self.z_in[i] > 1e-9]


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    z_in: np.ndarray
    status: Status
    objective: float
    dual_objective: float
    stationarity: float
    primal_infeasibility: float
    complementarity: float
    iterations: int
    polished: bool = False
    unique: Optional[bool] = None
    certificate: Optional[FarkasCertificate] = None
    message: str = ""
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def active(self, tol=1e-6) -> np.ndarray:
        """Boolean mask of inequality rows whose slack is within ``tol``."""
        return self.slack <= tol


def kkt_residuals(problem: QuadraticProgram, x, y, z):
    """Return (stationarity, primal infeasibility, complementarity) in the inf-norm."""
    P = problem
    rd = P.Q @ x + P.c + P.A_eq.T @ y + P.A_in.T @ z
    slack = P.b_in - P.A_in @ x
    infeas = 0.0
    if P.b_eq.size:
        infeas = float(np.max(np.abs(P.A_eq @ x - P.b_eq)))
    if slack.size:
        infeas = max(infeas, float(np.max(-slack, initial=0.0)))
        comp = float(np.max(np.abs(z * slack)))
    else:
        comp = 0.0
    stat = float(np.max(np.abs(rd), initial=0.0))
    return stat, infeas, comp


def _norm(v):
    return float(np.max(np.abs(v), initial=0.0))


class _KKTSystem:
    """Regularised reduced KKT matrix with iterative refinement."""

    def __init__(self, Q, A_eq, A_in, w, reg):
        n, me = Q.shape[0], A_eq.shape[0]
        M = Q + (A_in.T * w) @ A_in
        K = np.zeros((n + me, n + me))
        K[:n, :n] = M
        K[:n, n:] = A_eq.T
        K[n:, :n] = A_eq
        self.K = K
        delta = reg
        Kreg = K.copy()
        Kreg[np.diag_indices(n)] += delta
        Kreg[n + np.arange(me), n + np.arange(me)] -= delta
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                self.lu = sla.lu_factor(Kreg, check_finite=False)
            except sla.LinAlgWarning as exc:
                raise np.linalg.LinAlgError(str(exc)) from None
        self.n = n

    def solve(self, rhs, refine=2):
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(refine):
            r = rhs - self.K @ sol
            sol = sol + sla.lu_solve(self.lu, r, check_finite=False)
        return sol[: self.n], sol[self.n :]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _ipm(P: QuadraticProgram, tol: Tolerances):
    """Mehrotra predictor-corrector.  Returns (x, y, z, s, iterations, converged)."""
    n, me, mi = P.n_vars, P.b_eq.size, P.b_in.size
    Q, c, A_eq, b_eq, A_in, b_in = P.Q, P.c, P.A_eq, P.b_eq, P.A_in, P.b_in
    linear = P.is_linear
    reg = tol.regularization

    # least-squares start, then push slacks/duals into the interior
    try:
        kkt0 = _KKTSystem(Q, A_eq, A_in, np.ones(mi), max(reg, 1e-8))
        x, y = kkt0.solve(np.concatenate([-c + A_in.T @ b_in, b_eq]))
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(A_eq, b_eq, rcond=None)[0] if me else np.zeros(n)
        y = np.zeros(me)
    s = b_in - A_in @ x
    z = np.ones(mi)
    if mi:
        scale = max(1.0, _norm(b_in), _norm(c))
        s = np.maximum(s, 1e-2 * scale)
        s = np.maximum(s, 1.0)
        z = np.full(mi, max(1.0, 1e-2 * scale))

    c_scale = 1.0 + _norm(c)
    b_scale = 1.0 + max(_norm(b_eq), _norm(b_in))
    converged = False
    best = None
    it = 0
    for it in range(1, tol.max_iter + 1):
        rd = Q @ x + c + A_eq.T @ y + A_in.T @ z
        re = A_eq @ x - b_eq
        ri = A_in @ x + s - b_in
        mu = float(s @ z) / mi
        merit = max(_norm(rd) / c_scale, max(_norm(re), _norm(ri)) / b_scale,
                    mu / (1.0 + abs(P.objective(x))))
        if not np.isfinite(merit):
            break
        if best is None or merit < best[0]:
            best = (merit, x, y, z, s)
        if merit <= 1e-11:
            converged = True
            break
        # past this point the scaled system is too ill-conditioned to help
        if _norm(x) > 1e12 or _norm(z) > 1e14 or (merit > 1e3 * best[0] and best[0] < 1e-8):
            break
        w = z / s
        try:
            kkt = _KKTSystem(Q, A_eq, A_in, w, reg)
        except (np.linalg.LinAlgError, ValueError):
            break

        def direction(rsz):
            rhs1 = -rd - A_in.T @ ((-rsz + z * ri) / s)
            dx, dy = kkt.solve(np.concatenate([rhs1, -re]))
            ds = -ri - A_in @ dx
            dz = (-rsz - z * ds) / s
            return dx, dy, dz, ds

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            dx, dy, dz, ds = direction(s * z)
            ap, ad = _max_step(s, ds), _max_step(z, dz)
            if not linear:
                ap = ad = min(ap, ad)
            mu_aff = float((s + ap * ds) @ (z + ad * dz)) / mi
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            dx, dy, dz, ds = direction(s * z + ds * dz - sigma * mu)
        tau = max(0.99, 1.0 - 10.0 * mu)
        ap, ad = tau * _max_step(s, ds), tau * _max_step(z, dz)
        if not linear:
            ap = ad = min(ap, ad)
        if not np.all(np.isfinite(dx)) or not np.all(np.isfinite(dz)):
            break
        x = x + ap * dx
        s = s + ap * ds
        y = y + ad * dy
        z = z + ad * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)
    if best is not None and not converged:
        _, x, y, z, s = best
    return x, y, z, s, it, converged


def _equality_only(P: QuadraticProgram, tol: Tolerances):
    n, me = P.n_vars, P.b_eq.size
    K = np.zeros((n + me, n + me))
    K[:n, :n] = P.Q
    K[:n, n:] = P.A_eq.T
    K[n:, :n] = P.A_eq
    rhs = np.concatenate([-P.c, P.b_eq])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def _polish(P: QuadraticProgram, x, y, z, s):
    """Solve the equality-constrained KKT system on the guessed active set.

    Works in correction form with a minimum-norm solution so that, when the
    active set leaves directions undetermined (non-unique primal or dual),
    the result stays close to the interior-point iterate.
    """
    n, me = P.n_vars, P.b_eq.size
    act = np.flatnonzero(z > s)
    A_act = P.A_in[act]
    na = act.size
    K = np.zeros((n + me + na, n + me + na))
    K[:n, :n] = P.Q
    K[:n, n : n + me] = P.A_eq.T
    K[:n, n + me :] = A_act.T
    K[n : n + me, :n] = P.A_eq
    K[n + me :, :n] = A_act
    z_act = z[act]
    r1 = P.Q @ x + P.c + P.A_eq.T @ y + A_act.T @ z_act
    r2 = P.A_eq @ x - P.b_eq
    r3 = A_act @ x - P.b_in[act]
    d, *_ = np.linalg.lstsq(K, -np.concatenate([r1, r2, r3]), rcond=None)
    x2 = x + d[:n]
    y2 = y + d[n : n + me]
    z2 = np.zeros_like(z)
    z2[act] = z_act + d[n + me :]
    return x2, y2, z2


def _finish(P, x, y, z, it, tol, polished, message=""):
    stat, infeas, comp = kkt_residuals(P, x, y, z)
    c_scale = 1.0 + _norm(P.c)
    ok = (
        stat <= tol.kkt * c_scale
        and infeas <= tol.feasibility
        and comp <= tol.complementarity
        and (z.size == 0 or z.min() >= -tol.dual_feasibility)
    )
    status = Status.OPTIMAL if ok else Status.MAX_ITERATIONS
    if not ok and not message:
        message = (
            f"KKT certification failed: stationarity={stat:.3e}, "
            f"infeasibility={infeas:.3e}, complementarity={comp:.3e}"
        )
    dual_obj = float(-0.5 * x @ P.Q @ x - P.b_eq @ y - P.b_in @ z)
    return QpSolution(
        x=x,
        y_eq=y,
        z_in=z,
        status=status,
        objective=P.objective(x),
        dual_objective=dual_obj,
        stationarity=stat,
        primal_infeasibility=infeas,
        complementarity=comp,
        iterations=it,
        polished=polished,
        message=message,
        slack=P.b_in - P.A_in @ x,
    )


def _score(P, x, y, z):
    stat, infeas, comp = kkt_residuals(P, x, y, z)
    neg = max(0.0, -float(z.min())) if z.size else 0.0
    return max(stat / (1.0 + _norm(P.c)), infeas, comp, neg)


def _phase_one(P: QuadraticProgram, tol: Tolerances):
    """Minimise total constraint violation.  Returns (violation, certificate)."""
    n, me, mi = P.n_vars, P.b_eq.size, P.b_in.size
    nv = n + 2 * me + mi
    c = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    A_eq = np.hstack([P.A_eq, np.eye(me), -np.eye(me), np.zeros((me, mi))])
    A_in = np.vstack(
        [
            np.hstack([P.A_in, np.zeros((mi, 2 * me)), -np.eye(mi)]),
            np.hstack([np.zeros((2 * me + mi, n)), -np.eye(2 * me + mi)]),
        ]
    )
    b_in = np.concatenate([P.b_in, np.zeros(2 * me + mi)])
    aux = QuadraticProgram(c=c, A_eq=A_eq, b_eq=P.b_eq, A_in=A_in, b_in=b_in)
    x, y, z, s, _, _ = _ipm(aux, tol)
    x, y, z = _polish(aux, x, y, z, s)
    violation = float(c @ x)
    y_cert, z_cert = y, np.maximum(z[:mi], 0.0)
    gap = float(P.b_eq @ y_cert + P.b_in @ z_cert)
    return violation, FarkasCertificate(y_eq=y_cert, z_in=z_cert, gap=gap)


def _unbounded_direction(P: QuadraticProgram, tol: Tolerances):
    """Look for d with Qd = 0, A_eq d = 0, A_in d <= 0 and c'd < 0."""
    n = P.n_vars
    A_eq = np.vstack([P.Q, P.A_eq])
    A_eq = A_eq[np.any(A_eq != 0.0, axis=1)]
    A_in = np.vstack([P.A_in, np.eye(n), -np.eye(n)])
    b_in = np.concatenate([np.zeros(P.b_in.size), np.ones(2 * n)])
    aux = QuadraticProgram(c=P.c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), A_in=A_in, b_in=b_in)
    x, y, z, s, _, _ = _ipm(aux, tol)
    return x, float(P.c @ x)


def solve_qp(problem: QuadraticProgram, tol: Tolerances = DEFAULT_TOLERANCES) -> QpSolution:
    """Solve a convex QP and certify the result through its KKT residuals.

    Dimension mismatches are rejected when the :class:`QuadraticProgram` is
    built.  A non-converging solve is diagnosed: infeasible problems come
    back with a Farkas certificate, unbounded ones with status
    ``unbounded``, anything else as ``max-iterations`` with the residuals
    in ``message``.
    """
    P = problem
    P.check_convexity()
    if P.b_in.size == 0:
        x, y = _equality_only(P, tol)
        sol = _finish(P, x, y, np.zeros(0), 1, tol, polished=False)
        if sol.optimal:
            return sol
        return _diagnose(P, tol, sol)

    x, y, z, s, it, _ = _ipm(P, tol)
    polished = False
    if np.all(np.isfinite(x)) and np.all(np.isfinite(z)):
        best_score = _score(P, x, y, z)
        for _ in range(2):
            try:
                xp, yp, zp = _polish(P, x, y, z, s)
            except np.linalg.LinAlgError:
                break
            if zp.min() < -tol.dual_feasibility:
                break
            zp = np.maximum(zp, 0.0)
            sc = _score(P, xp, yp, zp)
            if sc > best_score:
                break
            x, y, z, best_score, polished = xp, yp, zp, sc, True
            s = np.maximum(P.b_in - P.A_in @ x, 0.0)
    sol = _finish(P, x, y, z, it, tol, polished=polished)
    if sol.optimal:
        return sol
    return _diagnose(P, tol, sol)


def _diagnose(P, tol, sol):
    violation, cert = _phase_one(P, tol)
    if violation > max(tol.feasibility, 1e-9) and cert.gap < 0:
        return _replace(sol, status=Status.INFEASIBLE, certificate=cert,
                        message=f"infeasible: minimum total violation {violation:.6g}")
    _, slope = _unbounded_direction(P, tol)
    if slope < -1e-8 * (1.0 + _norm(P.c)):
        return _replace(sol, status=Status.UNBOUNDED, message="objective unbounded below along a recession direction")
    return sol


def _replace(sol, **kw):
    from dataclasses import replace

    return replace(sol, **kw)


def solve_lp(problem: QuadraticProgram, tol: Tolerances = DEFAULT_TOLERANCES, check_unique=True,
             seed: int = 20210504) -> QpSolution:
    """Solve an LP (``Q`` must be zero) and optionally test vertex uniqueness.

    Uniqueness is probed by re-solving with the cost vector perturbed by
    ``+/- eps * r`` for a fixed pseudo-random ``r``; ``eps`` scales with
    ``1 + max|c|``.  If the optimum moves by more than
    ``tol.uniqueness_move`` the solution is flagged as non-unique.
    """
    if not problem.is_linear:
        raise ValueError("solve_lp requires Q = 0")
    sol = solve_qp(problem, tol)
    if not check_unique or not sol.optimal:
        return sol
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, problem.n_vars)
    eps = tol.uniqueness_perturbation * (1.0 + _norm(problem.c))
    moved = 0.0
    for sign in (1.0, -1.0):
        pert = QuadraticProgram(c=problem.c + sign * eps * r, A_eq=problem.A_eq, b_eq=problem.b_eq,
                                A_in=problem.A_in, b_in=problem.b_in)
        other = solve_qp(pert, tol)
        if not other.optimal:
            return _replace(sol, unique=False, message="perturbed re-solve failed")
        moved = max(moved, _norm(other.x - sol.x))
    return _replace(sol, unique=bool(moved <= tol.uniqueness_move))
