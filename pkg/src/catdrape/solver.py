"""Reaction-force minimization over the catenary network.

Variables are one horizontal force per free catenary followed by the shared
slope variables still free in the network.  The objective is ``|H|`` and every
catenary contributes one length equality.  Each length depends only on its own
H and on the shared slopes bound to its ends, which gives the Jacobian its
block sparsity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import SLOPE_LIMIT, CatenaryNetwork, CatenarySpec
from .catenary import (
    DEFAULT_NPT,
    FREE,
    H_MIN,
    BoundaryCondition,
    CatenaryError,
    CatenarySolution,
    LocalFrame,
    Material,
    estimate_H,
    length_sensitivity,
    polyline_length,
    sample,
    solve_catenary,
    solve_for_length,
)
from .contact import ContactRegistry

MIN_SPAN = 1e-6  # shorter spans are drawn straight instead of solved


class EmptyProblem(ValueError):
    pass


class MemberSolveError(RuntimeError):
    def __init__(self, member_id: str, cause: Exception):
        self.member_id = member_id
        super().__init__(f"catenary {member_id}: {cause}")


@dataclass(frozen=True)
class Member:
    """A free catenary as seen by the NLP.

    An end slope is either a variable (``var_a``/``var_b`` index into the
    variable vector), a fixed value (``fixed_a``/``fixed_b``) or free.
    """

    id: str
    origin: str
    kind: str
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    L_set: float
    var_a: int | None = None
    var_b: int | None = None
    fixed_a: float | None = None
    fixed_b: float | None = None

    @property
    def frame(self) -> LocalFrame:
        return LocalFrame.from_anchors(self.a, self.b)

    def conditions(self, x: np.ndarray) -> tuple[BoundaryCondition, BoundaryCondition]:
        return self._bc(x, self.var_a, self.fixed_a), self._bc(x, self.var_b, self.fixed_b)

    @staticmethod
    def _bc(x, var, fixed) -> BoundaryCondition:
        if var is not None:
            return BoundaryCondition.prescribed(float(x[var]))
        if fixed is not None:
            return BoundaryCondition.prescribed(fixed)
        return FREE


@dataclass(frozen=True)
class TautMember:
    id: str
    origin: str
    kind: str
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    L_set: float

    @property
    def overstretch(self) -> float:
        return float(np.linalg.norm(self.b - self.a)) - self.L_set


@dataclass(frozen=True)
class OverlengthMember:
    """A span too stiff to take up its set length even at H_min.

    It is left out of the NLP and drawn at H_min with its end slopes frozen at
    the values they had when it was detached.
    """

    id: str
    origin: str
    kind: str
    solution: CatenarySolution = field(repr=False)
    excess: float


@dataclass
class NlpProblem:
    members: list[Member]
    shared_ids: list[int]  # network shared-slope index of each slope variable
    material: Material
    n_pt: int = DEFAULT_NPT
    slope_limit: float = SLOPE_LIMIT
    taut: list[TautMember] = field(default_factory=list)
    overlength: list[OverlengthMember] = field(default_factory=list)

    @property
    def n_cat(self) -> int:
        return len(self.members)

    @property
    def n_shared(self) -> int:
        return len(self.shared_ids)

    @property
    def n_var(self) -> int:
        return self.n_cat + self.n_shared

    @property
    def L_set(self) -> np.ndarray:
        return np.array([m.L_set for m in self.members])

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([np.full(self.n_cat, H_MIN), np.full(self.n_shared, -self.slope_limit)])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([np.full(self.n_cat, np.inf), np.full(self.n_shared, self.slope_limit)])

    @property
    def sparsity(self) -> list[tuple[int, ...]]:
        out = []
        for i, m in enumerate(self.members):
            cols = [i] + [v for v in (m.var_a, m.var_b) if v is not None]
            out.append(tuple(sorted(set(cols))))
        return out

    def index(self, member_id: str) -> int:
        for i, m in enumerate(self.members):
            if m.id == member_id:
                return i
        raise KeyError(member_id)

    def solve_member(self, i: int, x: np.ndarray) -> CatenarySolution:
        m = self.members[i]
        bc_a, bc_b = m.conditions(x)
        try:
            return solve_catenary(m.frame, float(x[i]), bc_a, bc_b, self.material)
        except (CatenaryError, ValueError) as exc:
            raise MemberSolveError(m.id, exc) from exc

    def solutions(self, x: np.ndarray) -> dict[str, CatenarySolution]:
        return {m.id: self.solve_member(i, x) for i, m in enumerate(self.members)}

    def initial_point(
        self,
        H: dict[str, float] | None = None,
        slopes: dict[int, float] | None = None,
    ) -> np.ndarray:
        """Warm start from previous values where known, else the parabolic estimate and zero slopes."""
        H = H or {}
        slopes = slopes or {}
        x = np.empty(self.n_var)
        for i, m in enumerate(self.members):
            h = H.get(m.id)
            x[i] = h if h is not None and h >= H_MIN else estimate_H(m.frame, m.L_set, self.material)
        for k, sid in enumerate(self.shared_ids):
            x[self.n_cat + k] = np.clip(slopes.get(sid, 0.0), -self.slope_limit, self.slope_limit)
        return x

    def unpack(self, x: np.ndarray) -> tuple[dict[str, float], dict[int, float]]:
        H = {m.id: float(x[i]) for i, m in enumerate(self.members)}
        s = {sid: float(x[self.n_cat + k]) for k, sid in enumerate(self.shared_ids)}
        return H, s


def _anchor(positions: np.ndarray, anchor) -> np.ndarray:
    if isinstance(anchor, (int, np.integer)):
        return np.array(positions[int(anchor)], dtype=float)
    return np.array(anchor, dtype=float)


def assemble_nlp(
    net: CatenaryNetwork,
    registry: ContactRegistry,
    positions: np.ndarray,
    material: Material,
    *,
    excluded: set[str] = frozenset(),
    diagonal_lengths: dict[str, float] | None = None,
    diagonal_slopes: dict[str, tuple[float, float]] | None = None,
    governed: dict[tuple[str, str], float] | None = None,
    n_pt: int = DEFAULT_NPT,
    taut_margin: float = 1e-7,
) -> NlpProblem:
    """Collect the free catenaries and their slope couplings.

    ``excluded`` holds original ids left out entirely (shearing diagonals).
    ``diagonal_lengths`` overrides diagonal set lengths, ``diagonal_slopes``
    gives the end slopes of diagonal ends bound as derived (0 if missing) and
    ``governed`` prescribes edge-end slopes keyed by ``(original id, "A"|"B")``.
    Members whose chord reaches ``L_set - taut_margin``, or whose horizontal
    span is below MIN_SPAN, are listed as taut and carry no variable.
    """
    diagonal_lengths = diagonal_lengths or {}
    diagonal_slopes = diagonal_slopes or {}
    governed = governed or {}
    pos = np.asarray(positions, dtype=float)

    governed_shared = set()
    for spec in net.catenaries:
        for end, bind in (("A", spec.bind_a), ("B", spec.bind_b)):
            if bind.kind == "shared" and (spec.id, end) in governed:
                governed_shared.add(bind.index)

    pending: list[tuple[CatenarySpec, np.ndarray, np.ndarray, float]] = []
    taut: list[TautMember] = []
    for spec in net.catenaries:
        if spec.id in excluded:
            continue
        for member in registry.members(spec):
            a, b = _anchor(pos, member.anchor_a), _anchor(pos, member.anchor_b)
            L = member.L_set
            if member.parent is None and spec.kind == "diagonal":
                L = diagonal_lengths.get(spec.id, L)
            if float(np.linalg.norm(b - a)) >= L - taut_margin or math.hypot(*(b - a)[:2]) < MIN_SPAN:
                taut.append(TautMember(member.id, spec.id, spec.kind, a, b, L))
            else:
                pending.append((member, a, b, L))
    if not pending:
        raise EmptyProblem("no free catenaries")

    used = sorted(
        {
            bind.index
            for member, *_ in pending
            for bind in (member.bind_a, member.bind_b)
            if bind.kind == "shared" and bind.index not in governed_shared
        }
    )
    n_cat = len(pending)
    var_of = {sid: n_cat + k for k, sid in enumerate(used)}

    members = []
    for member, a, b, L in pending:
        origin = member.origin
        ends = {}
        for end, bind in (("A", member.bind_a), ("B", member.bind_b)):
            # children keep the original end label on their gripper side
            gripper_end = member.parent is None or (member.side == "L") == (end == "A")
            var = fixed = None
            if gripper_end and (origin, end) in governed:
                fixed = governed[(origin, end)]
            elif bind.kind == "shared":
                var = var_of[bind.index]
            elif bind.kind == "fixed":
                fixed = bind.value
            elif bind.kind == "derived":
                fixed = diagonal_slopes.get(origin, (0.0, 0.0))[0 if end == "A" else 1]
            ends[end] = (var, fixed)
        members.append(
            Member(
                member.id,
                origin,
                member.kind,
                a,
                b,
                float(L),
                var_a=ends["A"][0],
                var_b=ends["B"][0],
                fixed_a=ends["A"][1],
                fixed_b=ends["B"][1],
            )
        )
    return NlpProblem(members, used, material, n_pt, net.grid.slope_limit, taut)


def objective_and_gradient(x: np.ndarray, n_cat: int) -> tuple[float, np.ndarray]:
    """``|H|`` over the first ``n_cat`` entries; slope entries get zero gradient."""
    H = np.asarray(x[:n_cat], dtype=float)
    value = float(np.linalg.norm(H))
    g = np.zeros(len(x))
    g[:n_cat] = H / value
    return value, g


def constraint_values(x: np.ndarray, problem: NlpProblem) -> np.ndarray:
    return np.array(
        [polyline_length(sample(problem.solve_member(i, x), problem.n_pt)) - m.L_set for i, m in enumerate(problem.members)]
    )


def constraints_and_jacobian(x: np.ndarray, problem: NlpProblem) -> tuple[np.ndarray, sp.csr_matrix]:
    """Length residuals and their semi-analytic Jacobian (CSR, pattern entries only)."""
    n = problem.n_cat
    r = np.empty(n)
    rows, cols, vals = [], [], []
    for i, m in enumerate(problem.members):
        sol = problem.solve_member(i, x)
        L0 = polyline_length(sample(sol, problem.n_pt))
        r[i] = L0 - m.L_set
        try:
            entries = [(i, length_sensitivity(sol, "H", problem.n_pt, L0))]
            if m.var_a is not None:
                entries.append((m.var_a, length_sensitivity(sol, "slope_A", problem.n_pt, L0)))
            if m.var_b is not None:
                entries.append((m.var_b, length_sensitivity(sol, "slope_B", problem.n_pt, L0)))
        except (CatenaryError, ValueError) as exc:
            raise MemberSolveError(m.id, exc) from exc
        acc: dict[int, float] = {}
        for col, v in entries:
            acc[col] = acc.get(col, 0.0) + v
        for col in sorted(acc):
            rows.append(i)
            cols.append(col)
            vals.append(acc[col])
    J = sp.csr_matrix((vals, (rows, cols)), shape=(n, problem.n_var))
    return r, J


def detach_overlength(problem: NlpProblem, x: np.ndarray, tol: float) -> tuple[NlpProblem, np.ndarray]:
    """Move members whose length at H_min falls short of L_set by more than ``tol`` out of the NLP."""
    keep, dropped = [], []
    for i, m in enumerate(problem.members):
        bc_a, bc_b = m.conditions(x)
        try:
            sol = solve_catenary(m.frame, H_MIN, bc_a, bc_b, problem.material)
        except (CatenaryError, ValueError) as exc:
            raise MemberSolveError(m.id, exc) from exc
        excess = m.L_set - polyline_length(sample(sol, problem.n_pt))
        if excess > tol:
            dropped.append(OverlengthMember(m.id, m.origin, m.kind, sol, excess))
        else:
            keep.append(i)
    if not dropped:
        return problem, x
    n_old, n_new = problem.n_cat, len(keep)
    used = sorted({v for i in keep for v in (problem.members[i].var_a, problem.members[i].var_b) if v is not None})
    remap = {v: n_new + k for k, v in enumerate(used)}
    members = [
        replace(
            problem.members[i],
            var_a=remap.get(problem.members[i].var_a),
            var_b=remap.get(problem.members[i].var_b),
        )
        for i in keep
    ]
    shared_ids = [problem.shared_ids[v - n_old] for v in used]
    x_new = np.concatenate([x[keep], x[used]]) if used else np.array(x[keep])
    new = NlpProblem(members, shared_ids, problem.material, problem.n_pt, problem.slope_limit, problem.taut, problem.overlength + dropped)
    return new, x_new


def restore_feasibility(problem: NlpProblem, x: np.ndarray) -> np.ndarray:
    """Re-solve each H for its own length at the current slopes (1D, per member)."""
    x = np.array(x, dtype=float)
    for i, m in enumerate(problem.members):
        bc_a, bc_b = m.conditions(x)
        try:
            sol = solve_for_length(m.frame, m.L_set, bc_a, bc_b, problem.material, problem.n_pt, H0=float(x[i]))
        except (CatenaryError, ValueError):
            continue
        x[i] = sol.H
    return x


# --------------------------------------------------------------------------- SQP


@dataclass(frozen=True)
class SqpOptions:
    max_iter: int = 100
    kkt_tol: float = 1e-6
    constraint_tol: float = 1e-10
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    fraction_to_boundary: float = 0.995
    merit_margin: float = 1.0
    damping: float = 0.2
    max_active_set_iter: int = 50

    def __post_init__(self) -> None:
        if self.max_iter < 0 or self.kkt_tol <= 0 or self.constraint_tol <= 0:
            raise ValueError("invalid SQP options")
        if not (0 < self.armijo < 0.5 and 0 < self.backtrack < 1 and 0 < self.fraction_to_boundary < 1):
            raise ValueError("invalid line-search options")


CONVERGED, MAX_ITER, INFEASIBLE = "Converged", "MaxIter", "Infeasible"


@dataclass
class SqpResult:
    x: np.ndarray
    objective: float
    residuals: np.ndarray
    iterations: int
    status: str
    kkt: float
    multipliers: np.ndarray
    message: str = ""
    merit_history: list[tuple[float, float, float]] = field(default_factory=list)
    evaluations: int = 0

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _active(x, lower, upper, boxed, tol=1e-12):
    lo = boxed & (x - lower <= tol)
    hi = boxed & (upper - x <= tol)
    return lo, hi


def _multipliers(g, J, free):
    Jf = J[:, free]
    lam, *_ = np.linalg.lstsq(Jf.T, -g[free], rcond=None)
    return lam


def _stationarity(g, J, lam, lo, hi) -> float:
    r = g + J.T @ lam
    r = np.where(lo, np.minimum(r, 0.0), r)
    r = np.where(hi, np.maximum(r, 0.0), r)
    return float(np.max(np.abs(r))) if len(r) else 0.0


def _solve_kkt(B, g, J, c, fixed_d: dict[int, float]):
    n = len(g)
    m = J.shape[0]
    free = np.array([k for k in range(n) if k not in fixed_d], dtype=int)
    dW = np.zeros(n)
    for k, v in fixed_d.items():
        dW[k] = v
    Bf = B[np.ix_(free, free)]
    Jf = J[:, free]
    rhs_top = -g[free] - B[free] @ dW
    rhs_bot = -c - J @ dW
    K = np.block([[Bf, Jf.T], [Jf, np.zeros((m, m))]])
    rhs = np.concatenate([rhs_top, rhs_bot])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    d = dW.copy()
    d[free] = sol[: len(free)]
    return d, sol[len(free) :]  # g + B d + J^T lam = 0 on the free variables


def _qp_step(B, g, J, c, x, lower, upper, boxed, opts: SqpOptions, warm: dict[int, str]):
    """Equality QP with an active set on the boxed variables' bounds."""
    work = dict(warm)
    for _ in range(opts.max_active_set_iter):
        fixed = {k: (lower[k] if side == "lo" else upper[k]) - x[k] for k, side in work.items()}
        d, lam = _solve_kkt(B, g, J, c, fixed)
        xn = x + d
        viol_lo = [k for k in np.flatnonzero(boxed) if k not in work and xn[k] < lower[k] - 1e-14]
        viol_hi = [k for k in np.flatnonzero(boxed) if k not in work and xn[k] > upper[k] + 1e-14]
        if viol_lo or viol_hi:
            for k in viol_lo:
                work[k] = "lo"
            for k in viol_hi:
                work[k] = "hi"
            continue
        # bound multipliers: grad of the QP Lagrangian on fixed variables
        grad = g + B @ d + J.T @ lam
        worst, worst_val = None, 0.0
        for k, side in work.items():
            mu = grad[k] if side == "lo" else -grad[k]
            if mu < worst_val:
                worst, worst_val = k, mu
        if worst is None:
            return d, lam, work
        del work[worst]
    return d, lam, work


def sqp_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    cons: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    cons_values: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    interior: np.ndarray,
    opts: SqpOptions | None = None,
) -> SqpResult:
    """Damped-BFGS SQP with an l1 merit line search.

    Bounds of variables flagged ``interior`` are kept by a fraction-to-boundary
    rule, the other finite bounds by the active set of the QP.
    """
    opts = opts or SqpOptions()
    x = np.clip(np.array(x0, dtype=float), lower, upper)
    n = len(x)
    interior = np.asarray(interior, dtype=bool)
    boxed = ~interior & (np.isfinite(lower) | np.isfinite(upper))
    B = np.eye(n)
    scaled = False
    nu = 0.0
    history: list[tuple[float, float, float]] = []
    evals = 0

    f, g = fun(x)
    c, J = cons(x)
    J = J.toarray() if sp.issparse(J) else np.asarray(J)
    evals += 1
    warm: dict[int, str] = {}
    status, message, it = MAX_ITER, "", 0
    lam = np.zeros(len(c))
    kkt = math.inf
    for it in range(opts.max_iter + 1):
        lo, hi = _active(x, lower, upper, boxed)
        free = ~(lo | hi)
        lam = _multipliers(g, J, free)
        kkt = _stationarity(g, J, lam, lo, hi)
        cmax = float(np.max(np.abs(c))) if len(c) else 0.0
        if cmax <= opts.constraint_tol and kkt <= opts.kkt_tol:
            status, message = CONVERGED, "KKT conditions satisfied"
            break
        if it == opts.max_iter:
            message = "iteration limit"
            break

        d, lam_qp, warm = _qp_step(B, g, J, c, x, lower, upper, boxed, opts, warm)
        nu = max(nu, float(np.max(np.abs(lam_qp))) + opts.merit_margin if len(lam_qp) else 0.0)

        neg = interior & (d < 0) & np.isfinite(lower)
        alpha = 1.0
        if np.any(neg):
            alpha = min(1.0, float(np.min(opts.fraction_to_boundary * (x[neg] - lower[neg]) / -d[neg])))
        phi0 = f + nu * float(np.sum(np.abs(c)))
        slope = float(g @ d) - nu * float(np.sum(np.abs(c)))

        accepted = None
        first = True
        while alpha >= opts.min_step:
            xt = np.clip(x + alpha * d, lower, upper)
            try:
                ft, _ = fun(xt)
                ct = cons_values(xt)
                evals += 1
                phit = ft + nu * float(np.sum(np.abs(ct)))
            except (MemberSolveError, CatenaryError, ValueError):
                phit = math.inf
            if phit <= phi0 + opts.armijo * alpha * slope:
                accepted = (xt, phit)
                break
            if first and alpha == 1.0 and math.isfinite(phit):
                # second-order correction against the Maratos effect
                free_t = np.array([k for k in range(n) if k not in warm], dtype=int)
                Jf = J[:, free_t]
                try:
                    corr = -Jf.T @ np.linalg.solve(Jf @ Jf.T, ct)
                    xs = x + d
                    xs[free_t] += corr
                    if np.all(xs[interior] > lower[interior]):
                        xs = np.clip(xs, lower, upper)
                        fs, _ = fun(xs)
                        cs = cons_values(xs)
                        evals += 1
                        phis = fs + nu * float(np.sum(np.abs(cs)))
                        if phis <= phi0 + opts.armijo * slope:
                            accepted = (xs, phis)
                            break
                except (np.linalg.LinAlgError, MemberSolveError, CatenaryError, ValueError):
                    pass
            first = False
            alpha *= opts.backtrack
        if accepted is None:
            message = "line search failed"
            break
        x_new, phi_new = accepted
        history.append((phi0, phi_new, nu))

        f_new, g_new = fun(x_new)
        c_new, J_new = cons(x_new)
        J_new = J_new.toarray() if sp.issparse(J_new) else np.asarray(J_new)
        evals += 1

        s = x_new - x
        y = (g_new + J_new.T @ lam_qp) - (g + J.T @ lam_qp)
        sy = float(s @ y)
        if not scaled and sy > 0:
            B = (float(y @ y) / sy) * np.eye(n)
            scaled = True
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs > 0:
            if sy < opts.damping * sBs:
                theta = (1 - opts.damping) * sBs / (sBs - sy)
                y = theta * y + (1 - theta) * Bs
                sy = float(s @ y)
            B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
        x, f, g, c, J = x_new, f_new, g_new, c_new, J_new

    cmax = float(np.max(np.abs(c))) if len(c) else 0.0
    if status != CONVERGED and cmax > opts.constraint_tol:
        status = INFEASIBLE
    return SqpResult(x, f, c, it, status, kkt, lam, message, history, evals)


def sqp_solve(problem: NlpProblem, x0: np.ndarray, opts: SqpOptions | None = None) -> SqpResult:
    """Run the SQP on an assembled network problem."""
    lower, upper = problem.lower, problem.upper
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n_var,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({problem.n_var},)")
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("x0 outside the bounds")
    interior = np.zeros(problem.n_var, dtype=bool)
    interior[: problem.n_cat] = True
    n_cat = problem.n_cat
    return sqp_minimize(
        lambda x: objective_and_gradient(x, n_cat),
        lambda x: constraints_and_jacobian(x, problem),
        lambda x: constraint_values(x, problem),
        x0,
        lower,
        upper,
        interior,
        opts,
    )


# ------------------------------------------------------------------ gradient check

OBJECTIVE_TOL = 1e-8
JACOBIAN_TOL = 1e-4
OFF_PATTERN_TOL = 1e-10


@dataclass(frozen=True)
class GradientReport:
    mode: str
    max_error: float
    tolerance: float
    failing: list[tuple[int, int, float]]
    off_pattern_max: float = 0.0
    entries: list[tuple[int, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance and not self.failing and self.off_pattern_max <= OFF_PATTERN_TOL


def _ofd_steps(problem: NlpProblem, x: np.ndarray) -> np.ndarray:
    steps = np.full(problem.n_var, 1e-4)
    steps[: problem.n_cat] = 1e-4 * np.maximum(np.abs(x[: problem.n_cat]), H_MIN)
    return steps


def overall_jacobian(problem: NlpProblem, x: np.ndarray) -> np.ndarray:
    """Central overall finite differences of the full constraint function."""
    x = np.asarray(x, dtype=float)
    steps = _ofd_steps(problem, x)
    lower, upper = problem.lower, problem.upper
    J = np.zeros((problem.n_cat, problem.n_var))
    for k in range(problem.n_var):
        hp = min(steps[k], upper[k] - x[k])
        hm = min(steps[k], x[k] - lower[k])
        xp, xm = x.copy(), x.copy()
        xp[k] += hp
        xm[k] -= hm
        J[:, k] = (constraint_values(xp, problem) - constraint_values(xm, problem)) / (hp + hm)
    return J


def check_gradients(
    problem: NlpProblem,
    x: np.ndarray,
    mode: str = "jacobian",
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GradientReport:
    """Compare analytic (objective) or semi-analytic (Jacobian) derivatives against central OFD.

    Objective errors are ``|a - fd|_inf / |a|_inf``.  Jacobian errors are
    per entry, relative to the largest OFD magnitude in the same column.
    ``jacobian`` replaces the semi-analytic Jacobian (used to test the checker).
    """
    x = np.asarray(x, dtype=float)
    if mode == "objective":
        _, a = objective_and_gradient(x, problem.n_cat)
        h = 1e-5 * max(float(np.linalg.norm(x[: problem.n_cat])), H_MIN)
        fd = np.zeros(problem.n_var)
        for k in range(problem.n_cat):
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            fd[k] = (objective_and_gradient(xp, problem.n_cat)[0] - objective_and_gradient(xm, problem.n_cat)[0]) / (2 * h)
        err = float(np.max(np.abs(a - fd)) / np.max(np.abs(a)))
        failing = [(0, k, float(abs(a[k] - fd[k]))) for k in range(len(a)) if abs(a[k] - fd[k]) > OBJECTIVE_TOL * np.max(np.abs(a))]
        entries = [(0, k, float(a[k]), float(fd[k]), float(abs(a[k] - fd[k]) / np.max(np.abs(a)))) for k in range(len(a))]
        return GradientReport("objective", err, OBJECTIVE_TOL, failing, 0.0, entries)
    if mode != "jacobian":
        raise ValueError(f"unknown mode {mode!r}")
    A = jacobian(x) if jacobian is not None else constraints_and_jacobian(x, problem)[1].toarray()
    O = overall_jacobian(problem, x)
    pattern = np.zeros_like(O, dtype=bool)
    for i, cols in enumerate(problem.sparsity):
        pattern[i, list(cols)] = True
    scale = np.max(np.abs(np.where(pattern, O, 0.0)), axis=0)
    scale[scale == 0.0] = 1.0
    rel = np.abs(A - O) / scale
    failing, entries = [], []
    max_err = 0.0
    for i, k in zip(*np.nonzero(pattern | (A != 0))):
        e = float(rel[i, k])
        entries.append((int(i), int(k), float(A[i, k]), float(O[i, k]), e))
        max_err = max(max_err, e)
        if e > JACOBIAN_TOL:
            failing.append((int(i), int(k), e))
    off = float(np.max(np.abs(O[~pattern]))) if np.any(~pattern) else 0.0
    return GradientReport("jacobian", max_err, JACOBIAN_TOL, failing, off, entries)
