"""Trajectory stepping: move grippers, update shear and contact, solve, diagnose."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    CatenaryNetwork,
    UnitCell,
    detect_shear,
    diagonal_slopes,
    governed_slopes,
    reconcile_diagonals,
    shear_angle,
    shear_kinematics,
    shear_reaction,
)
from .catenary import (
    DEFAULT_NPT,
    CatenarySolution,
    Material,
    polyline_length,
    sample,
    straight,
)
from .contact import (
    DEFAULT_TOL,
    ContactEvent,
    ContactRegistry,
    DisjointContact,
    contact_ranges,
)
from .mold import MoldSurface
from .solver import (
    CONVERGED,
    INFEASIBLE,
    EmptyProblem,
    MemberSolveError,
    SqpOptions,
    assemble_nlp,
    detach_overlength,
    restore_feasibility,
    sqp_solve,
)


class MismatchedGrippers(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    start: np.ndarray
    target: np.ndarray
    n_steps: int

    def __post_init__(self) -> None:
        s = np.asarray(self.start, dtype=float)
        t = np.asarray(self.target, dtype=float)
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "target", t)
        if s.shape != t.shape:
            raise MismatchedGrippers(f"start {s.shape} vs target {t.shape}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    def positions(self, k: int) -> np.ndarray:
        """Gripper positions at 1-based iteration ``k``."""
        if not 1 <= k <= self.n_steps:
            raise IndexError(f"iteration {k} outside 1..{self.n_steps}")
        if k == self.n_steps and self.n_steps > 1:
            return self.target.copy()
        if k == 1:
            return self.start.copy()
        t = (k - 1) / (self.n_steps - 1)
        return self.start + t * (self.target - self.start)


def linear_trajectory(start, target, n_steps: int) -> list[np.ndarray]:
    """Per-iteration gripper positions, iteration 1 at ``start`` and iteration ``n_steps`` at ``target``."""
    traj = Trajectory(start, target, n_steps)
    return [traj.positions(k) for k in range(1, n_steps + 1)]


@dataclass(frozen=True)
class SimulationSettings:
    n_pt: int = DEFAULT_NPT
    contact_tol: float = DEFAULT_TOL
    w_tol: float = 2e-3
    r_tol: float = 0.02
    eps_coincide: float = 1e-4
    sqp: SqpOptions = field(default_factory=SqpOptions)
    slope_passes: int = 3
    slope_pass_tol: float = 1e-10

    @property
    def taut_margin(self) -> float:
        return 0.5 * self.sqp.constraint_tol


@dataclass(frozen=True)
class Flags:
    slack_present: bool = False
    shear_active: bool = False
    contact_established: bool = False
    wrinkle_indicated: bool = False
    bridging_indicated: bool = False
    solver_failure: bool = False

    def as_dict(self) -> dict[str, bool]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class SolveSummary:
    status: str
    iterations: int
    passes: int
    kkt: float
    max_residual: float
    objective: float


@dataclass(frozen=True)
class FabricState:
    """Snapshot after one iteration.

    ``pieces`` maps every original catenary id to the ordered polylines that
    make it up (a single curve, or child / frozen / child pieces after contact,
    or two halves after reconciliation).
    """

    iteration: int
    positions: np.ndarray = field(repr=False)
    cells: tuple[UnitCell, ...]
    registry: ContactRegistry = field(repr=False)
    solutions: dict[str, CatenarySolution] = field(repr=False)
    pieces: dict[str, list[np.ndarray]] = field(repr=False)
    H: dict[str, float]
    slopes: dict[int, float]
    diagonal_slopes: dict[str, tuple[float, float]]
    diagonal_lengths: dict[str, float]
    residuals: dict[str, float]
    taut: dict[str, float]
    overlength: dict[str, float]
    separations: dict[int, float]
    shear_reactions: dict[int, float]
    events: tuple[ContactEvent, ...]
    bridging: tuple[str, ...]
    wrinkle_reasons: tuple[str, ...]
    flags: Flags
    solve: SolveSummary | None
    max_offset: float

    def polyline(self, catenary_id: str) -> np.ndarray:
        """All pieces of an original catenary joined into one polyline."""
        parts = self.pieces[catenary_id]
        out = [parts[0]]
        for p in parts[1:]:
            out.append(p[1:] if np.array_equal(p[0], out[-1][-1]) else p)
        return np.vstack(out)


@dataclass
class DrapeTrace:
    states: list[FabricState]
    timings: list[float]
    network: CatenaryNetwork = field(repr=False)
    targets: np.ndarray = field(repr=False)
    n_pt: int = DEFAULT_NPT

    def __len__(self) -> int:
        return len(self.states)

    @property
    def final(self) -> FabricState:
        return self.states[-1]


class DrapeSimulation:
    """Static context of a run: network, mold, material and settings."""

    def __init__(
        self,
        network: CatenaryNetwork,
        mold: MoldSurface,
        material: Material,
        targets: np.ndarray,
        settings: SimulationSettings | None = None,
    ):
        self.net = network
        self.mold = mold
        self.material = material
        self.targets = np.asarray(targets, dtype=float)
        self.settings = settings or SimulationSettings()

    def blank_state(self, positions: np.ndarray) -> FabricState:
        return FabricState(
            iteration=0,
            positions=np.asarray(positions, dtype=float),
            cells=tuple(self.net.cells),
            registry=ContactRegistry(),
            solutions={},
            pieces={},
            H={},
            slopes={},
            diagonal_slopes={},
            diagonal_lengths={},
            residuals={},
            taut={},
            overlength={},
            separations={},
            shear_reactions={},
            events=(),
            bridging=(),
            wrinkle_reasons=(),
            flags=Flags(),
            solve=None,
            max_offset=0.0,
        )

    # ---------------------------------------------------------------- shear
    def _update_shear(self, cells, positions, registry: ContactRegistry) -> tuple[UnitCell, ...]:
        out = []
        for cell in cells:
            if cell.is_shearing:
                spec = self.net.by_id[cell.shear_state]
                d = float(np.linalg.norm(positions[spec.anchor_b] - positions[spec.anchor_a]))
                out.append(replace(cell, gamma=shear_angle(d, cell.a)))
                continue
            lengths = tuple(self.net.by_id[d].L_set for d in cell.diagonals)
            decision = detect_shear(cell, positions, lengths)
            if decision.diagonal is not None and not registry.is_split(decision.diagonal):
                out.append(replace(cell, shear_state=decision.diagonal, gamma=decision.gamma))
            else:
                out.append(cell)
        return tuple(out)

    def _diagonal_lengths(self, cells, prev: FabricState) -> dict[str, float]:
        lengths = {}
        for cell in cells:
            if not cell.is_shearing:
                continue
            other = cell.other_diagonal(cell.shear_state)
            if prev.registry.is_split(other):
                continue
            lengths[other] = shear_kinematics(cell.a, cell.gamma)[1]
        return lengths

    # ---------------------------------------------------------------- slopes
    def _edge_slope_getter(self, sols, positions):
        """Slope of an edge at a gripper, measured away from it (chord slope if unsolved)."""

        def slope_at(edge_id: str, gripper: int) -> float:
            spec = self.net.by_id[edge_id]
            at_a = spec.anchor_a == gripper
            for cid in (edge_id, f"{edge_id}/L" if at_a else f"{edge_id}/R"):
                if cid in sols:
                    sol = sols[cid]
                    return float(sol.slope(0.0)) if at_a else -float(sol.slope(sol.frame.span))
            a, b = positions[spec.anchor_a], positions[spec.anchor_b]
            k = (b[2] - a[2]) / max(math.hypot(b[0] - a[0], b[1] - a[1]), 1e-12)
            return float(k) if at_a else float(-k)

        return slope_at

    def _derive_diagonal_slopes(self, cells, sols, positions) -> dict[str, tuple[float, float]]:
        getter = self._edge_slope_getter(sols, positions)
        out: dict[str, tuple[float, float]] = {}
        for cell in cells:
            out.update(diagonal_slopes(self.net, cell, positions, getter))
        return out

    # ---------------------------------------------------------------- solve
    def _solve(self, positions, cells, registry, prev: FabricState, diag_lengths):
        """Solve the NLP, re-deriving the diagonal end slopes from the solved edges.

        Edges never depend on the diagonals, so a second pass with slopes from
        the first pass's edges is already consistent; further passes only run
        if the edges moved.
        """
        st = self.settings
        excluded = {c.shear_state for c in cells if c.is_shearing}
        governed = governed_slopes(self.net, list(cells), positions)
        diag_slopes = dict(prev.diagonal_slopes)
        H_prev, s_prev = dict(prev.H), dict(prev.slopes)
        problem = result = None
        passes = 0
        for passes in range(1, st.slope_passes + 1):
            try:
                problem = assemble_nlp(
                    self.net,
                    registry,
                    positions,
                    self.material,
                    excluded=excluded,
                    diagonal_lengths=diag_lengths,
                    diagonal_slopes=diag_slopes,
                    governed=governed,
                    n_pt=st.n_pt,
                    taut_margin=st.taut_margin,
                )
            except EmptyProblem:
                problem, result = None, None
                break
            x0 = problem.initial_point(H_prev, s_prev)
            problem, x0 = detach_overlength(problem, x0, st.sqp.constraint_tol)
            if problem.n_cat == 0:
                result = None
                sols = {}
            else:
                result = sqp_solve(problem, restore_feasibility(problem, x0), st.sqp)
                if result.status == INFEASIBLE:
                    break
                sols = problem.solutions(result.x)
                H_prev, s_prev = problem.unpack(result.x)
            sols.update({o.id: o.solution for o in problem.overlength})
            new = self._derive_diagonal_slopes(cells, sols, positions)
            change = max(
                (abs(new[k][e] - diag_slopes[k][e]) if k in diag_slopes else math.inf for k in new for e in (0, 1)),
                default=0.0,
            )
            diag_slopes = new
            if not change > st.slope_pass_tol:
                break
        if problem is None:
            taut = assemble_taut(self.net, registry, positions, excluded, diag_lengths)
        else:
            taut = {t.id: t.overstretch for t in problem.taut}
        return problem, result, diag_slopes, taut, passes

    # ---------------------------------------------------------------- step
    def step(self, prev: FabricState, positions: np.ndarray) -> FabricState:
        st = self.settings
        positions = np.array(positions, dtype=float)
        if positions.shape != prev.positions.shape:
            raise MismatchedGrippers(f"{positions.shape} vs {prev.positions.shape}")
        registry = prev.registry.copy()
        cells = self._update_shear(prev.cells, positions, registry)
        diag_lengths = self._diagonal_lengths(cells, prev)
        diag_lengths_all = {d.id: diag_lengths.get(d.id, d.L_set) for d in self.net.diagonals}

        try:
            problem, result, diag_slopes, taut, passes = self._solve(positions, cells, registry, prev, diag_lengths)
            failure = result is not None and result.status == INFEASIBLE
        except MemberSolveError:
            problem, result, failure = None, None, True
            diag_slopes, taut, passes = dict(prev.diagonal_slopes), {}, 0

        if failure:
            # carry the previous solution forward, no contact update
            flags = replace(prev.flags, solver_failure=True, bridging_indicated=False)
            summary = None
            if result is not None:
                summary = SolveSummary(result.status, result.iterations, passes, result.kkt, result.max_residual, result.objective)
            return replace(
                prev,
                iteration=prev.iteration + 1,
                positions=positions,
                cells=cells,
                registry=registry,
                events=(),
                bridging=(),
                flags=flags,
                solve=summary,
                max_offset=self._offset(positions),
            )

        sols, H, slopes, residuals, overlength = {}, {}, {}, {}, {}
        if problem is not None:
            if result is not None:
                sols = problem.solutions(result.x)
                H, slopes = problem.unpack(result.x)
                residuals = {m.id: float(r) for m, r in zip(problem.members, result.residuals)}
            for o in problem.overlength:
                sols[o.id] = o.solution
                overlength[o.id] = o.excess
        pieces, member_points = self._pieces(positions, cells, registry, sols, diag_lengths_all)

        # contact detection and commit on the free members
        events, bridging = [], []
        shearing = {c.shear_state for c in cells if c.is_shearing}
        for spec in self.net.catenaries:
            if spec.id in shearing:
                continue
            for member in registry.members(spec):
                pts = member_points[member.id]
                ranges = contact_ranges(pts, self.mold, st.contact_tol)
                ranges = [r for r in ranges if not _anchor_only(r, len(pts))]
                if not ranges:
                    continue
                if member.parent is None:
                    if len(ranges) > 1:
                        bridging.append(member.id)
                    rng = max(ranges, key=lambda r: (r[1] - r[0], -r[0]))
                    commit_spec = member
                    if spec.kind == "diagonal" and spec.id in diag_lengths_all:
                        commit_spec = replace(member, L_set=diag_lengths_all[spec.id])
                    events.append(registry.commit(commit_spec, pts, rng, self.mold))
                else:
                    n = len(pts)
                    adjacent = [r for r in ranges if (r[1] == n - 1 if member.side == "L" else r[0] == 0)]
                    if len(adjacent) != len(ranges):
                        bridging.append(member.id)
                    if adjacent:
                        try:
                            events.append(registry.commit(member, pts, adjacent[0], self.mold))
                        except DisjointContact:
                            bridging.append(member.id)

        separations, pieces = self._reconcile(cells, sols, diag_lengths_all, pieces, registry, prev)
        reactions = {c.index: shear_reaction(self.net.shear_model, c.gamma) for c in cells if c.is_shearing}

        slack = any(
            diag_lengths_all.get(spec.id, spec.L_set)
            > float(np.linalg.norm(positions[spec.anchor_b] - positions[spec.anchor_a])) + st.taut_margin
            for spec in self.net.catenaries
            if spec.id not in shearing
        )
        reasons = self._wrinkles(cells, positions, registry, diag_lengths_all, separations, overlength)
        flags = Flags(
            slack_present=slack,
            shear_active=any(c.is_shearing for c in cells),
            contact_established=prev.flags.contact_established or bool(registry.segments),
            wrinkle_indicated=prev.flags.wrinkle_indicated or bool(reasons),
            bridging_indicated=bool(bridging),
            solver_failure=False,
        )
        summary = None
        if result is not None:
            summary = SolveSummary(result.status, result.iterations, passes, result.kkt, result.max_residual, result.objective)
        else:
            summary = SolveSummary(CONVERGED, 0, passes, 0.0, 0.0, 0.0)
        return FabricState(
            iteration=prev.iteration + 1,
            positions=positions,
            cells=cells,
            registry=registry,
            solutions=sols,
            pieces=pieces,
            H=H,
            slopes=slopes,
            diagonal_slopes=diag_slopes,
            diagonal_lengths=diag_lengths_all,
            residuals=residuals,
            taut=taut,
            overlength=overlength,
            separations=separations,
            shear_reactions=reactions,
            events=tuple(events),
            bridging=tuple(bridging),
            wrinkle_reasons=tuple(reasons),
            flags=flags,
            solve=summary,
            max_offset=self._offset(positions),
        )

    def _offset(self, positions) -> float:
        d = positions[:, :2] - self.targets[:, :2]
        return float(np.max(np.hypot(d[:, 0], d[:, 1])))

    def _pieces(self, positions, cells, registry, sols, diag_lengths_all):
        """Polylines per original catenary plus the sampled points of each free member."""
        n_pt = self.settings.n_pt
        pieces: dict[str, list[np.ndarray]] = {}
        member_points: dict[str, np.ndarray] = {}

        def member_curve(member) -> np.ndarray:
            if member.id in sols:
                return sample(sols[member.id], n_pt)
            a = positions[member.anchor_a] if isinstance(member.anchor_a, (int, np.integer)) else np.array(member.anchor_a)
            b = positions[member.anchor_b] if isinstance(member.anchor_b, (int, np.integer)) else np.array(member.anchor_b)
            return straight(a, b, n_pt)

        for spec in self.net.catenaries:
            if not registry.is_split(spec.id):
                pts = member_curve(spec)
                pieces[spec.id] = [pts]
                member_points[spec.id] = pts
                continue
            left, right = registry.splits[spec.id]
            parts = []
            if left is not None:
                member_points[left.id] = member_curve(left)
                parts.append(member_points[left.id])
            parts.append(np.array(registry.segments[spec.id].fixed_points))
            if right is not None:
                member_points[right.id] = member_curve(right)
                parts.append(member_points[right.id])
            pieces[spec.id] = parts
        return pieces, member_points

    def _reconcile(self, cells, sols, lengths, pieces, registry, prev):
        st = self.settings
        separations: dict[int, float] = {}
        pieces = dict(pieces)
        for cell in cells:
            d0, d1 = cell.diagonals
            free = not cell.is_shearing and all(d in sols and not registry.is_split(d) for d in (d0, d1))
            if free:
                rec = reconcile_diagonals({d0: sols[d0], d1: sols[d1]}, lengths, st.n_pt, st.eps_coincide)
                for d, polys in rec.polylines.items():
                    pieces[d] = polys
            separations[cell.index] = _center_distance(_join(pieces[d0]), _join(pieces[d1]))
        return separations, pieces

    def _wrinkles(self, cells, positions, registry, lengths, separations, overlength) -> list[str]:
        st = self.settings
        reasons = []
        for mid, excess in sorted(overlength.items()):
            if mid.split("/")[0] in registry.segments:
                reasons.append(f"{mid}: {excess * 1e3:.2f} mm of fabric cannot hang between gripper and mold")
        contacted = set(registry.segments)
        for cell in cells:
            ids = set(cell.edges) | set(cell.diagonals)
            if ids & contacted and separations.get(cell.index, 0.0) > st.w_tol:
                reasons.append(f"cell {cell.index}: diagonal centers {separations[cell.index] * 1e3:.2f} mm apart")
        shearing = {c.shear_state for c in cells if c.is_shearing}
        for spec in self.net.catenaries:
            if spec.id in shearing:
                continue
            a, b = positions[spec.anchor_a], positions[spec.anchor_b]
            if not all(self.mold.vertical_clearance(p) <= st.contact_tol for p in (a, b)):
                continue
            chord = float(np.linalg.norm(b - a))
            L = registry.parent_lengths.get(spec.id, lengths.get(spec.id, spec.L_set))
            ratio = (L - chord) / chord
            if ratio > st.r_tol:
                reasons.append(f"{spec.id}: slack {ratio * 100:.2f}% with both grippers on the mold")
        return reasons


def _anchor_only(rng: tuple[int, int], n: int) -> bool:
    """A range made of nothing but an end anchor resting on the mold."""
    start, stop = rng
    return start == stop and start in (0, n - 1)


def _join(parts: list[np.ndarray]) -> np.ndarray:
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:] if np.array_equal(p[0], out[-1][-1]) else p)
    return np.vstack(out)


def _plan_midpoint(points: np.ndarray) -> np.ndarray:
    """Point of the polyline halfway along its plan projection a->b."""
    a, b = points[0], points[-1]
    u = b[:2] - a[:2]
    t = (points[:, :2] - a[:2]) @ u / float(u @ u)
    k = int(np.searchsorted(t, 0.5))
    k = min(max(k, 1), len(points) - 1)
    t0, t1 = t[k - 1], t[k]
    w = 0.0 if t1 == t0 else (0.5 - t0) / (t1 - t0)
    return points[k - 1] + w * (points[k] - points[k - 1])


def _center_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.linalg.norm(_plan_midpoint(p) - _plan_midpoint(q)))


def assemble_taut(net, registry, positions, excluded, diag_lengths) -> dict[str, float]:
    out = {}
    for spec in net.catenaries:
        if spec.id in excluded:
            continue
        for member in registry.members(spec):
            a = positions[member.anchor_a] if isinstance(member.anchor_a, (int, np.integer)) else np.array(member.anchor_a)
            b = positions[member.anchor_b] if isinstance(member.anchor_b, (int, np.integer)) else np.array(member.anchor_b)
            L = diag_lengths.get(spec.id, member.L_set) if member.parent is None else member.L_set
            out[member.id] = float(np.linalg.norm(b - a)) - L
    return out


def simulate(sim: DrapeSimulation, trajectory: Trajectory) -> DrapeTrace:
    state = sim.blank_state(trajectory.start)
    states, timings = [], []
    for k in range(1, trajectory.n_steps + 1):
        t0 = time.perf_counter()
        state = sim.step(state, trajectory.positions(k))
        timings.append(time.perf_counter() - t0)
        states.append(state)
    return DrapeTrace(states, timings, sim.net, sim.targets, sim.settings.n_pt)


def wrinkle_indicator(state: FabricState) -> bool:
    return state.flags.wrinkle_indicated


def length_balance(state: FabricState) -> dict[str, float]:
    """Free plus frozen length minus parent set length, per split original catenary."""
    return {cid: state.registry.balance(cid) for cid in state.registry.segments}


def polyline_lengths(state: FabricState) -> dict[str, float]:
    return {cid: polyline_length(state.polyline(cid)) for cid in state.pieces}


def run(scenario, base_dir=None) -> DrapeTrace:
    """Execute every iteration of a validated scenario."""
    from .scenario import build_simulation

    sim, trajectory = build_simulation(scenario, base_dir)
    return simulate(sim, trajectory)
