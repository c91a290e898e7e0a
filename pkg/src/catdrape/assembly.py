"""Catenary network over the gripper grid.

Grippers are indexed row-major, ``g = i * n_cols + j``.  Row edges run from
``(i, j)`` to ``(i, j + 1)`` and column edges from ``(i, j)`` to ``(i + 1, j)``;
both orientations are kept fixed so two colinear edges meeting at a gripper
measure their shared slope along the same direction.  Each cell has corners
``c0=(i, j), c1=(i, j+1), c2=(i+1, j+1), c3=(i+1, j)`` and diagonals
``c0->c2`` and ``c1->c3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .catenary import (
    FREE,
    BoundaryCondition,
    CatenarySolution,
    LocalFrame,
    Material,
    sample,
    solve_for_length,
    straight,
)

SLOPE_LIMIT = math.tan(math.radians(40.0))
EPS_COINCIDE = 1e-4

Anchor = Union[int, tuple]


class InvalidGrid(ValueError):
    pass


class UnsolvedEdges(ValueError):
    pass


@dataclass(frozen=True)
class GripperGrid:
    n_rows: int
    n_cols: int
    positions: np.ndarray
    slope_limit: float = SLOPE_LIMIT

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if self.n_rows < 1 or self.n_cols < 1 or self.n_rows * self.n_cols < 2:
            raise InvalidGrid(f"{self.n_rows}x{self.n_cols} grid has fewer than 2 grippers")
        if pos.shape != (self.n_rows * self.n_cols, 3) or not np.all(np.isfinite(pos)):
            raise InvalidGrid(f"positions must be a finite ({self.n_rows * self.n_cols}, 3) array")

    def index(self, i: int, j: int) -> int:
        return i * self.n_cols + j


@dataclass(frozen=True)
class Binding:
    """How one catenary end gets its slope: free, shared variable, derived or fixed."""

    kind: Literal["free", "shared", "derived", "fixed"]
    index: int | None = None
    value: float | None = None

    @classmethod
    def shared(cls, j: int) -> Binding:
        return cls("shared", index=j)

    @classmethod
    def fixed(cls, value: float) -> Binding:
        return cls("fixed", value=float(value))


FREE_END = Binding("free")
DERIVED_END = Binding("derived")


@dataclass(frozen=True)
class CatenarySpec:
    """One catenary of the network, or a child produced by a contact split.

    Anchors are gripper ids or fixed 3D points (tuples).  ``parent`` is the
    original catenary id for children, ``side`` is ``"L"`` (gripper at end A)
    or ``"R"`` (gripper at end B).
    """

    id: str
    kind: Literal["edge", "diagonal"]
    anchor_a: Anchor
    anchor_b: Anchor
    L_set: float
    bind_a: Binding
    bind_b: Binding
    parent: str | None = None
    side: str | None = None

    @property
    def origin(self) -> str:
        return self.parent or self.id


@dataclass(frozen=True)
class SharedSlope:
    index: int
    gripper: int
    edges: tuple[str, str]  # (ending at gripper, starting at gripper)


@dataclass(frozen=True)
class ShearModel:
    """Polynomial shear reaction ``sum(k[n] * gamma**(n+1))`` (N, gamma in rad).

    The default coefficient is a placeholder, not measured data.
    """

    coefficients: tuple[float, ...] = (1.0,)

    def reaction(self, gamma: float) -> float:
        return shear_reaction(self, gamma)


@dataclass(frozen=True)
class UnitCell:
    index: int
    corners: tuple[int, int, int, int]
    edges: tuple[str, str, str, str]  # c0-c1, c1-c2, c3-c2, c0-c3
    diagonals: tuple[str, str]  # c0->c2, c1->c3
    a: float
    shear_state: str | None = None
    gamma: float = 0.0

    @property
    def is_shearing(self) -> bool:
        return self.shear_state is not None

    def other_diagonal(self, diag: str) -> str:
        return self.diagonals[1] if diag == self.diagonals[0] else self.diagonals[0]

    def corner_edges(self, corner: int) -> tuple[str, str]:
        """The two cell edges incident to the corner position 0..3."""
        e = self.edges
        return ((e[0], e[3]), (e[0], e[1]), (e[1], e[2]), (e[2], e[3]))[corner]


@dataclass
class CatenaryNetwork:
    grid: GripperGrid
    catenaries: list[CatenarySpec]
    cells: list[UnitCell]
    shared_slopes: list[SharedSlope]
    shear_model: ShearModel = field(default_factory=ShearModel)
    cell_length: float = 0.1

    def __post_init__(self) -> None:
        self.by_id = {c.id: c for c in self.catenaries}
        self.cell_of_diagonal = {d: cell.index for cell in self.cells for d in cell.diagonals}

    @property
    def n_shared(self) -> int:
        return len(self.shared_slopes)

    @property
    def edges(self) -> list[CatenarySpec]:
        return [c for c in self.catenaries if c.kind == "edge"]

    @property
    def diagonals(self) -> list[CatenarySpec]:
        return [c for c in self.catenaries if c.kind == "diagonal"]

    def incident_edges(self, gripper: int) -> list[tuple[CatenarySpec, str]]:
        """Edges with an end at the gripper, with the end label ("A" or "B")."""
        out = []
        for c in self.edges:
            if c.anchor_a == gripper:
                out.append((c, "A"))
            elif c.anchor_b == gripper:
                out.append((c, "B"))
        return out


def build_network(grid: GripperGrid, cell_length: float, shear_model: ShearModel | None = None) -> CatenaryNetwork:
    """Edges between 4-neighbours, two diagonals per cell, slope bindings per end."""
    if cell_length <= 0:
        raise InvalidGrid("cell_length must be positive")
    R, C = grid.n_rows, grid.n_cols
    g = grid.index
    edges: dict[tuple[int, int], str] = {}
    specs: list[CatenarySpec] = []
    raw: list[tuple[int, int]] = []
    for i in range(R):
        for j in range(C - 1):
            raw.append((g(i, j), g(i, j + 1)))
    for i in range(R - 1):
        for j in range(C):
            raw.append((g(i, j), g(i + 1, j)))
    for k, (a, b) in enumerate(raw):
        edges[(a, b)] = f"E{k}"

    shared: list[SharedSlope] = []
    binding: dict[tuple[str, str], Binding] = {}
    for i in range(R):
        for j in range(C):
            here = g(i, j)
            if 0 < j < C - 1:
                pair = (edges[(g(i, j - 1), here)], edges[(here, g(i, j + 1))])
                shared.append(SharedSlope(len(shared), here, pair))
            if 0 < i < R - 1:
                pair = (edges[(g(i - 1, j), here)], edges[(here, g(i + 1, j))])
                shared.append(SharedSlope(len(shared), here, pair))
    for s in shared:
        binding[(s.edges[0], "B")] = Binding.shared(s.index)
        binding[(s.edges[1], "A")] = Binding.shared(s.index)

    for (a, b), eid in edges.items():
        specs.append(
            CatenarySpec(
                eid,
                "edge",
                a,
                b,
                cell_length,
                binding.get((eid, "A"), FREE_END),
                binding.get((eid, "B"), FREE_END),
            )
        )

    cells: list[UnitCell] = []
    diag_len = cell_length * math.sqrt(2.0)
    for i in range(R - 1):
        for j in range(C - 1):
            c0, c1, c2, c3 = g(i, j), g(i, j + 1), g(i + 1, j + 1), g(i + 1, j)
            k = len(cells)
            d0, d1 = f"D{2 * k}", f"D{2 * k + 1}"
            specs.append(CatenarySpec(d0, "diagonal", c0, c2, diag_len, DERIVED_END, DERIVED_END))
            specs.append(CatenarySpec(d1, "diagonal", c1, c3, diag_len, DERIVED_END, DERIVED_END))
            cells.append(
                UnitCell(
                    index=k,
                    corners=(c0, c1, c2, c3),
                    edges=(edges[(c0, c1)], edges[(c1, c2)], edges[(c3, c2)], edges[(c0, c3)]),
                    diagonals=(d0, d1),
                    a=cell_length,
                )
            )
    return CatenaryNetwork(grid, specs, cells, shared, shear_model or ShearModel(), cell_length)


def _horizontal_unit(a, b) -> np.ndarray:
    v = np.asarray(b, dtype=float)[:2] - np.asarray(a, dtype=float)[:2]
    n = math.hypot(v[0], v[1])
    return v / n if n > 0 else v


def plane_slope(directions, slopes, target) -> float:
    """Slope along ``target`` of the tangent plane through two directional slopes.

    ``directions`` are two horizontal unit vectors with slopes ``slopes``
    measured along them.  Falls back to the averaged cosine projection when the
    directions are (nearly) parallel.
    """
    D = np.asarray(directions, dtype=float)[:, :2]
    s = np.asarray(slopes, dtype=float)
    t = np.asarray(target, dtype=float)[:2]
    det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
    if abs(det) < 1e-6:
        return float(np.mean(s * (D @ t)))
    grad = np.linalg.solve(D, s)
    return float(grad @ t)


def diagonal_slopes(
    net: CatenaryNetwork,
    cell: UnitCell,
    positions: np.ndarray,
    edge_slope_at,
) -> dict[str, tuple[float, float]]:
    """End slopes of both diagonals of ``cell`` from the surrounding edges.

    ``edge_slope_at(edge_id, gripper)`` returns the slope of that edge at the
    gripper measured away from it, or None when the edge is not solved.  At a
    corner the two cell edges fix a tangent plane; the diagonal end gets that
    plane's slope along the diagonal's A->B direction.
    """
    out: dict[str, tuple[float, float]] = {}
    for diag_id, (ca, cb) in zip(cell.diagonals, ((0, 2), (1, 3))):
        spec = net.by_id[diag_id]
        d = _horizontal_unit(positions[spec.anchor_a], positions[spec.anchor_b])
        ends = []
        for corner in (ca, cb):
            gid = cell.corners[corner]
            dirs, slopes = [], []
            for eid in cell.corner_edges(corner):
                e = net.by_id[eid]
                other = e.anchor_b if e.anchor_a == gid else e.anchor_a
                s = edge_slope_at(eid, gid)
                if s is None:
                    raise UnsolvedEdges(f"edge {eid} has no solution at gripper {gid}")
                dirs.append(_horizontal_unit(positions[gid], positions[other]))
                slopes.append(s)
            ends.append(plane_slope(dirs, slopes, d))
        out[diag_id] = (ends[0], ends[1])
    return out


def governed_slopes(
    net: CatenaryNetwork,
    cells: list[UnitCell],
    positions: np.ndarray,
) -> dict[tuple[str, str], float]:
    """Prescribed edge-end slopes imposed by the shearing diagonals.

    Every edge end at a shearing diagonal's grippers takes the diagonal's chord
    slope, signed by the edge's orientation relative to the diagonal.  Ends
    governed by more than one shearing diagonal take the mean.
    """
    acc: dict[tuple[str, str], list[float]] = {}
    for cell in cells:
        if not cell.is_shearing:
            continue
        spec = net.by_id[cell.shear_state]
        pa, pb = positions[spec.anchor_a], positions[spec.anchor_b]
        frame = LocalFrame.from_anchors(pa, pb)
        k = frame.chord_slope
        for gid in (spec.anchor_a, spec.anchor_b):
            for edge, end in net.incident_edges(gid):
                e = _horizontal_unit(positions[edge.anchor_a], positions[edge.anchor_b])
                sign = 1.0 if float(e @ frame.u[:2]) >= 0 else -1.0
                acc.setdefault((edge.id, end), []).append(sign * k)
    return {key: float(np.mean(v)) for key, v in acc.items()}


@dataclass(frozen=True)
class ShearDecision:
    diagonal: str | None
    gamma: float = 0.0


def shear_angle(d: float, a: float) -> float:
    """Shear angle of a side-``a`` rhombus whose extended diagonal measures ``d``."""
    r = min(d / (2.0 * a), 1.0)
    return 2.0 * math.asin(r) - 0.5 * math.pi


def detect_shear(cell: UnitCell, positions: np.ndarray, diagonal_lengths: tuple[float, float]) -> ShearDecision:
    """Mark the diagonal whose gripper distance exceeds its set length (larger relative excess wins)."""
    pos = np.asarray(positions, dtype=float)
    c = cell.corners
    dist = (float(np.linalg.norm(pos[c[2]] - pos[c[0]])), float(np.linalg.norm(pos[c[3]] - pos[c[1]])))
    excess = [(dist[k] - diagonal_lengths[k]) / diagonal_lengths[k] for k in range(2)]
    best = None
    for k in range(2):
        if excess[k] > 0 and (best is None or excess[k] > excess[best]):
            best = k
    if best is None:
        return ShearDecision(None, 0.0)
    return ShearDecision(cell.diagonals[best], shear_angle(dist[best], cell.a))


def shear_kinematics(a: float, gamma: float) -> tuple[float, float]:
    """(long, short) diagonal lengths of a side-``a`` rhombus sheared by ``gamma``."""
    if not abs(gamma) < 0.5 * math.pi:
        raise ValueError("|gamma| must be below 90 degrees")
    return 2 * a * math.sin((0.5 * math.pi + gamma) / 2), 2 * a * math.sin((0.5 * math.pi - gamma) / 2)


def shear_reaction(model: ShearModel, gamma: float) -> float:
    return float(sum(k * gamma ** (n + 1) for n, k in enumerate(model.coefficients)))


@dataclass(frozen=True)
class Reconciliation:
    """Display polylines for both diagonals after reconciliation."""

    polylines: dict[str, list[np.ndarray]]
    split: str | None = None
    separation: float = 0.0


def _center(sol: CatenarySolution) -> np.ndarray:
    fr = sol.frame
    p = 0.5 * (fr.origin + fr.end)
    p[2] = 0.5 * (fr.origin[2] + fr.end[2]) + float(sol.y(0.5 * fr.span))
    return p


def _half(a, b, L_set: float, bc_a: BoundaryCondition, bc_b: BoundaryCondition, mat: Material, n_pt: int):
    frame = LocalFrame.from_anchors(a, b)
    if L_set <= frame.chord_length:
        return straight(a, b, n_pt)
    sol = solve_for_length(frame, L_set, bc_a, bc_b, mat, n_pt)
    return sample(sol, n_pt)


def reconcile_diagonals(
    sols: dict[str, CatenarySolution],
    lengths: dict[str, float],
    n_pt: int,
    eps: float = EPS_COINCIDE,
) -> Reconciliation:
    """Make the two diagonals of a cell meet at the higher center point.

    When the diagonal centers differ in height by more than ``eps`` the lower
    one is replaced by two half catenaries (half the set length each, free at
    the new center) hanging from the upper center point.
    """
    (ia, sa), (ib, sb) = sols.items()
    ca, cb = _center(sa), _center(sb)
    polys = {ia: [sample(sa, n_pt)], ib: [sample(sb, n_pt)]}
    sep = abs(float(ca[2] - cb[2]))
    if sep <= eps:
        return Reconciliation(polys, None, sep)
    low, low_sol, high_c = (ia, sa, cb) if ca[2] < cb[2] else (ib, sb, ca)
    fr = low_sol.frame
    mat = low_sol.material
    half = 0.5 * lengths[low]
    first = _half(fr.origin, high_c, half, low_sol.bc_a, FREE, mat, n_pt)
    second = _half(high_c, fr.end, half, FREE, low_sol.bc_b, mat, n_pt)
    polys[low] = [first, second]
    return Reconciliation(polys, low, 0.0)
