"""Infinite-friction mold contact.

A contacted stretch of a catenary is frozen for good.  What is left on either
side becomes an independent child catenary whose set length is the arc length
of that side, so the fabric length of the original span is conserved.  A
catenary holds at most one frozen stretch; it can grow at its ends but is never
released.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import Binding, CatenarySpec
from .catenary import polyline_length
from .mold import MoldSurface

DEFAULT_TOL = 1e-3


class MultipleSegments(Exception):
    """More than one disjoint contact range on a span (ply bridging)."""

    def __init__(self, ranges: list[tuple[int, int]]):
        self.ranges = ranges
        self.largest = max(ranges, key=lambda r: (r[1] - r[0], -r[0]))
        super().__init__(f"{len(ranges)} disjoint contact ranges: {ranges}")


class FullContact(Exception):
    """The whole span lies within tolerance of the mold."""

    def __init__(self, segment: ContactSegment):
        self.segment = segment
        super().__init__(f"{segment.catenary_id} fully in contact")


def _frozen(points) -> np.ndarray:
    arr = np.array(points, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContactSegment:
    """Frozen points of one original catenary.

    ``index_range`` refers to the polyline at first contact (inclusive bounds).
    ``arc_length`` is the polyline length of ``fixed_points``;
    ``material_length`` is the fabric length the frozen stretch stands for.
    The two differ only when a whole span is frozen at once, by that span's
    length residual (or overstretch, for a taut span).
    """

    catenary_id: str
    index_range: tuple[int, int]
    fixed_points: np.ndarray = field(repr=False)
    arc_length: float
    material_length: float


def contact_ranges(points: np.ndarray, mold: MoldSurface, tol: float) -> list[tuple[int, int]]:
    """Maximal runs of consecutive points with clearance <= tol (inclusive bounds)."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    hit = mold.clearances(points) <= tol
    ranges = []
    start = None
    for k, h in enumerate(hit):
        if h and start is None:
            start = k
        elif not h and start is not None:
            ranges.append((start, k - 1))
            start = None
    if start is not None:
        ranges.append((start, len(hit) - 1))
    return ranges


def detect_contact(points: np.ndarray, mold: MoldSurface, tol: float = DEFAULT_TOL) -> tuple[int, int] | None:
    ranges = contact_ranges(points, mold, tol)
    if not ranges:
        return None
    if len(ranges) > 1:
        raise MultipleSegments(ranges)
    return ranges[0]


def mold_binding(mold: MoldSurface, at, a, b) -> Binding:
    """Fixed slope equal to the mold slope at ``at`` along the plan direction a->b."""
    d = np.asarray(b, dtype=float)[:2] - np.asarray(a, dtype=float)[:2]
    n = float(np.hypot(d[0], d[1]))
    u = d / n if n > 0 else np.array([1.0, 0.0])
    return Binding.fixed(mold.slope_along(float(at[0]), float(at[1]), u))


def split_catenary(
    spec: CatenarySpec,
    points: np.ndarray,
    rng: tuple[int, int],
    mold: MoldSurface,
) -> tuple[CatenarySpec | None, CatenarySpec | None, ContactSegment]:
    """Freeze ``points[rng]`` and build the children on either side.

    Child set lengths split ``L_set - arc`` in proportion to the arc lengths of
    the two free sides.  Raises FullContact when the range covers the whole
    polyline.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    start, stop = rng
    if not (0 <= start <= stop < n):
        raise ValueError(f"invalid contact range {rng} for {n} points")
    frozen = pts[start : stop + 1]
    arc = polyline_length(frozen)
    if start == 0 and stop == n - 1:
        raise FullContact(ContactSegment(spec.origin, rng, _frozen(frozen), arc, spec.L_set))
    remaining = spec.L_set - arc
    raw_left = polyline_length(pts[: start + 1]) if start > 0 else 0.0
    raw_right = polyline_length(pts[stop:]) if stop < n - 1 else 0.0
    L_left = remaining * raw_left / (raw_left + raw_right)
    L_right = remaining - L_left
    left = right = None
    if start > 0:
        p = tuple(float(v) for v in pts[start])
        left = CatenarySpec(
            f"{spec.origin}/L",
            spec.kind,
            spec.anchor_a,
            p,
            L_left,
            spec.bind_a,
            mold_binding(mold, p, pts[0], p),
            parent=spec.origin,
            side="L",
        )
    if stop < n - 1:
        p = tuple(float(v) for v in pts[stop])
        right = CatenarySpec(
            f"{spec.origin}/R",
            spec.kind,
            p,
            spec.anchor_b,
            L_right,
            mold_binding(mold, p, p, pts[-1]),
            spec.bind_b,
            parent=spec.origin,
            side="R",
        )
    return left, right, ContactSegment(spec.origin, rng, _frozen(frozen), arc, arc)


class DisjointContact(Exception):
    """A child touches the mold away from its frozen end."""


@dataclass(frozen=True)
class ContactEvent:
    catenary_id: str
    member_id: str
    kind: str  # "split", "full", "extend"
    index_range: tuple[int, int]
    arc_length: float


@dataclass
class ContactRegistry:
    segments: dict[str, ContactSegment] = field(default_factory=dict)
    splits: dict[str, tuple[CatenarySpec | None, CatenarySpec | None]] = field(default_factory=dict)
    parent_lengths: dict[str, float] = field(default_factory=dict)

    def copy(self) -> ContactRegistry:
        return ContactRegistry(dict(self.segments), dict(self.splits), dict(self.parent_lengths))

    def members(self, spec: CatenarySpec) -> list[CatenarySpec]:
        """Free catenaries currently standing in for an original one."""
        if spec.id not in self.splits:
            return [spec]
        return [c for c in self.splits[spec.id] if c is not None]

    def is_split(self, catenary_id: str) -> bool:
        return catenary_id in self.splits

    def fully_frozen(self, catenary_id: str) -> bool:
        return catenary_id in self.splits and self.splits[catenary_id] == (None, None)

    def balance(self, catenary_id: str) -> float:
        """Free set lengths plus frozen fabric length minus the parent set length."""
        seg = self.segments[catenary_id]
        free = sum(c.L_set for c in self.splits[catenary_id] if c is not None)
        return free + seg.material_length - self.parent_lengths[catenary_id]

    def commit(self, member: CatenarySpec, points: np.ndarray, rng: tuple[int, int], mold: MoldSurface) -> ContactEvent:
        """Record contact of ``points[rng]`` on a free member (original or child)."""
        if member.parent is None:
            if member.id in self.splits:
                raise ValueError(f"{member.id} already split")
            self.parent_lengths[member.id] = member.L_set
            try:
                left, right, seg = split_catenary(member, points, rng, mold)
                kind = "split"
            except FullContact as full:
                left = right = None
                seg = full.segment
                kind = "full"
            self.segments[member.id] = seg
            self.splits[member.id] = (left, right)
            return ContactEvent(member.id, member.id, kind, rng, seg.arc_length)
        return self._extend(member, np.asarray(points, dtype=float), rng, mold)

    def _extend(self, child: CatenarySpec, pts: np.ndarray, rng: tuple[int, int], mold: MoldSurface) -> ContactEvent:
        orig = child.parent
        seg = self.segments[orig]
        left, right = self.splits[orig]
        n = len(pts)
        start, stop = rng
        if child.side == "L":
            if stop != n - 1:
                raise DisjointContact(f"{child.id}: contact {rng} not adjacent to frozen end")
            piece = pts[start:]
            arc = polyline_length(piece)
            if start == 0:
                new_child, material = None, child.L_set
                kind = "full"
            else:
                p = tuple(float(v) for v in pts[start])
                new_child = replace(child, anchor_b=p, L_set=child.L_set - arc, bind_b=mold_binding(mold, p, pts[0], p))
                material, kind = arc, "extend"
            points_new = np.vstack([pts[start : n - 1], seg.fixed_points])
            left = new_child
        else:
            if start != 0:
                raise DisjointContact(f"{child.id}: contact {rng} not adjacent to frozen end")
            piece = pts[: stop + 1]
            arc = polyline_length(piece)
            if stop == n - 1:
                new_child, material = None, child.L_set
                kind = "full"
            else:
                p = tuple(float(v) for v in pts[stop])
                new_child = replace(child, anchor_a=p, L_set=child.L_set - arc, bind_a=mold_binding(mold, p, p, pts[-1]))
                material, kind = arc, "extend"
            points_new = np.vstack([seg.fixed_points, pts[1 : stop + 1]])
            right = new_child
        self.segments[orig] = ContactSegment(
            orig,
            seg.index_range,
            _frozen(points_new),
            polyline_length(points_new),
            seg.material_length + material,
        )
        self.splits[orig] = (left, right)
        return ContactEvent(orig, child.id, kind, rng, arc)
