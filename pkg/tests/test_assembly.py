import math

import numpy as np
import pytest

from catdrape.assembly import (
    SLOPE_LIMIT,
    GripperGrid,
    InvalidGrid,
    ShearModel,
    build_network,
    detect_shear,
    diagonal_slopes,
    governed_slopes,
    plane_slope,
    reconcile_diagonals,
    shear_angle,
    shear_kinematics,
    shear_reaction,
)
from catdrape.catenary import (
    FREE,
    LocalFrame,
    polyline_length,
    sample,
    solve_for_length,
)
from catdrape.mold import lattice

from .conftest import TABLE1


def grid(rows, cols, step=0.1, z=0.2, shear=0.0):
    xy = lattice((0.0, 0.0), rows, cols, step, shear)
    return GripperGrid(rows, cols, np.column_stack([xy, np.full(len(xy), z)]))


class TestBuild:
    def test_two_by_two(self):
        net = build_network(grid(2, 2), 0.1)
        assert (len(net.edges), len(net.diagonals), len(net.cells)) == (4, 2, 1)
        assert net.n_shared == 0
        assert all(e.bind_a.kind == "free" and e.bind_b.kind == "free" for e in net.edges)

    def test_four_by_two(self):
        net = build_network(grid(4, 2), 0.1)
        assert (len(net.edges), len(net.diagonals), len(net.cells)) == (10, 6, 3)
        # two interior grippers per column, each joining a colinear pair of column edges
        assert net.n_shared == 4
        for s in net.shared_slopes:
            e_in, e_out = (net.by_id[i] for i in s.edges)
            assert e_in.anchor_b == s.gripper == e_out.anchor_a
            assert e_in.bind_b.index == e_out.bind_a.index == s.index
        assert all(e.L_set == 0.1 for e in net.edges)
        assert all(d.L_set == pytest.approx(0.141421, abs=5e-7) for d in net.diagonals)

    @pytest.mark.parametrize("rows, cols", [(1, 2), (2, 3), (3, 3), (5, 4)])
    def test_counts(self, rows, cols):
        net = build_network(grid(rows, cols), 0.1)
        assert len(net.edges) == rows * (cols - 1) + cols * (rows - 1)
        assert len(net.diagonals) == 2 * (rows - 1) * (cols - 1)
        assert len(net.cells) == (rows - 1) * (cols - 1)

    @pytest.mark.parametrize("rows, cols", [(2, 2), (4, 2), (3, 4)])
    def test_binding_completeness(self, rows, cols):
        net = build_network(grid(rows, cols), 0.1)
        for c in net.catenaries:
            for b in (c.bind_a, c.bind_b):
                if c.kind == "diagonal":
                    assert b.kind == "derived"
                else:
                    assert b.kind in ("free", "shared")
                    if b.kind == "shared":
                        assert 0 <= b.index < net.n_shared
        # ply-boundary edge ends are free: a gripper end is shared only with a colinear partner
        for e in net.edges:
            for end, b in (("A", e.bind_a), ("B", e.bind_b)):
                g = e.anchor_a if end == "A" else e.anchor_b
                partners = [x for x, _ in net.incident_edges(g) if x.id != e.id]
                colinear = [
                    x
                    for x in partners
                    if abs(abs(np.dot(_dir(net, x), _dir(net, e))) - 1) < 1e-12
                ]
                assert (b.kind == "shared") == bool(colinear)

    def test_invalid(self):
        with pytest.raises(InvalidGrid):
            GripperGrid(1, 1, np.zeros((1, 3)))
        with pytest.raises(InvalidGrid):
            build_network(grid(2, 2), 0.0)

    def test_default_slope_limit(self):
        assert SLOPE_LIMIT == pytest.approx(math.tan(math.radians(40)))


def _dir(net, spec):
    p = net.grid.positions
    v = p[spec.anchor_b] - p[spec.anchor_a]
    return v / np.linalg.norm(v)


class TestDiagonalSlopes:
    def test_symmetric_cell(self):
        net = build_network(grid(2, 2), 0.1)
        cell = net.cells[0]
        # identical sagging edges: slope -0.2 leaving every gripper
        out = diagonal_slopes(net, cell, net.grid.positions, lambda eid, g: -0.2)
        for a, b in out.values():
            assert a < 0
            assert a == pytest.approx(-b, abs=1e-15)

    def test_plane_fit_reproduces_plane(self, rng):
        for _ in range(10):
            grad = rng.uniform(-0.5, 0.5, 2)
            phi = rng.uniform(0, 2 * math.pi, 3)
            d = [np.array([math.cos(p), math.sin(p)]) for p in phi]
            s = plane_slope(d[:2], [grad @ d[0], grad @ d[1]], d[2])
            assert s == pytest.approx(grad @ d[2], abs=1e-12)

    def test_parallel_edges_average(self):
        u = np.array([1.0, 0.0])
        assert plane_slope([u, u], [0.1, 0.3], u) == pytest.approx(0.2, abs=1e-15)

    def test_unsolved_edges(self):
        from catdrape.assembly import UnsolvedEdges

        net = build_network(grid(2, 2), 0.1)
        with pytest.raises(UnsolvedEdges):
            diagonal_slopes(net, net.cells[0], net.grid.positions, lambda eid, g: None)

    def test_shearing_diagonal_governs_edges(self):
        net = build_network(grid(3, 3), 0.1)
        pos = net.grid.positions.copy()
        pos[:, 2] = 0.2 + 0.3 * pos[:, 0] - 0.1 * pos[:, 1]
        cell = net.cells[0]
        from dataclasses import replace

        cells = [replace(cell, shear_state=cell.diagonals[0], gamma=0.1)] + list(net.cells[1:])
        gov = governed_slopes(net, cells, pos)
        d = net.by_id[cell.diagonals[0]]
        k = LocalFrame.from_anchors(pos[d.anchor_a], pos[d.anchor_b]).chord_slope
        touched = {(e.id, end) for g in (d.anchor_a, d.anchor_b) for e, end in net.incident_edges(g)}
        assert set(gov) == touched
        for v in gov.values():
            assert abs(v) == pytest.approx(abs(k), abs=1e-15)


class TestShear:
    def cell_positions(self, d0, d1=None):
        """Positions of a 2x2 cell whose diagonals measure d0 (c0-c2) and d1 (c1-c3)."""
        a = 0.1
        d1 = d1 if d1 is not None else math.sqrt(4 * a * a - d0 * d0)
        # rhombus centred at the origin, diagonal c0-c2 along x
        p = np.zeros((4, 3))
        c0, c2 = np.array([-d0 / 2, 0, 0.1]), np.array([d0 / 2, 0, 0.1])
        c1, c3 = np.array([0, -d1 / 2, 0.1]), np.array([0, d1 / 2, 0.1])
        # grid ids: c0=0, c1=1, c2=3, c3=2
        p[0], p[1], p[3], p[2] = c0, c1, c2, c3
        return p

    def test_rest(self):
        net = build_network(grid(2, 2), 0.1)
        pos = self.cell_positions(0.1414, 0.1414)
        assert detect_shear(net.cells[0], pos, (0.1 * math.sqrt(2),) * 2).diagonal is None

    def test_twenty_degrees(self):
        net = build_network(grid(2, 2), 0.1)
        d = 2 * 0.1 * math.sin(math.radians(55))
        assert d == pytest.approx(0.16383, abs=5e-6)
        dec = detect_shear(net.cells[0], self.cell_positions(d), (0.1 * math.sqrt(2),) * 2)
        assert dec.diagonal == net.cells[0].diagonals[0]
        assert abs(dec.gamma - math.radians(20)) <= 1e-9

    def test_inversion_150mm(self):
        g = shear_angle(0.150, 0.1)
        assert math.degrees(g) == pytest.approx(7.181, abs=5e-4)
        assert shear_kinematics(0.1, g)[0] == pytest.approx(0.150, abs=1e-15)

    def test_larger_relative_excess_wins(self):
        net = build_network(grid(2, 2), 0.1)
        cell = net.cells[0]
        pos = self.cell_positions(0.16, 0.15)
        assert detect_shear(cell, pos, (0.15, 0.14)).diagonal == cell.diagonals[1]
        assert detect_shear(cell, pos, (0.14, 0.15)).diagonal == cell.diagonals[0]

    def test_tie_goes_to_lower_id(self):
        net = build_network(grid(2, 2), 0.1)
        cell = net.cells[0]
        pos = self.cell_positions(0.15, 0.15)
        assert detect_shear(cell, pos, (0.14, 0.14)).diagonal == cell.diagonals[0]

    def test_kinematics(self):
        assert shear_kinematics(0.1, 0.0) == pytest.approx((0.141421356, 0.141421356), abs=1e-9)
        lo, sh = shear_kinematics(0.1, math.radians(20))
        assert lo == pytest.approx(0.163830, abs=1e-6)
        assert sh == pytest.approx(0.114715, abs=1e-6)
        law = (math.sqrt(0.02 * (1 - math.cos(math.radians(110)))), math.sqrt(0.02 * (1 - math.cos(math.radians(70)))))
        assert abs(lo - law[0]) <= 1e-12 and abs(sh - law[1]) <= 1e-12

    def test_rhombus_identity(self, rng):
        for g in rng.uniform(-1.5, 1.5, 10):
            a = rng.uniform(0.01, 1.0)
            lo, sh = shear_kinematics(a, g)
            assert abs(lo * lo + sh * sh - 4 * a * a) <= 1e-12

    def test_kinematics_domain(self):
        with pytest.raises(ValueError):
            shear_kinematics(0.1, math.pi / 2)

    def test_reaction(self):
        assert shear_reaction(ShearModel((1.0, 0.0, 3.0)), 0.0) == 0.0
        assert shear_reaction(ShearModel((1.0,)), 0.349) == pytest.approx(0.349, abs=1e-15)
        g = np.radians(np.linspace(0, 30, 5))
        r = [ShearModel((1.0,)).reaction(v) for v in g]
        assert np.all(np.diff(r) > 0)


class TestReconcile:
    def solve(self, a, b, L):
        return solve_for_length(LocalFrame.from_anchors(a, b), L, FREE, FREE, TABLE1)

    def test_symmetric_cell_no_split(self):
        s0 = self.solve([0, 0, 0.1], [0.1, 0.1, 0.1], 0.145)
        s1 = self.solve([0.1, 0, 0.1], [0, 0.1, 0.1], 0.145)
        rec = reconcile_diagonals({"D0": s0, "D1": s1}, {"D0": 0.145, "D1": 0.145}, 151)
        assert rec.split is None
        assert len(rec.polylines["D0"]) == len(rec.polylines["D1"]) == 1

    def test_lower_diagonal_lifted(self):
        s0 = self.solve([0, 0, 0.1], [0.1, 0.1, 0.1], 0.1425)
        s1 = self.solve([0.1, 0, 0.1], [0, 0.1, 0.1], 0.1443)
        sep = s0.sag() - s1.sag()
        # D1 hangs about 5 mm lower
        assert -7e-3 < sep < -3e-3
        lengths = {"D0": 0.1425, "D1": 0.1443}
        rec = reconcile_diagonals({"D0": s0, "D1": s1}, lengths, 151)
        assert rec.split == "D1"
        first, second = rec.polylines["D1"]
        upper = sample(s0, 151)[75]
        np.testing.assert_array_equal(first[-1], second[0])
        np.testing.assert_allclose(first[-1], upper, atol=1e-12)
        np.testing.assert_array_equal(first[0], s1.frame.origin)
        np.testing.assert_array_equal(second[-1], s1.frame.end)
        straight = np.linalg.norm(first[-1] - first[0]) + np.linalg.norm(second[-1] - second[0])
        halves = polyline_length(first) + polyline_length(second)
        assert halves >= straight
        assert halves == pytest.approx(0.1443, abs=1e-9)

    def test_within_eps_no_change(self):
        s0 = self.solve([0, 0, 0.1], [0.1, 0.1, 0.1], 0.14500)
        s1 = self.solve([0.1, 0, 0.1], [0, 0.1, 0.1], 0.14501)
        rec = reconcile_diagonals({"D0": s0, "D1": s1}, {"D0": 0.145, "D1": 0.14501}, 151, eps=1e-3)
        assert rec.split is None
