from dataclasses import replace

import numpy as np
import pytest

from catdrape.catenary import ode_residual
from catdrape.contact import ContactRegistry
from catdrape.scenario import build_simulation, scenario_from_dict
from catdrape.simulation import (
    MismatchedGrippers,
    Trajectory,
    length_balance,
    linear_trajectory,
    simulate,
    wrinkle_indicator,
)
from catdrape.solver import INFEASIBLE, SqpResult


def first(trace, flag):
    for s in trace.states:
        if getattr(s.flags, flag):
            return s.iteration
    return None


def small_scenario(bundled, **changes):
    data = bundled[0].model_dump()
    for key, value in changes.items():
        section, name = key.split("__")
        data[section][name] = value
    return scenario_from_dict(data)


class TestTrajectory:
    def test_endpoints_and_midpoint(self, rng):
        start, target = rng.uniform(size=(8, 3)), rng.uniform(size=(8, 3))
        steps = linear_trajectory(start, target, 5)
        np.testing.assert_array_equal(steps[0], start)
        np.testing.assert_array_equal(steps[-1], target)
        np.testing.assert_allclose(steps[2], 0.5 * (start + target), rtol=0, atol=1e-15)

    def test_single_step(self, rng):
        start = rng.uniform(size=(4, 3))
        steps = linear_trajectory(start, start + 1, 1)
        assert len(steps) == 1
        np.testing.assert_array_equal(steps[0], start)

    def test_mismatch(self):
        with pytest.raises(MismatchedGrippers):
            Trajectory(np.zeros((8, 3)), np.zeros((6, 3)), 3)
        with pytest.raises(ValueError):
            Trajectory(np.zeros((8, 3)), np.zeros((8, 3)), 0)


class TestBundledRun:
    def test_snapshot_count(self, bundled_trace):
        assert len(bundled_trace) == 30 == len(bundled_trace.timings)
        assert [s.iteration for s in bundled_trace.states] == list(range(1, 31))

    def test_first_iteration_slack(self, bundled_trace):
        s1 = bundled_trace.states[0]
        assert s1.flags.slack_present
        assert not s1.flags.wrinkle_indicated and not s1.flags.contact_established
        for e in bundled_trace.network.edges:
            assert s1.solutions[e.id].sag() > 0

    def test_event_order(self, bundled_trace):
        shear = first(bundled_trace, "shear_active")
        contact = first(bundled_trace, "contact_established")
        wrinkle = first(bundled_trace, "wrinkle_indicated")
        assert first(bundled_trace, "slack_present") == 1
        assert shear is not None and contact is not None and wrinkle is not None
        assert 1 < shear < contact <= wrinkle <= 30
        # contact happens while the grippers are still travelling in plan
        assert bundled_trace.states[contact - 1].max_offset > 1e-3
        assert bundled_trace.final.flags.wrinkle_indicated

    def test_latching(self, bundled_trace):
        for flag in ("contact_established", "wrinkle_indicated"):
            seen = False
            for s in bundled_trace.states:
                seen = seen or getattr(s.flags, flag)
                assert getattr(s.flags, flag) == seen
        # shear state of a cell never reverts
        for prev, cur in zip(bundled_trace.states, bundled_trace.states[1:]):
            for a, b in zip(prev.cells, cur.cells):
                if a.is_shearing:
                    assert b.shear_state == a.shear_state

    def test_at_most_one_shearing_diagonal(self, bundled_trace):
        for s in bundled_trace.states:
            for c in s.cells:
                assert c.shear_state in (None, *c.diagonals)

    def test_gripper_kinematics(self, bundled, bundled_trace):
        _, trajectory = build_simulation(*bundled)
        for s in bundled_trace.states:
            np.testing.assert_array_equal(s.positions, trajectory.positions(s.iteration))
        np.testing.assert_array_equal(bundled_trace.final.positions, bundled_trace.targets)

    def test_length_accounting(self, bundled_trace):
        for s in bundled_trace.states:
            for cid, bal in length_balance(s).items():
                assert abs(bal) <= 1e-9, (s.iteration, cid)

    def test_frozen_points_immutable(self, bundled_trace):
        frozen = {}
        for s in bundled_trace.states:
            for cid, seg in s.registry.segments.items():
                pts = seg.fixed_points
                if cid in frozen:
                    old = frozen[cid]
                    # accretion may add points on either side; old ones stay bit-identical
                    hits = [k for k in range(len(pts) - len(old) + 1) if np.array_equal(pts[k : k + len(old)], old)]
                    assert hits, (s.iteration, cid)
                frozen[cid] = pts.copy()

    def test_solver_converged(self, bundled_trace):
        for s in bundled_trace.states:
            assert not s.flags.solver_failure
            assert s.solve.status == "Converged"
            assert max((abs(r) for r in s.residuals.values()), default=0.0) <= 1e-6

    def test_ode_fidelity(self, bundled_trace):
        for s in bundled_trace.states[::5]:
            for sol in s.solutions.values():
                xs = np.linspace(0, sol.frame.span, 13)[1:-1]
                assert np.max(np.abs(ode_residual(sol, xs))) <= 1e-8 * max(sol.q, 1.0)

    def test_reconciled_before_contact(self, bundled_trace):
        contact = first(bundled_trace, "contact_established")
        for s in bundled_trace.states[: contact - 1]:
            for c in s.cells:
                if not c.is_shearing:
                    assert s.separations[c.index] <= 1e-4 + 1e-12

    def test_shear_reaches_mold_angle(self, bundled_trace):
        for c in bundled_trace.final.cells:
            assert c.is_shearing
            assert np.degrees(c.gamma) == pytest.approx(20.0, abs=1e-6)

    def test_timing_budget(self, bundled_trace):
        assert np.mean(bundled_trace.timings) <= 0.5

    def test_wrinkle_indicator(self, bundled_trace):
        assert not wrinkle_indicator(bundled_trace.states[0])
        assert wrinkle_indicator(bundled_trace.final)
        assert bundled_trace.final.wrinkle_reasons


class TestDegenerate:
    def test_single_step(self, bundled):
        sc = small_scenario(bundled, trajectory__n_steps=1)
        sim, traj = build_simulation(sc, bundled[1])
        trace = simulate(sim, traj)
        assert len(trace) == 1
        np.testing.assert_array_equal(trace.final.positions, traj.start)

    def test_unreachable_mold(self, bundled):
        sc = small_scenario(bundled, trajectory__n_steps=6)
        sim, traj = build_simulation(sc, bundled[1])
        # stop half a metre above the mold
        traj = Trajectory(traj.start, traj.target + np.array([0.0, 0.0, 0.5]), 6)
        trace = simulate(sim, traj)
        for s in trace.states:
            assert not s.flags.contact_established
            assert not s.flags.wrinkle_indicated
            assert not s.flags.bridging_indicated

    def test_determinism(self, bundled):
        sc = small_scenario(bundled, trajectory__n_steps=8)
        runs = [simulate(*build_simulation(sc, bundled[1])) for _ in range(2)]
        for a, b in zip(runs[0].states, runs[1].states):
            assert a.H == b.H and a.slopes == b.slopes and a.flags == b.flags
            for cid in a.pieces:
                for p, q in zip(a.pieces[cid], b.pieces[cid]):
                    np.testing.assert_array_equal(p, q)


class TestWrinkleRule:
    def test_separated_diagonals_in_contacted_cell(self, bundled):
        sim, traj = build_simulation(*bundled)
        reg = ContactRegistry()
        e0 = sim.net.by_id["E0"]
        pts = np.linspace(traj.target[e0.anchor_a], traj.target[e0.anchor_b], 11)
        reg.commit(e0, pts, (3, 6), sim.mold)
        cells = tuple(sim.net.cells)
        lengths = {d.id: d.L_set for d in sim.net.diagonals}
        far = np.array(traj.start)
        reasons = sim._wrinkles(cells, far, reg, lengths, {0: 0.005, 1: 0.0, 2: 0.0}, {})
        assert reasons and reasons[0].startswith("cell 0")
        assert not sim._wrinkles(cells, far, reg, lengths, {0: 0.001, 1: 0.0, 2: 0.0}, {})
        # same separation, but no contact anywhere near the cell
        assert not sim._wrinkles(cells, far, ContactRegistry(), lengths, {0: 0.005}, {})

    def test_slack_with_grippers_on_mold(self, bundled, bundled_trace):
        sim, traj = build_simulation(*bundled)
        final = bundled_trace.final
        edges = {e.id for e in sim.net.edges}
        lengths = final.diagonal_lengths
        # on target every edge spans exactly its set length
        reasons = sim._wrinkles(final.cells, traj.target, ContactRegistry(), lengths, {}, {})
        assert not edges & {r.split(":")[0] for r in reasons}
        # an unsheared diagonal squeezed onto the rhombus keeps its excess fabric
        assert {r.split(":")[0] for r in reasons} == {d for c in final.cells for d in c.diagonals} - {c.shear_state for c in final.cells}
        # grippers 5 % closer together on the mold: every edge is 5 % slack
        squeezed = traj.target.copy()
        squeezed[:, :2] *= 0.95
        reasons = sim._wrinkles(final.cells, squeezed, ContactRegistry(), lengths, {}, {})
        assert edges <= {r.split(":")[0] for r in reasons}


class TestSolverFailure:
    def test_previous_state_carried(self, bundled, monkeypatch):
        import catdrape.simulation as simmod

        sc = small_scenario(bundled, trajectory__n_steps=4)
        sim, traj = build_simulation(sc, bundled[1])
        s1 = sim.step(sim.blank_state(traj.start), traj.positions(1))
        real = simmod.sqp_solve

        def failing(problem, x0, opts=None):
            res = real(problem, x0, opts)
            return replace(res, status=INFEASIBLE) if isinstance(res, SqpResult) else res

        monkeypatch.setattr(simmod, "sqp_solve", failing)
        s2 = sim.step(s1, traj.positions(2))
        assert s2.iteration == 2
        assert s2.flags.solver_failure
        assert s2.H == s1.H
        np.testing.assert_array_equal(s2.positions, traj.positions(2))
