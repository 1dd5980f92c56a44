import numpy as np
import pytest

from fleetcharge.assignment import (
    AssignmentInstance,
    AssignmentSizeError,
    AssignmentSolution,
    InfeasibleAssignmentError,
    load_instance,
    load_solution,
    save_instance,
    save_solution,
    solve_p2_exact,
    solve_p2_lagrangian,
    verify_solution,
)

from util import random_p2_instance


def single_pair(t=5.0, d=5.0, e=40.0, e_star=49.6, a=60.0, b=60.0):
    return AssignmentInstance(
        vehicle_ids=(0,), charger_ids=(0,),
        travel_min=np.array([[t]]), dist_km=np.array([[d]]),
        e=np.array([e]), e_star=np.array([e_star]),
        window_a=np.array([[a]]), window_b=np.array([[b]]),
        rates=np.array([50.0 / 60.0]), consumption_kwh_per_km=0.204,
        theta1=0.025, theta2=0.5, e_min=12.4, big_m1=62.0, big_m2=930.0)


class TestExact:
    def test_single_free_pair_objective(self):
        sol = solve_p2_exact(single_pair())
        assert sol.x[0, 0] == 1
        assert sol.y[0, 0] == pytest.approx(49.6 - 40 + 0.204 * 5)
        assert sol.s[0, 0] == 0.0
        assert sol.w[0] == 0
        assert sol.objective == pytest.approx(5 + 0.025 * (10.62 / (50 / 60)))
        assert sol.objective == pytest.approx(5.3186)
        assert verify_solution(single_pair(), sol) == []

    def test_occupied_charger_adds_weighted_wait(self):
        inst = single_pair(t=5.0, a=0.0, b=15.0)
        sol = solve_p2_exact(inst)
        assert sol.w[0] == 1
        assert sol.s[0, 0] == pytest.approx(10.0)
        assert sol.objective == pytest.approx(5.3186 + 0.5 * 10.0)
        assert verify_solution(inst, sol) == []

    def test_reserve_boundary_infeasible(self):
        inst = single_pair(e=12.4, d=3.0, e_star=30.0)
        with pytest.raises(InfeasibleAssignmentError) as err:
            solve_p2_exact(inst)
        assert err.value.blocked == [0]

    def test_picks_cheaper_charger(self):
        inst = AssignmentInstance(
            vehicle_ids=(0,), charger_ids=(0, 1),
            travel_min=np.array([[12.0, 4.0]]), dist_km=np.array([[13.0, 4.3]]),
            e=np.array([30.0]), e_star=np.array([45.0]),
            window_a=np.array([[60.0, 60.0]]), window_b=np.array([[60.0, 60.0]]),
            rates=np.array([50 / 60, 50 / 60]), consumption_kwh_per_km=0.204,
            theta1=0.025, theta2=0.5, e_min=12.4, big_m1=62.0, big_m2=930.0)
        sol = solve_p2_exact(inst)
        assert sol.assigned_charger(0) == 1

    def test_avoids_predicted_wait(self):
        # nearer charger is predicted busy long enough that the farther wins
        inst = AssignmentInstance(
            vehicle_ids=(0,), charger_ids=(0, 1),
            travel_min=np.array([[3.0, 8.0]]), dist_km=np.array([[3.25, 8.6]]),
            e=np.array([30.0]), e_star=np.array([45.0]),
            window_a=np.array([[0.0, 60.0]]), window_b=np.array([[30.0, 60.0]]),
            rates=np.array([50 / 60, 50 / 60]), consumption_kwh_per_km=0.204,
            theta1=0.025, theta2=0.5, e_min=12.4, big_m1=62.0, big_m2=930.0)
        sol = solve_p2_exact(inst)
        assert sol.assigned_charger(0) == 1

    def test_size_guard(self):
        inst = random_p2_instance(0, max_vehicles=3, max_chargers=5)
        with pytest.raises(AssignmentSizeError):
            solve_p2_exact(inst, max_size=2)

    def test_requires_enough_chargers(self):
        with pytest.raises(Exception):
            AssignmentInstance(
                vehicle_ids=(0, 1), charger_ids=(0,),
                travel_min=np.zeros((2, 1)), dist_km=np.zeros((2, 1)),
                e=np.array([30.0, 30.0]), e_star=np.array([40.0, 40.0]),
                window_a=np.full((2, 1), 60.0), window_b=np.full((2, 1), 60.0),
                rates=np.array([50 / 60]), consumption_kwh_per_km=0.204,
                theta1=0.025, theta2=0.5, e_min=12.4, big_m1=62.0, big_m2=930.0)


class TestWaitIndicatorSemantics:
    def cases(self):
        # occupied slot [20, 40) on an otherwise free 60-minute horizon
        yield 10.0, (60.0, 60.0), 0     # arrival before the session: free
        yield 20.0, (20.0, 40.0), 1     # exactly at session start: waits
        yield 30.0, (20.0, 40.0), 1     # interior: waits
        yield 40.0, (60.0, 60.0), 0     # exactly at session end: free
        yield 60.0, (60.0, 60.0), 1     # at horizon end: flag forced on, zero wait

    def test_w_matches_forced_indicator(self):
        for t, (a, b), expected_w in self.cases():
            inst = single_pair(t=t, d=t * 65 / 60, a=a, b=b)
            sol = solve_p2_exact(inst)
            assert sol.w[0] == expected_w, f"arrival {t}"
            assert verify_solution(inst, sol) == []
            flipped = AssignmentSolution(
                sol.vehicle_ids, sol.charger_ids, sol.x, sol.y,
                np.where(sol.x > 0, np.maximum(0.0, b - t), 0.0) if expected_w == 0
                else np.zeros_like(sol.s),
                1 - sol.w, sol.objective, sol.optimality)
            assert verify_solution(inst, flipped), f"arrival {t}: W not forced"


class TestLagrangian:
    def test_single_vehicle_equals_exact(self):
        inst = random_p2_instance(5, max_vehicles=1, max_chargers=4)
        exact = solve_p2_exact(inst)
        lagr = solve_p2_lagrangian(inst)
        assert lagr.objective == pytest.approx(exact.objective, abs=1e-9)
        assert verify_solution(inst, lagr) == []

    def test_symmetric_instance(self):
        n = 4
        inst = AssignmentInstance(
            vehicle_ids=tuple(range(n)), charger_ids=tuple(range(n)),
            travel_min=np.full((n, n), 7.0), dist_km=np.full((n, n), 7.58),
            e=np.full(n, 30.0), e_star=np.full(n, 45.0),
            window_a=np.full((n, n), 60.0), window_b=np.full((n, n), 60.0),
            rates=np.full(n, 50 / 60), consumption_kwh_per_km=0.204,
            theta1=0.025, theta2=0.5, e_min=12.4, big_m1=62.0, big_m2=930.0)
        exact = solve_p2_exact(inst)
        lagr = solve_p2_lagrangian(inst)
        assert lagr.objective == pytest.approx(exact.objective, abs=1e-9)
        assert sorted(j for _, j in lagr.pairs()) == list(range(n))

    def test_near_exact_on_random_instances(self):
        gaps = []
        for seed in range(120):
            inst = random_p2_instance(seed)
            exact = solve_p2_exact(inst)
            lagr = solve_p2_lagrangian(inst)
            assert verify_solution(inst, lagr) == []
            assert lagr.objective >= exact.objective - 1e-9
            gaps.append((lagr.objective - exact.objective) / exact.objective)
        assert np.mean(np.array(gaps) <= 0.02) >= 0.95

    def test_reports_gap_bound(self):
        inst = random_p2_instance(7)
        lagr = solve_p2_lagrangian(inst)
        exact = solve_p2_exact(inst)
        assert lagr.gap is not None and lagr.gap >= 0
        # the reported bound must cover the true optimality gap
        true_gap = (lagr.objective - exact.objective) / max(1.0, abs(exact.objective))
        assert lagr.gap >= true_gap - 1e-9


class TestVerify:
    def test_clean_solution_passes(self):
        for seed in range(25):
            inst = random_p2_instance(seed)
            assert verify_solution(inst, solve_p2_exact(inst)) == []

    def test_double_booked_charger_flagged(self):
        inst = random_p2_instance(3, max_vehicles=3, max_chargers=3)
        while inst.n_vehicles < 2:
            inst = random_p2_instance(inst.n_vehicles + 50)
        sol = solve_p2_exact(inst)
        x = sol.x.copy()
        x[1] = 0
        x[1, sol.assigned_charger(0)] = 1
        bad = AssignmentSolution(sol.vehicle_ids, sol.charger_ids, x, sol.y,
                                 sol.s, sol.w, sol.objective, "exact")
        names = [v.constraint for v in verify_solution(inst, bad)]
        assert "charger-capacity" in names

    def test_energy_without_assignment_flagged(self):
        inst = single_pair()
        sol = solve_p2_exact(inst)
        y = sol.y.copy()
        x = np.zeros_like(sol.x)
        bad = AssignmentSolution(sol.vehicle_ids, sol.charger_ids, x, y, sol.s,
                                 sol.w, sol.objective, "exact")
        names = [v.constraint for v in verify_solution(inst, bad)]
        assert "energy-only-if-assigned" in names

    def test_wait_delay_never_cheaper(self):
        rng = np.random.default_rng(0)
        for seed in range(40):
            inst = random_p2_instance(seed)
            occupied = np.argwhere(inst.window_a < inst.window_b)
            if len(occupied) == 0:
                continue
            base = solve_p2_exact(inst).objective
            i, j = occupied[int(rng.integers(len(occupied)))]
            inst.window_b[i, j] += rng.uniform(1.0, 20.0)
            assert solve_p2_exact(inst).objective >= base - 1e-9


class TestReplayFiles:
    def test_instance_round_trip(self, tmp_path):
        inst = random_p2_instance(11)
        save_instance(inst, tmp_path / "epoch07")
        loaded = load_instance(tmp_path / "epoch07")
        assert loaded.vehicle_ids == inst.vehicle_ids
        np.testing.assert_allclose(loaded.travel_min, inst.travel_min)
        np.testing.assert_allclose(loaded.window_b, inst.window_b)
        assert solve_p2_exact(loaded).objective == pytest.approx(
            solve_p2_exact(inst).objective)

    def test_solution_round_trip(self, tmp_path):
        inst = random_p2_instance(12)
        sol = solve_p2_exact(inst)
        save_solution(sol, tmp_path / "epoch07")
        loaded = load_solution(tmp_path / "epoch07")
        np.testing.assert_array_equal(loaded.x, sol.x)
        np.testing.assert_allclose(loaded.s, sol.s)
        assert loaded.objective == sol.objective
        assert verify_solution(inst, loaded) == []
