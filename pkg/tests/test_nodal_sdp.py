import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from helpers import constant_scenarios, single_node
from oracles import lattice_week

from grid_dadp.instances import lattice_grids
from grid_dadp.model import Node, Storage, SystemModel, ThermalCluster, Timeline
from grid_dadp.nodal_sdp import (
    Cut,
    EmptyCutsError,
    ValueFunction,
    backward_recursion,
    evaluate_value,
    final_cost,
    final_cuts,
    gradient_recursion,
    solve_weekly_subproblem,
    storage_grid,
)
from grid_dadp.scenarios import ScenarioSet


def weekly(model, demand=0.0, availability=1.0, inflow=0.0):
    return constant_scenarios(model, demand, availability, inflow).weekly(0, 0)


def flat(value=0.0):
    return ([value], [0.0])


class TestFinalCost:
    node = Node("s", Storage(100, 50, 10), final_penalty_rate=150.0)

    @pytest.mark.parametrize("level, expected", [(50, 0.0), (40, 1500.0), (60, 0.0)])
    def test_two_segments(self, level, expected):
        assert final_cost(self.node, level) == expected

    def test_final_cuts_reproduce_penalty(self):
        vf = ValueFunction("s", np.zeros(1), [final_cuts(self.node, 0)], np.zeros((1, 1)))
        assert evaluate_value(vf, 0, 30.0) == 3000.0
        assert evaluate_value(vf, 0, 70.0) == 0.0


class TestEvaluateValue:
    def vf(self, cuts):
        return ValueFunction("n", np.zeros(1), [cuts], np.zeros((1, 1)))

    def test_flat_cut(self):
        assert evaluate_value(self.vf([Cut(0.0, 0.0)]), 0, 7.0) == 0.0

    def test_max_of_cuts(self):
        assert evaluate_value(self.vf([Cut(10.0, -1.0), Cut(0.0, 0.0)]), 0, 5.0) == 5.0

    def test_empty(self):
        with pytest.raises(EmptyCutsError):
            evaluate_value(self.vf([]), 0, 1.0)


class TestWeeklySubproblem:
    def test_expensive_import_is_not_used(self):
        model = single_node()
        sol = solve_weekly_subproblem(model, 0, 0.0, weekly(model, 5.0), [1000.0], flat(), flow_box=(0.0, 10.0))
        assert sol.thermal.sum() == pytest.approx(5.0)
        assert sol.flow.sum() == pytest.approx(0.0)
        assert sol.cost == pytest.approx(50.0)

    def test_import_cheaper_than_ens(self):
        model = single_node()
        sol = solve_weekly_subproblem(model, 0, 0.0, weekly(model, 15.0), [1000.0], flat(), flow_box=(0.0, 10.0))
        assert sol.thermal.sum() == pytest.approx(10.0)
        assert sol.flow.sum() == pytest.approx(5.0)
        assert sol.ens.sum() == pytest.approx(0.0)
        assert sol.cost == pytest.approx(100.0 + 5000.0)

    def test_zero_data(self):
        # a positive spill penalty rules out the tie "import and curtail for free"
        model = single_node(Storage(10, 0, 5), hours=3, spill_penalty=1.0)
        sol = solve_weekly_subproblem(model, 0, 0.0, weekly(model), np.zeros(3), flat(), flow_box=(-5.0, 5.0))
        assert sol.cost == pytest.approx(0.0, abs=1e-9)
        for arr in (sol.thermal, sol.ens, sol.turbine, sol.pump, sol.flow):
            np.testing.assert_allclose(arr, 0.0, atol=1e-9)

    def test_accepts_cut_list(self):
        model = single_node(Storage(10, 5, 5), hours=1)
        cuts = [Cut(20.0, -2.0), Cut(0.0, 0.0)]
        sol = solve_weekly_subproblem(model, 0, 5.0, weekly(model), [0.0], cuts, flow_box=(0.0, 0.0))
        assert sol.cost == pytest.approx(10.0)
        assert sol.next_level == pytest.approx(5.0)


def lattice_node():
    storage = Storage(capacity=2.0, initial_level=1.0, max_turbine=1.0, max_pump=0.0)
    node = Node("h", storage, (ThermalCluster(1.0, 10.0), ThermalCluster(2.0, 40.0)))
    return SystemModel(Timeline(2, 2), (node,), ())


class TestBackwardRecursion:
    def test_single_week_is_mean_weekly_cost(self):
        model = single_node(Storage(4, 2, 2), weeks=1, hours=2, final_penalty_rate=0.0)
        rng = np.random.default_rng(0)
        scen = ScenarioSet(("a",), rng.uniform(0, 8, (3, 1, 1, 2)), np.ones((3, 1, 1, 2)),
                           rng.uniform(0, 1, (3, 1, 1, 2)))
        price = np.array([[5.0, 50.0]])
        grid = np.linspace(0, 4, 5)
        vf = backward_recursion(model, 0, price, grid, scen, flow_box=(-1.0, 1.0))
        for i, x in enumerate(grid):
            costs = [
                solve_weekly_subproblem(model, 0, x, scen.weekly(c, 0).node(0), price[0], flat(), (-1.0, 1.0)).cost
                for c in range(3)
            ]
            assert vf.values[0, i] == pytest.approx(np.mean(costs), rel=1e-9)

    def test_matches_control_lattice_enumeration(self):
        model = lattice_node()
        node = model.nodes[0]
        demand = np.array([[[[2.0, 3.0]], [[1.0, 4.0]]]])
        avail = np.array([[[[1.0, 0.5]], [[1.0, 1.0]]]])
        inflow = np.array([[[[0.5, 0.0]], [[0.0, 0.5]]]])
        scen = ScenarioSet(("h",), demand, avail, inflow)
        price = np.array([[20.0, 35.0], [5.0, 60.0]])
        box = (-1.0, 1.0)
        vf = backward_recursion(model, 0, price, lattice_grids(model)[0], scen, flow_box=box)

        @functools.lru_cache(maxsize=None)
        def week_value(s, level):
            nxt = (lambda x: final_cost(node, x)) if s == 1 else (lambda x: week_value(1, round(x * 2) / 2))
            return lattice_week(node, level, demand[0, s, 0], avail[0, s, 0], inflow[0, s, 0], price[s], nxt,
                                step=0.5, flow_box=box)

        brute = week_value(0, node.initial_level)
        assert vf.interpolate(0, node.initial_level) == pytest.approx(brute, rel=1e-4)

    def test_price_increase_with_forced_import(self):
        # demand exceeds local capacity, so the node imports in every hour
        model = single_node(None, clusters=((2.0, 10.0),), weeks=2, hours=2)
        scen = constant_scenarios(model, demand=5.0)
        base = np.full((2, 2), 100.0)
        v0 = backward_recursion(model, 0, base, [0.0], scen, flow_box=(0.0, 10.0)).values[0, 0]
        v1 = backward_recursion(model, 0, base + 7.0, [0.0], scen, flow_box=(0.0, 10.0)).values[0, 0]
        assert v1 >= v0
        assert v1 - v0 == pytest.approx(7.0 * 3.0 * 4)

    def test_lower_model_property(self, micro_case):
        m, scen = micro_case.model, micro_case.scenarios
        rng = np.random.default_rng(1)
        H, W = m.timeline.hours_per_week, m.timeline.weeks_count
        for n, node in enumerate(m.nodes):
            if node.storage is None:
                continue
            vf = backward_recursion(m, n, rng.uniform(-50, 50, (W, H)), micro_case.grids[n], scen)
            for s in range(W):
                for i, x in enumerate(vf.grid):
                    # below the grid values, and tight where the cut was generated
                    assert evaluate_value(vf, s, x) == pytest.approx(vf.values[s, i], abs=1e-6)
                    assert all(c(x) <= vf.values[s, i] + 1e-6 for c in vf.cuts[s])

    def test_slopes_bounded_by_penalties(self, micro_cases):
        rng = np.random.default_rng(2)
        for case in micro_cases:
            m = case.model
            H, W = m.timeline.hours_per_week, m.timeline.weeks_count
            for n, node in enumerate(m.nodes):
                if node.storage is None:
                    continue
                vf = backward_recursion(m, n, rng.uniform(-100, 100, (W, H)), case.grids[n], case.scenarios)
                bound = node.ens_penalty + node.final_penalty_rate
                for cuts in vf.cuts:
                    assert all(abs(c.slope) <= bound + 1e-6 for c in cuts)

    def test_more_grid_points_add_cuts_at_last_week(self, micro_case):
        m, scen = micro_case.model, micro_case.scenarios
        n = next(i for i, node in enumerate(m.nodes) if node.storage is not None)
        W, H = m.timeline.weeks_count, m.timeline.hours_per_week
        price = np.random.default_rng(3).uniform(-30, 30, (W, H))
        coarse = backward_recursion(m, n, price, storage_grid(m.nodes[n], 3), scen)
        fine = backward_recursion(m, n, price, storage_grid(m.nodes[n], 9), scen)
        for x in np.linspace(0, m.nodes[n].storage.capacity, 17):
            assert evaluate_value(fine, W - 1, x) >= evaluate_value(coarse, W - 1, x) - 1e-6

    def test_round_trip(self, micro_case):
        m, scen = micro_case.model, micro_case.scenarios
        W, H = m.timeline.weeks_count, m.timeline.hours_per_week
        vf = backward_recursion(m, 0, np.ones((W, H)), micro_case.grids[0], scen)
        gradient_recursion(vf)
        again = ValueFunction.from_dict(vf.to_dict())
        assert again == vf


class TestStorageGrid:
    def test_default_contains_bounds_and_targets(self):
        node = Node("s", Storage(100, 33.3, 10), final_target=71.0)
        g = storage_grid(node)
        assert g[0] == 0 and g[-1] == 100
        assert 33.3 in g and 71.0 in g
        assert len(g) == 53

    def test_no_storage(self):
        np.testing.assert_array_equal(storage_grid(Node("x")), [0.0])


class TestGradientRecursion:
    def test_self_sufficient_node(self):
        model = single_node(Storage(4, 2, 2), weeks=2, hours=2)
        scen = constant_scenarios(model, demand=1.0)
        vf = backward_recursion(model, 0, np.full((2, 2), 30.0), [0, 1, 2, 3, 4], scen, flow_box=(0.0, 0.0))
        grads = gradient_recursion(vf)
        for g in grads:
            np.testing.assert_array_equal(g, 0.0)

    def test_block_sum_of_flows(self):
        model = single_node(None, clusters=(), weeks=1, hours=2)
        scen = ScenarioSet(("a",), np.array([[[[2.0, 3.0]]]]), np.ones((1, 1, 1, 2)), np.zeros((1, 1, 1, 2)))
        vf = backward_recursion(model, 0, np.ones((1, 2)), [0.0], scen, block_hours=2, flow_box=(0.0, 10.0))
        grads = gradient_recursion(vf)
        np.testing.assert_allclose(grads[0], [[5.0]])

    def test_hourly_blocks(self):
        model = single_node(None, clusters=(), weeks=1, hours=2)
        scen = ScenarioSet(("a",), np.array([[[[2.0, 3.0]]]]), np.ones((1, 1, 1, 2)), np.zeros((1, 1, 1, 2)))
        vf = backward_recursion(model, 0, np.ones((1, 2)), [0.0], scen, block_hours=1, flow_box=(0.0, 10.0))
        np.testing.assert_allclose(gradient_recursion(vf)[0], [[2.0, 3.0]])

    def test_requires_backward_pass(self):
        vf = ValueFunction("n", np.zeros(1), [[Cut(0, 0)], [Cut(0, 0)]], np.zeros((2, 1)))
        with pytest.raises(ValueError, match="backward_recursion"):
            gradient_recursion(vf)

    @given(st.integers(0, 10_000))
    def test_nodal_supergradient(self, seed):
        rng = np.random.default_rng(seed)
        storage = Storage(capacity=3.0, initial_level=1.5, max_turbine=1.0, max_pump=1.0, pump_efficiency=0.9)
        model = SystemModel(Timeline(2, 2), (Node("h", storage, (ThermalCluster(2.0, 20.0),)),), ())
        scen = ScenarioSet(("h",), rng.integers(0, 4, (2, 2, 1, 2)).astype(float), np.ones((2, 2, 1, 2)),
                           rng.integers(0, 2, (2, 2, 1, 2)).astype(float))
        grid = np.linspace(0, 3, 7)

        def value_and_grad(price):
            vf = backward_recursion(model, 0, price, grid, scen, block_hours=1, flow_box=(-2.0, 2.0))
            gradient_recursion(vf)
            return vf.interpolate(0, 1.5), vf.gradient_at(0, 1.5)

        p, q = rng.uniform(-60, 60, (2, 2, 2))
        vp, gp = value_and_grad(p)
        vq, _ = value_and_grad(q)
        assert vq <= vp + gp @ (q - p).ravel() + 1e-6 * max(1.0, abs(vp))
