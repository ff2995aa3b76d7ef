import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grid_dadp.model import (
    Arc,
    ModelError,
    Node,
    Storage,
    SystemModel,
    ThermalCluster,
    Timeline,
    UnsupportedOperation,
    build_incidence,
    hourly_dynamics,
    load_system,
    save_system,
    system_from_dict,
    system_to_dict,
    validate_system,
    weekly_dynamics,
)


def nodes(*ids):
    return [Node(i, None, (ThermalCluster(1.0, 1.0),)) for i in ids]


class TestIncidence:
    def test_single_arc_column(self):
        A = build_incidence(nodes("1", "2"), [Arc("a", "1", "2", -1, 1)])
        np.testing.assert_array_equal(A, [[1.0], [-1.0]])

    def test_no_arcs_gives_empty_matrix(self):
        assert build_incidence(nodes("1"), []).shape == (1, 0)

    def test_three_node_line(self):
        A = build_incidence(nodes("1", "2", "3"), [Arc("a", "1", "2", -1, 1), Arc("b", "2", "3", -1, 1)])
        np.testing.assert_array_equal(A, [[1, 0], [-1, 1], [0, -1]])

    def test_unknown_endpoint(self):
        with pytest.raises(ModelError, match="unknown node 'x'"):
            build_incidence(nodes("1"), [Arc("a", "1", "x", -1, 1)])

    def test_self_loop(self):
        with pytest.raises(ModelError, match="self-loop"):
            build_incidence(nodes("1"), [Arc("a", "1", "1", -1, 1)])

    @given(st.integers(2, 6), st.data())
    def test_columns_sum_to_zero(self, n, data):
        ids = [str(i) for i in range(n)]
        pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                   .filter(lambda p: p[0] != p[1]), max_size=8))
        arcs = [Arc(f"a{k}", ids[i], ids[j], -1, 1) for k, (i, j) in enumerate(pairs)]
        A = build_incidence(nodes(*ids), arcs)
        np.testing.assert_array_equal(A.sum(axis=0), np.zeros(len(arcs)))
        np.testing.assert_array_equal(np.abs(A).sum(axis=0), np.full(len(arcs), 2.0))

    def test_incidence_is_read_only(self):
        model = SystemModel(Timeline(1, 1), tuple(nodes("1", "2")), (Arc("a", "1", "2", -1, 1),))
        with pytest.raises(ValueError):
            model.incidence[0, 0] = 5.0

    def test_duplicate_ids(self):
        with pytest.raises(ModelError, match="duplicate"):
            SystemModel(Timeline(1, 1), tuple(nodes("1", "1")))


class TestValidation:
    def well_formed(self):
        return SystemModel(
            Timeline(2, 3),
            (
                Node("1", Storage(10, 5, 2), (ThermalCluster(5, 10),)),
                Node("2", None, (ThermalCluster(5, 20),)),
            ),
            (Arc("a", "1", "2", -3, 3),),
        )

    def test_well_formed(self):
        assert validate_system(self.well_formed()) == []

    def test_merit_order_violation(self):
        model = SystemModel(Timeline(1, 1), (Node("1", None, (ThermalCluster(5, 10),), ens_penalty=5),))
        problems = validate_system(model)
        assert len(problems) == 1
        assert "merit order" in problems[0]

    def test_initial_level_above_capacity(self):
        model = SystemModel(Timeline(1, 1), (Node("1", Storage(10, 12, 1), (ThermalCluster(5, 10),)),))
        problems = validate_system(model)
        assert len(problems) == 1
        assert "initial_level" in problems[0]

    def test_arc_bounds_and_cost(self):
        model = SystemModel(
            Timeline(1, 1), tuple(nodes("1", "2")), (Arc("a", "1", "2", 1, 3, 0.0),)
        )
        assert len(validate_system(model)) == 2

    def test_load_rejects_invalid(self, tmp_path):
        bad = SystemModel(Timeline(1, 1), (Node("1", None, (ThermalCluster(5, 10),), ens_penalty=1),))
        path = tmp_path / "s.json"
        save_system(bad, path)
        with pytest.raises(ModelError, match="merit order"):
            load_system(path)


class TestDynamics:
    node = Node("s", Storage(capacity=200, initial_level=10, max_turbine=5, max_pump=5, pump_efficiency=0.5))

    def test_identity(self):
        assert hourly_dynamics(self.node, 10, 0, 0, 0, 0) == 10

    def test_turbine(self):
        assert hourly_dynamics(self.node, 10, 2, 3, 0, 0) == 9

    def test_spill(self):
        assert hourly_dynamics(self.node, 0, 5, 0, 0, 5) == 0

    def test_pump_efficiency(self):
        assert hourly_dynamics(self.node, 0, 0, 0, 4, 0) == 2

    def test_requires_storage(self):
        with pytest.raises(UnsupportedOperation):
            hourly_dynamics(Node("x"), 0, 0, 0, 0, 0)

    def test_week_without_controls(self):
        assert weekly_dynamics(self.node, 7.0, np.zeros(4), {}) == 7.0

    def test_two_hour_week(self):
        assert weekly_dynamics(self.node, 3.0, [1, 1], {"turbine": [0, 2]}) == 3.0

    def test_no_clipping_at_capacity(self):
        # bounds are constraints elsewhere, so the law itself never clips
        assert weekly_dynamics(self.node, 10.0, np.ones(168), {}) == 178.0

    def test_control_shape_mismatch(self):
        with pytest.raises(ValueError, match="turbine"):
            weekly_dynamics(self.node, 0.0, [1, 1], {"turbine": [1, 2, 3]})

    @given(
        st.floats(0, 100),
        st.floats(-50, 50),
        st.lists(st.tuples(*[st.floats(0, 10)] * 4), min_size=1, max_size=4),
    )
    def test_fold_and_affinity(self, level, delta, hours):
        inflow, tur, pump, spill = (np.array(col) for col in zip(*hours))
        controls = {"turbine": tur, "pump": pump, "spill": spill}
        folded = level
        for h in range(len(inflow)):
            folded = hourly_dynamics(self.node, folded, inflow[h], tur[h], pump[h], spill[h])
        end = weekly_dynamics(self.node, level, inflow, controls)
        assert end == pytest.approx(folded, abs=1e-9)
        shifted = weekly_dynamics(self.node, level + delta, inflow, controls)
        assert shifted - end == pytest.approx(delta, abs=1e-9)

    def test_exhaustive_small_weeks(self):
        values = (0.0, 1.0, 2.5)
        for H in (1, 2):
            for inflow, tur in itertools.product(itertools.product(values, repeat=H), repeat=2):
                expected = 4.0 + sum(inflow) - sum(tur)
                assert weekly_dynamics(self.node, 4.0, inflow, {"turbine": tur}) == pytest.approx(expected)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        model = SystemModel(
            Timeline(3, 4),
            (
                Node("h", Storage(10, 5, 2, 1, 0.7), (ThermalCluster(5, 10), ThermalCluster(3, 30)),
                     final_target=6.0),
                Node("c", None, (ThermalCluster(5, 20),), ens_penalty=1000, spill_penalty=1),
            ),
            (Arc("a", "h", "c", -3, 2, 0.5),),
        )
        assert system_from_dict(system_to_dict(model)) == model
        save_system(model, tmp_path / "m.json")
        assert load_system(tmp_path / "m.json") == model

    def test_malformed(self):
        with pytest.raises(ModelError, match="malformed"):
            system_from_dict({"nodes": [{"clusters": []}]})

    def test_target_defaults_to_initial_level(self):
        assert Node("x", Storage(10, 4, 1)).target == 4
        assert Node("x", Storage(10, 4, 1), final_target=7).target == 7
        assert Node("x").target == 0.0
