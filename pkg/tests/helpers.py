"""Small hand-built systems shared by the unit tests."""
import numpy as np

from grid_dadp.model import Arc, Node, SystemModel, ThermalCluster, Timeline
from grid_dadp.scenarios import ScenarioSet


def single_node(storage=None, clusters=((10.0, 10.0),), weeks=1, hours=1, **kw):
    node = Node("a", storage, tuple(ThermalCluster(c, m) for c, m in clusters), **kw)
    return SystemModel(Timeline(weeks, hours), (node,), ())


def two_nodes(flow=(-5.0, 5.0), gamma=1.0, weeks=1, hours=2, storage=None):
    nodes = (
        Node("n1", storage, (ThermalCluster(10.0, 10.0),)),
        Node("n2", None, (ThermalCluster(10.0, 50.0),)),
    )
    return SystemModel(Timeline(weeks, hours), nodes, (Arc("a", "n1", "n2", flow[0], flow[1], gamma),))


def constant_scenarios(model, demand=0.0, availability=1.0, inflow=0.0, chronicles=1):
    W, H, N = model.timeline.weeks_count, model.timeline.hours_per_week, len(model.nodes)
    shape = (chronicles, W, N, H)
    return ScenarioSet(
        tuple(model.node_ids),
        np.broadcast_to(np.asarray(demand, dtype=float), shape).copy(),
        np.broadcast_to(np.asarray(availability, dtype=float), shape).copy(),
        np.broadcast_to(np.asarray(inflow, dtype=float), shape).copy(),
    )


# acceptance outcomes, keyed by criterion number; printed in the terminal summary
ACCEPTANCE: dict = {}


class criterion:
    """Record the outcome of one acceptance check under ``number``.

    A criterion checked by several tests passes only if all of them pass.
    """

    def __init__(self, number: int, text: str):
        self.number, self.text = number, text

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        prev = ACCEPTANCE.get(self.number)
        text = self.text if prev is None else prev[1]
        ACCEPTANCE[self.number] = (ok and (prev is None or prev[0]), text)
        print(f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {self.text}")
        return False
