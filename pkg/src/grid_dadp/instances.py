"""Synthetic instances: random micro systems for checks, and a 3-node tutorial."""
from __future__ import annotations

import numpy as np

from .model import Arc, Node, Storage, SystemModel, ThermalCluster, Timeline
from .scenarios import ScenarioSet


def micro_instance(rng: np.random.Generator, nodes=None, weeks=None, hours=None, chronicles=None):
    """Random small system with integer data and its training chronicles.

    Storage capacities are small integers so that a half-unit grid is fine
    enough for exact dynamic programming.
    """
    N = nodes or int(rng.integers(2, 4))
    W = weeks or int(rng.integers(2, 5))
    H = hours or int(rng.integers(2, 4))
    C = chronicles or int(rng.integers(2, 4))
    has_storage = rng.random(N) < 0.7
    has_storage[int(rng.integers(N))] = True
    node_list = []
    for n in range(N):
        clusters = tuple(
            ThermalCluster(float(rng.integers(1, 4)), float(rng.integers(1, 10) * 10))
            for _ in range(int(rng.integers(1, 3)))
        )
        storage = None
        if has_storage[n]:
            cap = float(rng.integers(2, 4))
            storage = Storage(
                capacity=cap,
                initial_level=float(rng.integers(0, int(cap) + 1)),
                max_turbine=float(rng.integers(1, 3)),
                max_pump=float(rng.integers(0, 2)),
                pump_efficiency=1.0,
            )
        node_list.append(Node(id=f"n{n}", storage=storage, clusters=clusters))
    arcs = [
        Arc(f"a{n}", f"n{n}", f"n{n + 1}", -float(rng.integers(1, 3)), float(rng.integers(1, 3)),
            float(rng.choice([0.5, 1.0, 2.0])))
        for n in range(N - 1)
    ]
    model = SystemModel(Timeline(W, H), tuple(node_list), tuple(arcs))
    shape = (C, W, N, H)
    demand = rng.integers(0, 6, size=shape).astype(float)
    avail = rng.choice([0.5, 1.0], size=shape)
    inflow = rng.integers(0, 3, size=shape).astype(float)
    scen = ScenarioSet(tuple(model.node_ids), demand, avail, inflow)
    return model, scen


def lattice_grids(model: SystemModel, step: float = 0.5) -> list[np.ndarray]:
    """Regular storage grids with spacing ``step`` (``[0]`` for nodes without storage)."""
    grids = []
    for node in model.nodes:
        if node.storage is None:
            grids.append(np.zeros(1))
        else:
            grids.append(np.arange(0.0, node.storage.capacity + step / 2, step))
    return grids


def tutorial_instance(seed: int = 7, weeks: int = 8, hours: int = 24, chronicles: int = 6):
    """Three nodes on a line: a hydro valley, a thermal hub and a demand centre."""
    rng = np.random.default_rng(seed)
    model = SystemModel(
        Timeline(weeks, hours),
        (
            Node(
                "hydro",
                Storage(capacity=6000.0, initial_level=3000.0, max_turbine=300.0, max_pump=0.0),
                (ThermalCluster(100.0, 60.0),),
            ),
            Node("hub", None, (ThermalCluster(400.0, 40.0), ThermalCluster(200.0, 90.0))),
            Node(
                "city",
                Storage(capacity=800.0, initial_level=400.0, max_turbine=100.0, max_pump=100.0, pump_efficiency=0.8),
                (ThermalCluster(250.0, 120.0),),
            ),
        ),
        (
            Arc("hydro-hub", "hydro", "hub", -250.0, 250.0, 0.01),
            Arc("hub-city", "hub", "city", -300.0, 300.0, 0.01),
        ),
    )
    W, H, C, N = weeks, hours, chronicles, 3
    t = np.arange(H)
    daily = 1.0 + 0.25 * np.sin(2 * np.pi * (t - 8) / 24)
    season = 1.0 + 0.2 * np.cos(2 * np.pi * np.arange(W) / max(W, 1))
    base = np.array([120.0, 300.0, 420.0])
    demand = np.empty((C, W, N, H))
    avail = np.empty((C, W, N, H))
    inflow = np.zeros((C, W, N, H))
    for c in range(C):
        level = 1.0 + 0.08 * rng.standard_normal(W)
        for w in range(W):
            shock = 1.0 + 0.05 * rng.standard_normal((N, 1))
            demand[c, w] = base[:, None] * daily[None, :] * season[w] * level[w] * shock
            avail[c, w] = np.clip(0.9 + 0.08 * rng.standard_normal((N, 1)), 0.5, 1.0) * np.ones((N, H))
            inflow[c, w, 0] = max(0.0, 110.0 * (1 + 0.4 * rng.standard_normal())) * np.ones(H)
            inflow[c, w, 2] = max(0.0, 10.0 * (1 + 0.5 * rng.standard_normal())) * np.ones(H)
    scen = ScenarioSet(tuple(model.node_ids), np.round(demand, 3), np.round(avail, 3), np.round(inflow, 3))
    return model, scen
