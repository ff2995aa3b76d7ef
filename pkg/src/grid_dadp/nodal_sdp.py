"""Nodal stochastic dynamic programming for a fixed price process.

For one node, the coupling with the rest of the network is replaced by a
deterministic price on its net import.  The resulting single-storage problem is
solved backward week by week on a storage grid; each weekly problem is an LP in
which the next week's value is the convex interpolation of the grid values.
Every grid solve also yields a cut (from the dual of the initial-level
equality), and the price-gradient of the value is propagated backward with the
optimal imports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lp import GridTable, SeparableCuts, WeekSolver, solve_week
from .model import Node, SystemModel
from .scenarios import ScenarioSet, WeeklyChronicle, weekly_expectation

log = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 51


class EmptyCutsError(ValueError):
    pass


@dataclass(frozen=True)
class Cut:
    intercept: float
    slope: float
    week: int = 0
    node: str = ""

    def __call__(self, level):
        return self.intercept + self.slope * level


@dataclass(eq=False)
class ValueFunction:
    """Cost-to-go of one node for weeks ``0..W`` (week ``W`` is terminal).

    ``values[s, i]`` is the value at ``grid[i]`` at the start of week ``s``;
    ``gradients[s]`` has shape ``(len(grid), (W - s) * blocks_per_week)`` and
    holds the price-gradient over the remaining price blocks.
    """

    node: str
    grid: np.ndarray
    cuts: list  # list (per week) of lists of Cut
    values: np.ndarray
    gradients: list = field(default_factory=list)
    # per week: next levels (grid, chronicles) and block imports (grid, chronicles, blocks)
    next_levels: list = field(default_factory=list, repr=False)
    block_flows: list = field(default_factory=list, repr=False)
    clamped: int = 0

    @property
    def weeks(self) -> int:
        return len(self.cuts) - 1

    def cut_arrays(self, week: int) -> tuple[np.ndarray, np.ndarray]:
        cuts = self.cuts[week]
        return np.array([c.intercept for c in cuts]), np.array([c.slope for c in cuts])

    def grid_table(self, week: int) -> GridTable:
        return GridTable([self.grid], self.values[week])

    def interpolate(self, week: int, level: float) -> float:
        return float(np.interp(level, self.grid, self.values[week]))

    def gradient_at(self, week: int, level: float) -> np.ndarray:
        return _interp_rows(self.grid, self.gradients[week], level)[0]

    def __eq__(self, other):
        if not isinstance(other, ValueFunction):
            return NotImplemented
        return (
            self.node == other.node
            and np.array_equal(self.grid, other.grid)
            and self.cuts == other.cuts
            and np.array_equal(self.values, other.values)
            and len(self.gradients) == len(other.gradients)
            and all(np.array_equal(a, b) for a, b in zip(self.gradients, other.gradients))
        )

    __hash__ = None

    def to_dict(self) -> dict:
        weeks = []
        for s in range(len(self.cuts)):
            week = {
                "week": s,
                "cuts": [{"intercept": c.intercept, "slope": c.slope} for c in self.cuts[s]],
                "values": self.values[s].tolist(),
            }
            if self.gradients:
                week["gradients"] = np.asarray(self.gradients[s]).tolist()
            weeks.append(week)
        return {"node": self.node, "grid": self.grid.tolist(), "weeks": weeks}

    @classmethod
    def from_dict(cls, d: dict) -> "ValueFunction":
        weeks = sorted(d["weeks"], key=lambda w: w["week"])
        grid = np.array(d["grid"], dtype=float)
        gradients = []
        if weeks and all("gradients" in w for w in weeks):
            gradients = [np.array(w["gradients"], dtype=float).reshape(len(grid), -1) for w in weeks]
        return cls(
            node=d["node"],
            grid=grid,
            cuts=[[Cut(c["intercept"], c["slope"], w["week"], d["node"]) for c in w["cuts"]] for w in weeks],
            values=np.array([w["values"] for w in weeks], dtype=float),
            gradients=gradients,
        )


def _interp_rows(grid: np.ndarray, rows: np.ndarray, level: float) -> tuple[np.ndarray, bool]:
    """Linear interpolation of per-grid-point vectors; clamps outside the hull."""
    clamped = level < grid[0] - 1e-9 or level > grid[-1] + 1e-9
    if len(grid) == 1:
        return rows[0], clamped
    x = min(max(level, grid[0]), grid[-1])
    i = int(np.clip(np.searchsorted(grid, x, side="right") - 1, 0, len(grid) - 2))
    t = (x - grid[i]) / (grid[i + 1] - grid[i])
    return (1 - t) * rows[i] + t * rows[i + 1], clamped


def storage_grid(node: Node, points: int = DEFAULT_GRID_POINTS, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform grid on ``[0, capacity]`` plus the initial level and final target."""
    if node.storage is None:
        return np.zeros(1)
    cap = node.storage.capacity
    pts = np.concatenate([np.linspace(0.0, cap, max(points, 2)), [node.initial_level, node.target], extra])
    return np.unique(np.round(pts, 12))


def final_cost(node: Node, level) -> float:
    """Two-segment terminal penalty on the shortfall below the target."""
    return node.final_penalty_rate * np.maximum(0.0, node.target - level)


def final_cuts(node: Node, week: int) -> list[Cut]:
    if node.storage is None:
        return [Cut(0.0, 0.0, week, node.id)]
    rate = node.final_penalty_rate
    return [Cut(rate * node.target, -rate, week, node.id), Cut(0.0, 0.0, week, node.id)]


def evaluate_value(value_function: ValueFunction, week: int, level: float) -> float:
    """Maximum of the week's cuts at ``level``."""
    cuts = value_function.cuts[week]
    if not cuts:
        raise EmptyCutsError(f"no cuts for node {value_function.node} week {week}")
    return max(c(level) for c in cuts)


@dataclass
class WeeklySolution:
    cost: float
    thermal: np.ndarray  # (clusters, hours)
    ens: np.ndarray
    curtail: np.ndarray
    turbine: np.ndarray
    pump: np.ndarray
    spill: np.ndarray
    flow: np.ndarray  # import positive
    next_level: float
    level_dual: float
    stage_cost: float = 0.0
    future_cost: float = 0.0
    hourly_levels: Optional[np.ndarray] = None


def default_flow_box(model: SystemModel, node_index: int) -> tuple[float, float]:
    lo, hi = model.node_flow_box()
    return float(lo[node_index]), float(hi[node_index])


def solve_weekly_subproblem(
    model: SystemModel,
    node_index: int,
    level: float,
    weekly: WeeklyChronicle,
    hourly_price,
    next_value,
    flow_box: Optional[tuple[float, float]] = None,
    solver: Optional[WeekSolver] = None,
) -> WeeklySolution:
    """Solve one node's week with priced imports.

    ``weekly`` holds this node's data only (arrays shaped ``(1, hours)``).
    ``next_value`` is a :class:`GridTable`, a list of :class:`Cut`, or a
    ``(intercepts, slopes)`` pair.  ``cost`` includes the price term and the
    next week's value.
    """
    if flow_box is None:
        flow_box = default_flow_box(model, node_index)
    if isinstance(next_value, GridTable):
        future = next_value
    else:
        if isinstance(next_value, (list, tuple)) and next_value and isinstance(next_value[0], Cut):
            a = np.array([c.intercept for c in next_value])
            b = np.array([c.slope for c in next_value])
        else:
            a, b = next_value
        future = SeparableCuts([(np.atleast_1d(a), np.atleast_1d(b))])
    r = solve_week(
        model,
        [node_index],
        [level],
        weekly.net_demand,
        weekly.availability,
        weekly.inflow,
        future,
        price=np.atleast_2d(hourly_price),
        flow_box=(np.array([flow_box[0]]), np.array([flow_box[1]])),
        solver=solver,
    )
    return WeeklySolution(
        cost=r.objective,
        thermal=r.thermal[0],
        ens=r.ens[0],
        curtail=r.curtail[0],
        turbine=r.turbine[0],
        pump=r.pump[0],
        spill=r.spill[0],
        flow=r.node_flow[0],
        next_level=float(r.next_levels[0]),
        level_dual=float(r.level_duals[0]),
        stage_cost=r.stage_cost,
        future_cost=r.future_cost,
        hourly_levels=r.hourly_levels[0],
    )


def backward_recursion(
    model: SystemModel,
    node_index: int,
    hourly_price,
    grid,
    training: ScenarioSet,
    block_hours: Optional[int] = None,
    flow_box: Optional[tuple[float, float]] = None,
) -> ValueFunction:
    """Backward pass over weeks for one node.

    ``hourly_price`` has shape ``(weeks, hours)``.  Grid values are the
    chronicle averages of the weekly LP optima; one averaged cut is added per
    grid point.  Optimal next levels and block imports are kept for
    :func:`gradient_recursion`.
    """
    node = model.nodes[node_index]
    W, H = model.timeline.weeks_count, model.timeline.hours_per_week
    block_hours = block_hours or H
    B = H // block_hours
    grid = np.asarray(grid, dtype=float)
    if node.storage is None:
        grid = np.zeros(1)
    price = np.asarray(hourly_price, dtype=float).reshape(W, H)
    G, C = len(grid), training.size

    values = np.zeros((W + 1, G))
    values[W] = final_cost(node, grid)
    cuts: list = [None] * (W + 1)
    cuts[W] = final_cuts(node, W)
    next_levels = [None] * W
    block_flows = [None] * W
    solver = WeekSolver()
    for s in range(W - 1, -1, -1):
        table = GridTable([grid], values[s + 1])
        nxt = np.zeros((G, C))
        flows = np.zeros((G, C, B))
        week_cuts = []
        for i, x in enumerate(grid):
            costs, duals = np.zeros(C), np.zeros(C)
            for c in range(C):
                sol = solve_weekly_subproblem(
                    model, node_index, x, training.weekly(c, s).node(node_index), price[s], table, flow_box, solver
                )
                costs[c], duals[c] = sol.cost, sol.level_dual
                nxt[i, c] = sol.next_level
                flows[i, c] = sol.flow.reshape(B, block_hours).sum(axis=1)
            values[s, i] = weekly_expectation(costs)
            slope = weekly_expectation(duals) if node.storage is not None else 0.0
            cut = Cut(values[s, i] - slope * x, slope, s, node.id)
            if cut not in week_cuts:
                week_cuts.append(cut)
        cuts[s] = week_cuts
        next_levels[s] = nxt
        block_flows[s] = flows
    return ValueFunction(node.id, grid, cuts, values, next_levels=next_levels, block_flows=block_flows)


def gradient_recursion(value_function: ValueFunction) -> list[np.ndarray]:
    """Price-gradients of the grid values, computed backward.

    For week ``s`` the entries for this week's blocks are the expected block
    imports; the entries for later weeks are the expected next-week gradients
    interpolated at the realized next levels.  The result is also stored on
    ``value_function.gradients``.
    """
    vf = value_function
    W = vf.weeks
    if len(vf.block_flows) != W or any(f is None for f in vf.block_flows):
        raise ValueError("backward_recursion must run first (optimal controls missing)")
    G = len(vf.grid)
    B = vf.block_flows[0].shape[2] if W else 0
    grads: list = [None] * (W + 1)
    grads[W] = np.zeros((G, 0))
    clamped = 0
    for s in range(W - 1, -1, -1):
        C = vf.block_flows[s].shape[1]
        out = np.zeros((G, (W - s) * B))
        for i in range(G):
            acc = np.zeros((C, (W - s) * B))
            for c in range(C):
                acc[c, :B] = vf.block_flows[s][i, c]
                later, was_clamped = _interp_rows(vf.grid, grads[s + 1], vf.next_levels[s][i, c])
                clamped += was_clamped
                acc[c, B:] = later
            out[i] = weekly_expectation(acc)
        grads[s] = out
    if clamped:
        log.warning("node %s: %d next levels fell outside the grid hull and were clamped", vf.node, clamped)
    vf.gradients = grads
    vf.clamped = clamped
    return grads
