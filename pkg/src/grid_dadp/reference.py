"""Reference solvers: exact dynamic programming on a product grid, and SDDP."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lp import GridTable, MultiCuts, WeekSolver
from .model import SystemModel
from .nodal_sdp import final_cost
from .policy_sim import GlobalCostToGo, simulate_chronicle, terminal_cost_to_go
from .scenarios import Chronicle, ScenarioSet, sample_product_chronicle, weekly_expectation

log = logging.getLogger(__name__)


class GuardExceeded(RuntimeError):
    pass


@dataclass(eq=False)
class ExactDP:
    grids: list
    tables: list  # per week 0..W, arrays shaped by the grid sizes
    optimum: float

    def table(self, week: int) -> GridTable:
        return GridTable(self.grids, self.tables[week])

    def cost_to_go(self) -> GlobalCostToGo:
        return GlobalCostToGo([self.table(s) for s in range(len(self.tables))], "exact")

    def value(self, week: int, levels) -> float:
        return self.table(week).evaluate(levels)


def exact_global_dp(
    model: SystemModel,
    scenarios: ScenarioSet,
    grids: Sequence[np.ndarray],
    initial_levels=None,
    guard: int = 10**6,
) -> ExactDP:
    """Backward DP over the product of the node grids.

    The next week's value inside each stage LP is the convex combination of
    table entries reproducing the end-of-week levels.
    """
    W = model.timeline.weeks_count
    grids = [np.asarray(g, dtype=float) if n.storage is not None else np.zeros(1)
             for g, n in zip(grids, model.nodes)]
    shape = tuple(len(g) for g in grids)
    solves = int(np.prod(shape)) * W * scenarios.size
    if solves > guard:
        raise GuardExceeded(f"{solves} stage solves exceed the guard of {guard}")
    mesh = np.meshgrid(*grids, indexing="ij")
    tables = [None] * (W + 1)
    tables[W] = sum(final_cost(node, mesh[n]) for n, node in enumerate(model.nodes)) + np.zeros(shape)
    nodes = list(range(len(model.nodes)))
    for s in range(W - 1, -1, -1):
        nxt = GridTable(grids, tables[s + 1])
        solver = WeekSolver()
        tab = np.zeros(shape)
        for idx in np.ndindex(*shape):
            x = np.array([grids[n][i] for n, i in enumerate(idx)])
            costs = []
            for c in range(scenarios.size):
                wk = scenarios.weekly(c, s)
                costs.append(solver.solve(model, nodes, x, wk.net_demand, wk.availability, wk.inflow, nxt).objective)
            tab[idx] = weekly_expectation(costs)
        tables[s] = tab
    x0 = model.initial_levels() if initial_levels is None else np.asarray(initial_levels, dtype=float)
    optimum = GridTable(grids, tables[0]).evaluate(x0)
    return ExactDP(grids, tables, optimum)


def rollout_exact_policy(model: SystemModel, exact: ExactDP, chronicle: Chronicle, initial_levels=None):
    """Greedy weekly minimization against the exact tables."""
    return simulate_chronicle(model, exact.cost_to_go(), chronicle, initial_levels)


@dataclass
class SddpConfig:
    max_iters: int = 200
    samples: int = 1  # forward trajectories per iteration
    tol: float = 100.0
    relative_tol: Optional[float] = None  # if set, the threshold is relative_tol * |bound|
    patience: int = 2  # consecutive small improvements before stopping
    seed: int = 0
    time_limit: Optional[float] = None


@dataclass(eq=False)
class SddpModel:
    intercepts: list  # per week 0..W-1, list of floats
    slopes: list  # per week, list of arrays (nodes,)
    lb_trace: list = field(default_factory=list)
    terminal: object = None
    reason: str = ""
    wall_time: float = 0.0

    @property
    def lower_bound(self) -> float:
        return self.lb_trace[-1]

    def future(self, week: int):
        if week == len(self.intercepts):
            return self.terminal
        return MultiCuts(np.array(self.intercepts[week]), np.array(self.slopes[week]))

    def cost_to_go(self) -> GlobalCostToGo:
        return GlobalCostToGo([self.future(s) for s in range(len(self.intercepts) + 1)], "sddp")


def sddp_solve(
    model: SystemModel,
    scenarios: ScenarioSet,
    initial_levels=None,
    config: Optional[SddpConfig] = None,
) -> SddpModel:
    """Weekly-stage SDDP with forward sampling from the weekly product law."""
    cfg = config or SddpConfig()
    rng = np.random.default_rng(cfg.seed)
    W, N = model.timeline.weeks_count, len(model.nodes)
    x0 = model.initial_levels() if initial_levels is None else np.asarray(initial_levels, dtype=float)
    # every cost term is non-negative, so 0 is a valid first cut
    sd = SddpModel([[0.0] for _ in range(W)], [[np.zeros(N)] for _ in range(W)], terminal=terminal_cost_to_go(model))
    nodes = list(range(N))
    t0 = time.perf_counter()
    small = 0
    sd.reason = "iteration limit"
    for it in range(cfg.max_iters):
        # forward pass
        states = []
        solver = WeekSolver()
        for _ in range(cfg.samples):
            chron = sample_product_chronicle(rng, scenarios)
            x = x0.copy()
            path = [x]
            for s in range(W - 1):
                wk = chron.week(s)
                r = solver.solve(model, nodes, x, wk.net_demand, wk.availability, wk.inflow, sd.future(s + 1))
                x = r.next_levels.copy()
                path.append(x)
            states.append(path)
        # backward pass
        lb = None
        for s in range(W - 1, -1, -1):
            fut = sd.future(s + 1)
            for path in states:
                x = path[s]
                vals, duals = [], []
                for c in range(scenarios.size):
                    wk = scenarios.weekly(c, s)
                    r = solver.solve(model, nodes, x, wk.net_demand, wk.availability, wk.inflow, fut)
                    if not np.isfinite(r.objective):
                        raise RuntimeError(f"non-finite stage value at week {s}")
                    vals.append(r.objective)
                    duals.append(r.level_duals)
                v, beta = weekly_expectation(vals), weekly_expectation(np.array(duals))
                sd.intercepts[s].append(float(v - beta @ x))
                sd.slopes[s].append(np.asarray(beta, dtype=float))
                if s == 0:
                    lb = v if lb is None else max(lb, v)
        prev = sd.lb_trace[-1] if sd.lb_trace else None
        sd.lb_trace.append(float(lb))
        if prev is not None:
            threshold = cfg.tol if cfg.relative_tol is None else cfg.relative_tol * abs(lb)
            small = small + 1 if lb - prev < threshold else 0
            if small >= cfg.patience:
                sd.reason = "tolerance"
                break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            sd.reason = "time limit"
            break
    sd.wall_time = time.perf_counter() - t0
    log.info("SDDP stopped (%s) after %d iterations, bound %.6g", sd.reason, len(sd.lb_trace), sd.lower_bound)
    return sd
