"""Weekly hazard-decision linear program shared by every solver.

The same week problem appears in three guises: a single node facing a price on
its net import (nodal dynamic programming), all nodes coupled by hourly
Kirchhoff equalities (simulation, exact DP, SDDP).  In both cases the cost of
the end-of-week state is modelled by one of the :class:`Future` variants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import highspy
from scipy import sparse
from scipy.optimize import linprog

from .model import SystemModel

ARC_SEGMENTS = 16


class LPError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SeparableCuts:
    """Sum over nodes of univariate max-of-cuts plus a constant.

    ``cuts[i]`` is a pair ``(intercepts, slopes)`` for the i-th node of the
    week problem.
    """

    cuts: Sequence[tuple[np.ndarray, np.ndarray]]
    constant: float = 0.0

    def evaluate(self, levels) -> float:
        total = self.constant
        for (a, b), x in zip(self.cuts, levels):
            total += float(np.max(np.asarray(a) + np.asarray(b) * x))
        return total


@dataclass(frozen=True, eq=False)
class MultiCuts:
    """Max of affine functions ``intercepts[k] + slopes[k] @ levels``."""

    intercepts: np.ndarray
    slopes: np.ndarray

    def evaluate(self, levels) -> float:
        return float(np.max(self.intercepts + self.slopes @ np.asarray(levels, dtype=float)))


@dataclass(frozen=True, eq=False)
class GridTable:
    """Values sampled on a product grid, extended by convex combination.

    ``axes[i]`` is the grid of node i (``[0.0]`` for nodes without storage);
    ``values`` has shape ``tuple(len(a) for a in axes)``.
    """

    axes: Sequence[np.ndarray]
    values: np.ndarray

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def evaluate(self, levels) -> float:
        """Lower convex envelope of the samples at ``levels``."""
        pts = self.points()
        vals = self.values.ravel()
        if len(vals) == 1:
            return float(vals[0])
        active = [i for i, ax in enumerate(self.axes) if len(ax) > 1]
        res = linprog(
            vals,
            A_eq=np.vstack([np.ones(len(vals))] + [pts[:, i] for i in active]),
            b_eq=np.concatenate([[1.0], np.asarray(levels, dtype=float)[active]]),
            bounds=(0, None),
            method="highs",
        )
        if res.status != 0:
            raise LPError(f"level {levels} outside the grid hull")
        return float(res.fun)


Future = Union[SeparableCuts, MultiCuts, GridTable]


@dataclass
class WeekResult:
    objective: float
    thermal_cost: float
    ens_cost: float
    spill_cost: float
    transport_cost: float
    price_cost: float
    future_cost: float
    thermal: list  # per node (clusters, hours)
    ens: np.ndarray  # (nodes, hours)
    curtail: np.ndarray
    turbine: np.ndarray
    pump: np.ndarray
    spill: np.ndarray
    node_flow: np.ndarray  # (nodes, hours), import positive
    arc_flow: np.ndarray  # (arcs, hours)
    next_levels: np.ndarray  # (nodes,)
    level_duals: np.ndarray  # (nodes,) d objective / d initial level
    hourly_levels: np.ndarray = field(default=None)  # (nodes, hours + 1)

    @property
    def stage_cost(self) -> float:
        """Operating cost of the week, excluding price terms and future cost."""
        return self.thermal_cost + self.ens_cost + self.spill_cost + self.transport_cost


INF = highspy.kHighsInf


class _Layout:
    """Column and row bookkeeping while the LP is assembled."""

    def __init__(self):
        self.lo, self.hi, self.cost = [], [], []
        self.n = 0
        self.rows, self.cols, self.vals = [], [], []
        self.row_lo, self.row_hi = [], []

    def var(self, shape, lo, hi, cost=0.0) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        for store, v in ((self.lo, lo), (self.hi, hi), (self.cost, cost)):
            store.append(np.broadcast_to(np.asarray(v, dtype=float), shape).ravel())
        return idx

    def row(self, cols, vals, lo, hi) -> int:
        r = len(self.row_lo)
        self.rows.extend([r] * len(cols))
        self.cols.extend(int(c) for c in cols)
        self.vals.extend(float(v) for v in vals)
        self.row_lo.append(lo)
        self.row_hi.append(hi)
        return r

    def to_highs(self) -> highspy.Highs:
        lp = highspy.HighsLp()
        lp.num_col_ = self.n
        lp.num_row_ = len(self.row_lo)
        lp.col_cost_ = np.concatenate(self.cost)
        lp.col_lower_ = np.clip(np.concatenate(self.lo), -INF, INF)
        lp.col_upper_ = np.clip(np.concatenate(self.hi), -INF, INF)
        lp.row_lower_ = np.clip(np.array(self.row_lo, dtype=float), -INF, INF)
        lp.row_upper_ = np.clip(np.array(self.row_hi, dtype=float), -INF, INF)
        mat = sparse.csc_matrix((self.vals, (self.rows, self.cols)), shape=(lp.num_row_, self.n))
        mat.sum_duplicates()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = mat.indptr.astype(np.int32)
        lp.a_matrix_.index_ = mat.indices.astype(np.int32)
        lp.a_matrix_.value_ = mat.data
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("random_seed", 0)
        h.passModel(lp)
        return h


def arc_segments(flow_min: float, flow_max: float, gamma: float, segments: int = ARC_SEGMENTS):
    """Secant slopes of ``gamma * f**2`` on a uniform lattice of ``[flow_min, flow_max]``."""
    br = np.linspace(flow_min, flow_max, segments + 1)
    return br, gamma * (br[:-1] + br[1:]), np.diff(br)


def secant_cost(flow, flow_min, flow_max, gamma, segments: int = ARC_SEGMENTS):
    """Value of the secant interpolation of ``gamma * f**2`` at ``flow``."""
    br = np.linspace(flow_min, flow_max, segments + 1)
    return np.interp(flow, br, gamma * br**2)


def _future_signature(future) -> tuple:
    if isinstance(future, GridTable):
        return ("grid", tuple(len(a) for a in future.axes), tuple(np.asarray(a, dtype=float).tobytes() for a in future.axes))
    if isinstance(future, SeparableCuts):
        return ("separable", tuple(len(np.atleast_1d(a)) for a, _ in future.cuts))
    if isinstance(future, MultiCuts):
        return ("multi", len(future.intercepts))
    raise TypeError(f"unsupported future model {type(future).__name__}")


class WeekProblem:
    """One assembled week LP whose data (levels, chronicle, price, future
    values) can be swapped between solves.  HiGHS keeps the last basis, so
    consecutive solves are warm started.
    """

    def __init__(self, model: SystemModel, nodes: Sequence[int], priced: bool, flow_box, future: Future,
                 segments: int = ARC_SEGMENTS):
        H = model.timeline.hours_per_week
        self.model, self.nodes, self.priced, self.segments = model, list(nodes), priced, segments
        self.H = H
        nn = len(self.nodes)
        b = _Layout()
        self.th, self.ens, self.cur, self.flow = [], [], [], []
        self.tur, self.pump, self.spill, self.lev = {}, {}, {}, {}
        self.caps = []
        if priced:
            lo, hi = flow_box
            lo, hi = np.broadcast_to(lo, (nn,)), np.broadcast_to(hi, (nn,))
        for k, ni in enumerate(self.nodes):
            node = model.nodes[ni]
            K = len(node.clusters)
            caps = np.array([c.capacity for c in node.clusters], dtype=float).reshape(K, 1)
            self.caps.append(caps)
            costs = np.array([c.marginal_cost for c in node.clusters], dtype=float).reshape(K, 1)
            self.th.append(b.var((K, H), 0.0, np.broadcast_to(caps, (K, H)), costs))
            self.ens.append(b.var((H,), 0.0, np.inf, node.ens_penalty))
            self.cur.append(b.var((H,), 0.0, np.inf, node.spill_penalty))
            if priced:
                self.flow.append(b.var((H,), lo[k], hi[k], 0.0))
            else:
                self.flow.append(b.var((H,), -np.inf, np.inf, 0.0))
            s = node.storage
            if s is not None:
                self.tur[k] = b.var((H,), 0.0, s.max_turbine)
                self.pump[k] = b.var((H,), 0.0, s.max_pump)
                self.spill[k] = b.var((H,), 0.0, np.inf, node.spill_penalty)
                lev = b.var((H + 1,), 0.0, s.capacity)
                b.lo[-1][0], b.hi[-1][0] = -np.inf, np.inf  # pinned by the initial-level row
                self.lev[k] = lev

        # thermal + turbine - pump + ens - curtail + import = net demand
        self.balance = np.zeros((nn, H), dtype=np.int32)
        for k in range(nn):
            for h in range(H):
                cols = list(self.th[k][:, h]) + [self.ens[k][h], self.cur[k][h], self.flow[k][h]]
                vals = [1.0] * self.th[k].shape[0] + [1.0, -1.0, 1.0]
                if k in self.tur:
                    cols += [self.tur[k][h], self.pump[k][h]]
                    vals += [1.0, -1.0]
                self.balance[k, h] = b.row(cols, vals, 0.0, 0.0)

        self.level_row, self.dynamics = {}, {}
        for k, lev in self.lev.items():
            eff = model.nodes[self.nodes[k]].storage.pump_efficiency
            self.level_row[k] = b.row([lev[0]], [1.0], 0.0, 0.0)
            self.dynamics[k] = np.array([
                b.row([lev[h + 1], lev[h], self.tur[k][h], self.spill[k][h], self.pump[k][h]],
                      [1.0, -1.0, 1.0, 1.0, -eff], 0.0, 0.0)
                for h in range(H)
            ], dtype=np.int32)

        self.seg = []
        self.const = 0.0
        if not priced:
            if self.nodes != list(range(len(model.nodes))):
                raise ValueError("Kirchhoff coupling needs every node in the week problem")
            A = model.incidence
            base = np.array([arc.flow_min for arc in model.arcs], dtype=float)
            for arc in model.arcs:
                if arc.flow_max > arc.flow_min:
                    _, slopes, lengths = arc_segments(arc.flow_min, arc.flow_max, arc.quad_cost, segments)
                    self.seg.append(b.var((H, segments), 0.0, np.broadcast_to(lengths, (H, segments)),
                                          np.broadcast_to(slopes, (H, segments))))
                else:
                    self.seg.append(None)
                self.const += H * arc.quad_cost * arc.flow_min**2
            for k in range(nn):
                rhs = float(A[k] @ base)
                for h in range(H):
                    cols, vals = [self.flow[k][h]], [1.0]
                    for j in np.nonzero(A[k])[0]:
                        if self.seg[j] is not None:
                            cols.extend(self.seg[j][h])
                            vals.extend([-A[k, j]] * segments)
                    b.row(cols, vals, rhs, rhs)

        self.signature = _future_signature(future)
        self.lam = self.theta = None
        self.cut_rows = {}
        if isinstance(future, GridTable):
            pts = future.points()
            self.lam = b.var((len(pts),), 0.0, np.inf, 0.0)
            b.row(self.lam, np.ones(len(pts)), 1.0, 1.0)
            for k, lev in self.lev.items():
                b.row(list(self.lam) + [lev[H]], list(pts[:, k]) + [-1.0], 0.0, 0.0)
        elif isinstance(future, SeparableCuts):
            self.theta = {}
            for k, (alpha, _) in enumerate(future.cuts):
                count = len(np.atleast_1d(alpha))
                if count == 0:
                    raise LPError("empty cut list")
                if k in self.lev:
                    t = int(b.var((1,), -np.inf, np.inf, 1.0)[0])
                    self.theta[k] = t
                    self.cut_rows[k] = [b.row([self.lev[k][H], t], [0.0, -1.0], -np.inf, 0.0)
                                        for _ in range(count)]
        else:
            if len(future.intercepts) == 0:
                raise LPError("empty cut list")
            self.theta = int(b.var((1,), -np.inf, np.inf, 1.0)[0])
            ends = [self.lev[k][H] for k in sorted(self.lev)]
            self.cut_rows["all"] = [b.row(ends + [self.theta], [0.0] * len(ends) + [-1.0], -np.inf, 0.0)
                                    for _ in range(len(future.intercepts))]
        self.highs = b.to_highs()
        self.n = b.n

    def _set_rows(self, rows, values):
        rows = np.asarray(rows, dtype=np.int32).ravel()
        values = np.asarray(values, dtype=float).ravel()
        self.highs.changeRowsBounds(len(rows), rows, values, values)

    def solve(self, levels, net_demand, availability, inflow, future: Future, price=None) -> WeekResult:
        H, nn, h = self.H, len(self.nodes), self.highs
        net_demand = np.atleast_2d(np.asarray(net_demand, dtype=float))
        availability = np.atleast_2d(np.asarray(availability, dtype=float))
        inflow = np.atleast_2d(np.asarray(inflow, dtype=float))
        levels = np.atleast_1d(np.asarray(levels, dtype=float))

        self._set_rows(self.balance, net_demand)
        for k in self.lev:
            self._set_rows([self.level_row[k]], [levels[k]])
            self._set_rows(self.dynamics[k], inflow[k])
        cols = np.concatenate([t.ravel() for t in self.th]).astype(np.int32)
        if len(cols):
            ub = np.concatenate([(self.caps[k] * availability[k][None, :]).ravel() for k in range(nn)])
            h.changeColsBounds(len(cols), cols, np.zeros(len(cols)), ub)
        if self.priced:
            price = np.asarray(price, dtype=float).reshape(nn, H)
            fc = np.concatenate(self.flow).astype(np.int32)
            h.changeColsCost(len(fc), fc, price.ravel())

        future_const = 0.0
        if self.lam is not None:
            vals = np.asarray(future.values, dtype=float).ravel()
            h.changeColsCost(len(self.lam), self.lam.astype(np.int32), vals)
        elif isinstance(future, SeparableCuts):
            future_const = future.constant
            for k, (alpha, beta) in enumerate(future.cuts):
                alpha, beta = np.atleast_1d(alpha), np.atleast_1d(beta)
                if k not in self.lev:
                    future_const += float(np.max(alpha))
                    continue
                for r, a_, b_ in zip(self.cut_rows[k], alpha, beta):
                    h.changeCoeff(r, int(self.lev[k][H]), float(b_))
                h.changeRowsBounds(len(alpha), np.array(self.cut_rows[k], dtype=np.int32),
                                   np.full(len(alpha), -INF), -alpha.astype(float))
        else:
            rows = self.cut_rows["all"]
            ks = sorted(self.lev)
            for r, beta in zip(rows, future.slopes):
                for k in ks:
                    h.changeCoeff(r, int(self.lev[k][H]), float(beta[k]))
            h.changeRowsBounds(len(rows), np.array(rows, dtype=np.int32), np.full(len(rows), -INF),
                               -np.asarray(future.intercepts, dtype=float))

        h.run()
        status = h.getModelStatus()
        if status != highspy.HighsModelStatus.kOptimal:
            # a stale basis can occasionally stall the simplex; retry cold
            h.clearSolver()
            h.run()
            status = h.getModelStatus()
            if status != highspy.HighsModelStatus.kOptimal:
                raise LPError(f"weekly LP failed: {h.modelStatusToString(status)}")
        sol = h.getSolution()
        x = np.asarray(sol.col_value)
        duals = np.asarray(sol.row_dual)
        return self._result(x, duals, h.getInfo().objective_function_value, future, future_const, price)

    def _result(self, x, duals, fun, future, future_const, price) -> WeekResult:
        H, nn, model = self.H, len(self.nodes), self.model
        thermal = [x[t] for t in self.th]
        ens = np.array([x[e] for e in self.ens])
        curtail = np.array([x[e] for e in self.cur])
        node_flow = np.array([x[f] for f in self.flow])
        zeros = np.zeros(H)
        turbine = np.array([x[self.tur[k]] if k in self.tur else zeros for k in range(nn)])
        pump = np.array([x[self.pump[k]] if k in self.pump else zeros for k in range(nn)])
        spill = np.array([x[self.spill[k]] if k in self.spill else zeros for k in range(nn)])
        hourly_levels = np.array([x[self.lev[k]] if k in self.lev else np.zeros(H + 1) for k in range(nn)])
        level_duals = np.array([duals[self.level_row[k]] if k in self.level_row else 0.0 for k in range(nn)])

        thermal_cost = ens_cost = spill_cost = 0.0
        for k, ni in enumerate(self.nodes):
            node = model.nodes[ni]
            costs = np.array([c.marginal_cost for c in node.clusters])
            thermal_cost += float(costs @ thermal[k].sum(axis=1)) if len(costs) else 0.0
            ens_cost += node.ens_penalty * float(ens[k].sum())
            spill_cost += node.spill_penalty * float(curtail[k].sum() + spill[k].sum())

        arc_flow = np.zeros((len(model.arcs), H))
        transport_cost = price_cost = 0.0
        if self.priced:
            price_cost = float(np.sum(price * node_flow))
        else:
            for j, arc in enumerate(model.arcs):
                arc_flow[j] = arc.flow_min + (x[self.seg[j]].sum(axis=1) if self.seg[j] is not None else 0.0)
                transport_cost += float(
                    secant_cost(arc_flow[j], arc.flow_min, arc.flow_max, arc.quad_cost, self.segments).sum())

        if self.lam is not None:
            future_cost = float(np.asarray(future.values, dtype=float).ravel() @ x[self.lam])
        elif isinstance(self.theta, dict):
            future_cost = future_const + sum(float(x[t]) for t in self.theta.values())
        else:
            future_cost = float(x[self.theta])

        return WeekResult(
            objective=float(fun) + self.const + future_const,
            thermal_cost=thermal_cost,
            ens_cost=ens_cost,
            spill_cost=spill_cost,
            transport_cost=transport_cost,
            price_cost=price_cost,
            future_cost=future_cost,
            thermal=thermal,
            ens=ens,
            curtail=curtail,
            turbine=turbine,
            pump=pump,
            spill=spill,
            node_flow=node_flow,
            arc_flow=arc_flow,
            next_levels=hourly_levels[:, H].copy(),
            level_duals=level_duals,
            hourly_levels=hourly_levels,
        )


class WeekSolver:
    """Cache of assembled week problems keyed by their structure.

    Create one per sequential loop; it is not thread safe, and sharing one
    across unrelated loops would make warm starts (hence tie-breaking among
    equivalent optima) depend on call order.
    """

    def __init__(self):
        self._problems: dict = {}

    def solve(self, model, nodes, levels, net_demand, availability, inflow, future: Future,
              price=None, flow_box=None, segments: int = ARC_SEGMENTS) -> WeekResult:
        box = None
        if price is not None:
            box = tuple(tuple(np.broadcast_to(np.asarray(v, dtype=float), (len(nodes),))) for v in flow_box)
        key = (id(model), tuple(nodes), box, segments, _future_signature(future))
        prob = self._problems.get(key)
        if prob is None:
            prob = WeekProblem(model, nodes, price is not None, box, future, segments)
            self._problems[key] = prob
        return prob.solve(levels, net_demand, availability, inflow, future, price)


def solve_week(
    model: SystemModel,
    nodes: Sequence[int],
    levels,
    net_demand,
    availability,
    inflow,
    future: Future,
    price=None,
    flow_box=None,
    segments: int = ARC_SEGMENTS,
    solver: Optional[WeekSolver] = None,
) -> WeekResult:
    """Solve one deterministic week.

    With ``price`` given (shape ``(len(nodes), hours)``) the node flows are free
    inside ``flow_box`` and priced; otherwise they must equal the incidence
    image of the arc flows, whose quadratic cost is replaced by its secant
    interpolation with ``segments`` pieces.
    """
    solver = solver or WeekSolver()
    return solver.solve(model, nodes, levels, net_demand, availability, inflow, future, price, flow_box, segments)
