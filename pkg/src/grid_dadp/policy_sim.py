"""Global policy simulation driven by a family of weekly cost-to-go functions.

Each week the whole network is dispatched jointly by one LP (hourly balances,
storage dynamics, Kirchhoff coupling, secant-linearized transport cost) with
the cost-to-go of the next week applied to the end-of-week levels.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lp import ARC_SEGMENTS, GridTable, MultiCuts, SeparableCuts, WeekSolver, secant_cost
from .model import SystemModel
from .nodal_sdp import final_cost, final_cuts
from .scenarios import Chronicle, ScenarioSet, count_product_support, sample_product_chronicle

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
Z95 = 1.96


class SimulationError(RuntimeError):
    pass


@dataclass(eq=False)
class GlobalCostToGo:
    """Cost-to-go for weeks ``0..W``; entry ``s`` prices the state at the start of week ``s``."""

    weeks: list
    method: str = ""

    def __len__(self):
        return len(self.weeks)

    def evaluate(self, week: int, levels) -> float:
        return self.weeks[week].evaluate(levels)

    def to_dict(self) -> dict:
        out = []
        for s, f in enumerate(self.weeks):
            if isinstance(f, SeparableCuts):
                out.append(
                    {
                        "week": s,
                        "kind": "separable",
                        "constant": f.constant,
                        "cuts": [{"intercepts": np.asarray(a).tolist(), "slopes": np.asarray(b).tolist()}
                                 for a, b in f.cuts],
                    }
                )
            elif isinstance(f, MultiCuts):
                out.append(
                    {"week": s, "kind": "cuts", "intercepts": f.intercepts.tolist(), "slopes": f.slopes.tolist()}
                )
            elif isinstance(f, GridTable):
                out.append(
                    {"week": s, "kind": "grid", "axes": [np.asarray(a).tolist() for a in f.axes],
                     "values": np.asarray(f.values).tolist()}
                )
            else:
                raise TypeError(type(f).__name__)
        return {"schema_version": SCHEMA_VERSION, "method": self.method, "weeks": out}

    @classmethod
    def from_dict(cls, d: dict) -> "GlobalCostToGo":
        weeks = []
        for w in sorted(d["weeks"], key=lambda w: w["week"]):
            if w["kind"] == "separable":
                weeks.append(
                    SeparableCuts(
                        [(np.array(c["intercepts"], dtype=float), np.array(c["slopes"], dtype=float))
                         for c in w["cuts"]],
                        float(w["constant"]),
                    )
                )
            elif w["kind"] == "cuts":
                weeks.append(MultiCuts(np.array(w["intercepts"], dtype=float),
                                       np.array(w["slopes"], dtype=float).reshape(len(w["intercepts"]), -1)))
            elif w["kind"] == "grid":
                weeks.append(GridTable([np.array(a, dtype=float) for a in w["axes"]],
                                       np.array(w["values"], dtype=float)))
            else:
                raise ValueError(f"unknown cost-to-go kind {w['kind']!r}")
        return cls(weeks, d.get("method", ""))


def terminal_cost_to_go(model: SystemModel) -> SeparableCuts:
    W = model.timeline.weeks_count
    cuts = []
    for node in model.nodes:
        fc = final_cuts(node, W)
        cuts.append((np.array([c.intercept for c in fc]), np.array([c.slope for c in fc])))
    return SeparableCuts(cuts)


def dadp_cost_to_go(model: SystemModel, value_functions, transport_constants) -> GlobalCostToGo:
    """Sum of nodal cut models plus the (state-independent) transport term."""
    W = model.timeline.weeks_count
    weeks = []
    for s in range(W + 1):
        weeks.append(SeparableCuts([vf.cut_arrays(s) for vf in value_functions], float(transport_constants[s])))
    return GlobalCostToGo(weeks, "dadp")


@dataclass(eq=False)
class ChronicleRecord:
    thermal_cost: float
    ens_cost: float
    spill_cost: float
    transport_cost: float
    final_cost: float
    ens_energy: float  # MWh
    trajectory: np.ndarray  # (weeks + 1, nodes)
    node_flow: np.ndarray  # (weeks, nodes, hours)
    arc_flow: np.ndarray  # (weeks, arcs, hours)
    weekly_objective: np.ndarray  # (weeks,)
    weekly_future: np.ndarray  # (weeks,)
    controls: dict = field(default_factory=dict, repr=False)
    label: str = ""

    @property
    def operational_cost(self) -> float:
        return self.thermal_cost + self.ens_cost + self.spill_cost + self.transport_cost + self.final_cost

    @property
    def ens_gwh(self) -> float:
        return self.ens_energy / 1000.0


def simulate_chronicle(
    model: SystemModel,
    cost_to_go: GlobalCostToGo,
    chronicle: Chronicle,
    initial_levels=None,
    segments: int = ARC_SEGMENTS,
    label: str = "",
) -> ChronicleRecord:
    """Roll the weekly one-step-lookahead policy along one chronicle."""
    W, H = model.timeline.weeks_count, model.timeline.hours_per_week
    if len(cost_to_go) != W + 1:
        raise SimulationError(f"cost-to-go covers {len(cost_to_go)} weeks, expected {W + 1} (incl. terminal)")
    N, A = len(model.nodes), len(model.arcs)
    x = model.initial_levels() if initial_levels is None else np.asarray(initial_levels, dtype=float).copy()
    traj = np.zeros((W + 1, N))
    traj[0] = x
    node_flow = np.zeros((W, N, H))
    arc_flow = np.zeros((W, A, H))
    obj = np.zeros(W)
    fut = np.zeros(W)
    ctl = {k: np.zeros((W, N, H)) for k in ("ens", "curtail", "turbine", "pump", "spill")}
    ctl["thermal"] = []
    thermal = ens = spill = transport = 0.0
    nodes = list(range(N))
    solver = WeekSolver()
    for s in range(W):
        wk = chronicle.week(s)
        r = solver.solve(model, nodes, x, wk.net_demand, wk.availability, wk.inflow,
                         cost_to_go.weeks[s + 1], segments=segments)
        thermal += r.thermal_cost
        ens += r.ens_cost
        spill += r.spill_cost
        transport += r.transport_cost
        node_flow[s], arc_flow[s] = r.node_flow, r.arc_flow
        obj[s], fut[s] = r.objective, r.future_cost
        for k in ("ens", "curtail", "turbine", "pump", "spill"):
            ctl[k][s] = getattr(r, k)
        ctl["thermal"].append(r.thermal)
        x = np.array([r.next_levels[n] if model.nodes[n].storage is not None else 0.0 for n in nodes])
        traj[s + 1] = x
    fin = float(sum(final_cost(node, x[n]) for n, node in enumerate(model.nodes)))
    return ChronicleRecord(
        thermal_cost=thermal,
        ens_cost=ens,
        spill_cost=spill,
        transport_cost=transport,
        final_cost=fin,
        ens_energy=float(ctl["ens"].sum()),
        trajectory=traj,
        node_flow=node_flow,
        arc_flow=arc_flow,
        weekly_objective=obj,
        weekly_future=fut,
        controls=ctl,
        label=label,
    )


def kirchhoff_residual(record: ChronicleRecord, incidence) -> float:
    """Largest hourly mismatch between node imports and incidence-weighted arc flows."""
    A = np.asarray(incidence, dtype=float)
    implied = np.einsum("na,wah->wnh", A, record.arc_flow) if A.size else np.zeros_like(record.node_flow)
    if record.node_flow.size == 0:
        return 0.0
    return float(np.max(np.abs(record.node_flow - implied)))


def recompute_costs(model: SystemModel, record: ChronicleRecord, segments: int = ARC_SEGMENTS) -> dict:
    """Cost components rebuilt from the stored controls and flows."""
    ctl = record.controls
    thermal = ens = spill = 0.0
    for s, per_node in enumerate(ctl["thermal"]):
        for n, node in enumerate(model.nodes):
            costs = np.array([c.marginal_cost for c in node.clusters])
            if len(costs):
                thermal += float(costs @ per_node[n].sum(axis=1))
    for n, node in enumerate(model.nodes):
        ens += node.ens_penalty * float(ctl["ens"][:, n].sum())
        spill += node.spill_penalty * float(ctl["spill"][:, n].sum() + ctl["curtail"][:, n].sum())
    transport = 0.0
    for j, arc in enumerate(model.arcs):
        transport += float(secant_cost(record.arc_flow[:, j], arc.flow_min, arc.flow_max, arc.quad_cost,
                                       segments).sum())
    final = float(sum(final_cost(node, record.trajectory[-1, n]) for n, node in enumerate(model.nodes)))
    return {"thermal": thermal, "ens": ens, "spill": spill, "transport": transport, "final": final,
            "operational": thermal + ens + spill + transport + final}


def _simulate_many(model, cost_to_go, chronicles, initial_levels, threads, labels):
    def run(i):
        return simulate_chronicle(model, cost_to_go, chronicles[i], initial_levels, label=labels[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(len(chronicles))))
    return [run(i) for i in range(len(chronicles))]


@dataclass
class UpperBound:
    mean: float
    ci_low: float
    ci_high: float
    records: list = field(default_factory=list, repr=False)

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def mean_ci(values) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    half = Z95 * float(v.std(ddof=1)) / np.sqrt(len(v)) if len(v) > 1 else 0.0
    return mean, mean - half, mean + half


def statistical_upper_bound(
    model: SystemModel,
    cost_to_go: GlobalCostToGo,
    scenarios: ScenarioSet,
    n_samples: int,
    rng: np.random.Generator,
    threads: int = 1,
    initial_levels=None,
) -> UpperBound:
    """Monte Carlo estimate of the policy cost under the weekly product law."""
    if n_samples < 2:
        raise ValueError("need at least two samples for a confidence interval")
    samples = [sample_product_chronicle(rng, scenarios) for _ in range(n_samples)]
    records = _simulate_many(model, cost_to_go, samples, initial_levels, threads,
                             [f"sample{i}" for i in range(n_samples)])
    mean, lo, hi = mean_ci([r.operational_cost for r in records])
    return UpperBound(mean, lo, hi, records)


def product_expectation(
    model: SystemModel,
    cost_to_go: GlobalCostToGo,
    scenarios: ScenarioSet,
    initial_levels=None,
    guard: int = 10_000,
) -> float:
    """Exact expected policy cost over every chronicle of the weekly product law.

    Only practical for tiny sets: the support has ``|C| ** |W|`` elements.
    """
    support = count_product_support(scenarios)
    if support > guard:
        raise ValueError(f"product support of {support} chronicles exceeds the guard of {guard}")
    C, W = scenarios.size, scenarios.weeks
    total = 0.0
    weeks = np.arange(W)
    for picks in itertools.product(range(C), repeat=W):
        picks = np.array(picks)
        chron = Chronicle(
            scenarios.net_demand[picks, weeks],
            scenarios.availability[picks, weeks],
            scenarios.inflow[picks, weeks],
        )
        total += simulate_chronicle(model, cost_to_go, chron, initial_levels).operational_cost
    return total / support


def count_outliers(values) -> int:
    """Points beyond 1.5 interquartile ranges from the quartiles."""
    v = np.asarray(values, dtype=float)
    q1, q3 = np.percentile(v, [25, 75])
    iqr = q3 - q1
    return int(np.sum((v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr)))


INDICATORS = ("operational_cost", "thermal_cost", "ens_cost", "spill_cost", "transport_cost", "final_cost", "ens_gwh")


@dataclass(eq=False)
class SimulationReport:
    records: list
    node_ids: tuple = ()

    def aggregates(self) -> dict:
        out = {"chronicles": len(self.records)}
        for key in INDICATORS:
            out[f"mean_{key}"] = float(np.mean([getattr(r, key) for r in self.records]))
        mean, lo, hi = mean_ci([r.operational_cost for r in self.records])
        out["operational_ci95"] = [lo, hi]
        out["operational_outliers"] = count_outliers([r.operational_cost for r in self.records])
        return out

    def write(self, directory, extra: Optional[dict] = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        report = {"schema_version": SCHEMA_VERSION, **self.aggregates(), **(extra or {})}
        (d / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        with (d / "records.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("chronicle",) + INDICATORS)
            for r in self.records:
                w.writerow([r.label] + [repr(float(getattr(r, k))) for k in INDICATORS])
        with (d / "trajectories.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("node", "week", "level", "chronicle"))
            for r in self.records:
                for n, nid in enumerate(self.node_ids):
                    for s in range(r.trajectory.shape[0]):
                        w.writerow([nid, s, repr(float(r.trajectory[s, n])), r.label])


def evaluate_reference(
    model: SystemModel,
    cost_to_go: GlobalCostToGo,
    evaluation: ScenarioSet,
    threads: int = 1,
    initial_levels=None,
) -> SimulationReport:
    """Simulate every evaluation chronicle (uniform weights)."""
    chronicles = [evaluation.chronicle(c) for c in range(evaluation.size)]
    records = _simulate_many(model, cost_to_go, chronicles, initial_levels, threads,
                             [f"ref{c}" for c in range(evaluation.size)])
    return SimulationReport(records, tuple(model.node_ids))


def linearization_error_bound(model: SystemModel, segments: int = ARC_SEGMENTS) -> float:
    """Worst-case secant overestimate of the transport cost for one hour, summed over arcs."""
    return float(sum(a.quad_cost * ((a.flow_max - a.flow_min) / segments) ** 2 / 4 for a in model.arcs))
