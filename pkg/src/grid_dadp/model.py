"""Static description of a multinode storage/thermal system.

A system is a directed graph whose nodes carry at most one aggregated storage,
a list of thermal clusters and penalty rates, and whose arcs carry flow bounds
and a quadratic transport coefficient.  Time is split into weeks of
``hours_per_week`` hours; decisions are hourly, state (storage levels) is
observed weekly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DEFAULT_ENS_PENALTY = 3000.0
DEFAULT_FINAL_PENALTY_RATE = 150.0
DEFAULT_QUAD_COST = 0.01


class ModelError(ValueError):
    """Raised for structurally invalid system descriptions."""


class UnsupportedOperation(ModelError):
    pass


@dataclass(frozen=True)
class Timeline:
    weeks_count: int = 52
    hours_per_week: int = 168

    def __post_init__(self):
        if self.weeks_count < 1 or self.hours_per_week < 1:
            raise ModelError("weeks_count and hours_per_week must be >= 1")

    @property
    def instants(self) -> int:
        # terminal instant after the last hour of the last week
        return self.weeks_count * self.hours_per_week + 1


@dataclass(frozen=True)
class ThermalCluster:
    capacity: float
    marginal_cost: float


@dataclass(frozen=True)
class Storage:
    capacity: float
    initial_level: float
    max_turbine: float
    max_pump: float = 0.0
    pump_efficiency: float = 1.0


@dataclass(frozen=True)
class Node:
    id: str
    storage: Optional[Storage] = None
    clusters: tuple[ThermalCluster, ...] = ()
    ens_penalty: float = DEFAULT_ENS_PENALTY
    spill_penalty: float = 0.0
    final_penalty_rate: float = DEFAULT_FINAL_PENALTY_RATE
    final_target: Optional[float] = None

    @property
    def has_storage(self) -> bool:
        return self.storage is not None

    @property
    def target(self) -> float:
        """Final storage target; the initial level unless set explicitly."""
        if self.storage is None:
            return 0.0
        if self.final_target is None:
            return self.storage.initial_level
        return self.final_target

    @property
    def initial_level(self) -> float:
        return 0.0 if self.storage is None else self.storage.initial_level


@dataclass(frozen=True)
class Arc:
    id: str
    from_node: str
    to_node: str
    flow_min: float
    flow_max: float
    quad_cost: float = DEFAULT_QUAD_COST


def build_incidence(nodes: Sequence[Node], arcs: Sequence[Arc]) -> np.ndarray:
    """Node-arc incidence: +1 where the arc leaves the node, -1 where it enters."""
    index = {n.id: i for i, n in enumerate(nodes)}
    A = np.zeros((len(nodes), len(arcs)))
    for j, arc in enumerate(arcs):
        for end in (arc.from_node, arc.to_node):
            if end not in index:
                raise ModelError(f"arc {arc.id!r} references unknown node {end!r}")
        if arc.from_node == arc.to_node:
            raise ModelError(f"arc {arc.id!r} is a self-loop on {arc.from_node!r}")
        A[index[arc.from_node], j] = 1.0
        A[index[arc.to_node], j] = -1.0
    return A


@dataclass(frozen=True, eq=False)
class SystemModel:
    timeline: Timeline
    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...] = ()
    incidence: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "arcs", tuple(self.arcs))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate node ids")
        A = build_incidence(self.nodes, self.arcs)
        A.setflags(write=False)
        object.__setattr__(self, "incidence", A)

    def __eq__(self, other):
        if not isinstance(other, SystemModel):
            return NotImplemented
        return (self.timeline, self.nodes, self.arcs) == (other.timeline, other.nodes, other.arcs)

    __hash__ = None

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node_index(self, node_id: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise ModelError(f"unknown node {node_id!r}")

    def initial_levels(self) -> np.ndarray:
        return np.array([n.initial_level for n in self.nodes])

    def node_flow_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node bounds on net import implied by the incident arc bounds.

        Any flow pattern admissible on the arcs yields node flows inside this
        box, so using it at the nodal level keeps the relaxation valid.
        """
        A = self.incidence
        if not self.arcs:
            z = np.zeros(len(self.nodes))
            return z, z.copy()
        fmin = np.array([a.flow_min for a in self.arcs])
        fmax = np.array([a.flow_max for a in self.arcs])
        lo = np.minimum(A * fmin, A * fmax).sum(axis=1)
        hi = np.maximum(A * fmin, A * fmax).sum(axis=1)
        return lo, hi


def validate_system(model: SystemModel) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    for node in model.nodes:
        where = f"node {node.id}"
        for k, c in enumerate(node.clusters):
            if c.capacity < 0:
                out.append(f"{where}: cluster {k} capacity {c.capacity} < 0")
            if c.marginal_cost < 0:
                out.append(f"{where}: cluster {k} marginal_cost {c.marginal_cost} < 0")
        max_cost = max((c.marginal_cost for c in node.clusters), default=0.0)
        if not node.ens_penalty > max_cost:
            out.append(
                f"{where}: ens_penalty {node.ens_penalty} must exceed the highest "
                f"cluster marginal_cost {max_cost} (merit order)"
            )
        if node.final_penalty_rate < 0:
            out.append(f"{where}: final_penalty_rate {node.final_penalty_rate} < 0")
        if node.spill_penalty < 0:
            out.append(f"{where}: spill_penalty {node.spill_penalty} < 0")
        s = node.storage
        if s is None:
            continue
        if not 0 <= s.initial_level <= s.capacity:
            out.append(f"{where}: storage initial_level {s.initial_level} outside [0, {s.capacity}]")
        if s.max_turbine < 0:
            out.append(f"{where}: storage max_turbine {s.max_turbine} < 0")
        if s.max_pump < 0:
            out.append(f"{where}: storage max_pump {s.max_pump} < 0")
        if not 0 < s.pump_efficiency <= 1:
            out.append(f"{where}: storage pump_efficiency {s.pump_efficiency} outside (0, 1]")
        if node.final_target is not None and not 0 <= node.final_target <= s.capacity:
            out.append(f"{where}: final_target {node.final_target} outside [0, {s.capacity}]")
    for arc in model.arcs:
        where = f"arc {arc.id}"
        if not arc.flow_min <= 0 <= arc.flow_max:
            out.append(f"{where}: bounds [{arc.flow_min}, {arc.flow_max}] must bracket 0")
        if not arc.quad_cost > 0:
            out.append(f"{where}: quad_cost {arc.quad_cost} must be > 0")
    return out


def hourly_dynamics(node: Node, level, inflow, turbine, pump, spill):
    """Storage level after one hour; bounds are the caller's constraints."""
    if node.storage is None:
        raise UnsupportedOperation(f"node {node.id!r} has no storage")
    return level + inflow - turbine - spill + node.storage.pump_efficiency * pump


def weekly_dynamics(node: Node, level0, week_inflows, week_controls) -> float:
    """Compose :func:`hourly_dynamics` over a week.

    ``week_controls`` maps ``turbine``, ``pump`` and ``spill`` to hourly arrays
    (missing keys are zero).
    """
    inflows = np.asarray(week_inflows, dtype=float)
    H = inflows.shape[0]
    controls = {}
    for key in ("turbine", "pump", "spill"):
        arr = np.asarray(week_controls.get(key, np.zeros(H)), dtype=float)
        if arr.shape != (H,):
            raise ValueError(f"{key} has shape {arr.shape}, expected ({H},)")
        controls[key] = arr
    level = level0
    for h in range(H):
        level = hourly_dynamics(
            node, level, inflows[h], controls["turbine"][h], controls["pump"][h], controls["spill"][h]
        )
    return level


# -- JSON ---------------------------------------------------------------------


def system_to_dict(model: SystemModel) -> dict:
    nodes = []
    for n in model.nodes:
        d = {
            "id": n.id,
            "clusters": [{"capacity": c.capacity, "marginal_cost": c.marginal_cost} for c in n.clusters],
            "ens_penalty": n.ens_penalty,
            "spill_penalty": n.spill_penalty,
            "final_penalty_rate": n.final_penalty_rate,
        }
        if n.final_target is not None:
            d["final_target"] = n.final_target
        if n.storage is not None:
            s = n.storage
            d["storage"] = {
                "capacity": s.capacity,
                "initial_level": s.initial_level,
                "max_turbine": s.max_turbine,
                "max_pump": s.max_pump,
                "pump_efficiency": s.pump_efficiency,
            }
        nodes.append(d)
    arcs = [
        {
            "id": a.id,
            "from": a.from_node,
            "to": a.to_node,
            "flow_min": a.flow_min,
            "flow_max": a.flow_max,
            "quad_cost": a.quad_cost,
        }
        for a in model.arcs
    ]
    return {
        "timeline": {
            "weeks_count": model.timeline.weeks_count,
            "hours_per_week": model.timeline.hours_per_week,
        },
        "nodes": nodes,
        "arcs": arcs,
    }


def system_from_dict(data: dict) -> SystemModel:
    try:
        timeline = Timeline(**data.get("timeline", {}))
        nodes = []
        for d in data["nodes"]:
            storage = Storage(**d["storage"]) if d.get("storage") else None
            nodes.append(
                Node(
                    id=str(d["id"]),
                    storage=storage,
                    clusters=tuple(ThermalCluster(**c) for c in d.get("clusters", [])),
                    ens_penalty=d.get("ens_penalty", DEFAULT_ENS_PENALTY),
                    spill_penalty=d.get("spill_penalty", 0.0),
                    final_penalty_rate=d.get("final_penalty_rate", DEFAULT_FINAL_PENALTY_RATE),
                    final_target=d.get("final_target"),
                )
            )
        arcs = [
            Arc(
                id=str(a["id"]),
                from_node=str(a["from"]),
                to_node=str(a["to"]),
                flow_min=a["flow_min"],
                flow_max=a["flow_max"],
                quad_cost=a.get("quad_cost", DEFAULT_QUAD_COST),
            )
            for a in data.get("arcs", [])
        ]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed system description: {exc}") from exc
    return SystemModel(timeline=timeline, nodes=tuple(nodes), arcs=tuple(arcs))


def load_system(path) -> SystemModel:
    model = system_from_dict(json.loads(Path(path).read_text()))
    problems = validate_system(model)
    if problems:
        raise ModelError("invalid system:\n  " + "\n  ".join(problems))
    return model


def save_system(model: SystemModel, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(model), indent=2))
