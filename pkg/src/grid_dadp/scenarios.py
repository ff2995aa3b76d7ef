"""Uncertainty chronicles and the two probability structures built on them.

A chronicle is a year of weekly blocks (net demand, availability, inflows per
node and hour).  The empirical probability puts weight ``1/|C|`` on each whole
chronicle; the product probability treats weeks as independent and draws each
week's block from any chronicle, giving ``|C|**|W|`` atoms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import SystemModel

FIELDS = ("net_demand", "availability", "inflow")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeeklyChronicle:
    """One week of data; arrays are shaped ``(nodes, hours)``."""

    net_demand: np.ndarray
    availability: np.ndarray
    inflow: np.ndarray

    def node(self, i: int) -> "WeeklyChronicle":
        return WeeklyChronicle(self.net_demand[i : i + 1], self.availability[i : i + 1], self.inflow[i : i + 1])


@dataclass(frozen=True, eq=False)
class Chronicle:
    """A year of data; arrays are shaped ``(weeks, nodes, hours)``."""

    net_demand: np.ndarray
    availability: np.ndarray
    inflow: np.ndarray

    @property
    def weeks(self) -> int:
        return self.net_demand.shape[0]

    def week(self, s: int) -> WeeklyChronicle:
        return WeeklyChronicle(self.net_demand[s], self.availability[s], self.inflow[s])


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Chronicles stacked as arrays shaped ``(chronicles, weeks, nodes, hours)``."""

    node_ids: tuple[str, ...]
    net_demand: np.ndarray
    availability: np.ndarray
    inflow: np.ndarray
    role: str = "training"

    def __post_init__(self):
        shape = self.net_demand.shape
        if len(shape) != 4:
            raise ScenarioError(f"expected (chronicles, weeks, nodes, hours) arrays, got {shape}")
        if shape[0] == 0:
            raise ScenarioError("scenario set is empty")
        for name in FIELDS[1:]:
            if getattr(self, name).shape != shape:
                raise ScenarioError(f"{name} shape {getattr(self, name).shape} != {shape}")
        if shape[2] != len(self.node_ids):
            raise ScenarioError("node axis does not match node ids")
        bad = np.argwhere((self.availability < 0) | (self.availability > 1))
        if bad.size:
            c, w, n, h = bad[0]
            raise ScenarioError(
                f"availability {self.availability[c, w, n, h]} outside [0, 1] "
                f"(chronicle {c}, node {self.node_ids[n]}, week {w}, hour {h})"
            )
        if np.any(self.inflow < 0):
            raise ScenarioError("negative inflow")
        for name in FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ScenarioError(f"non-finite {name}")

    def __eq__(self, other):
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.role == other.role
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in FIELDS)
        )

    __hash__ = None

    @property
    def size(self) -> int:
        return self.net_demand.shape[0]

    @property
    def weeks(self) -> int:
        return self.net_demand.shape[1]

    @property
    def hours(self) -> int:
        return self.net_demand.shape[3]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def chronicle(self, c: int) -> Chronicle:
        return Chronicle(self.net_demand[c], self.availability[c], self.inflow[c])

    def weekly(self, c: int, s: int) -> WeeklyChronicle:
        return WeeklyChronicle(self.net_demand[c, s], self.availability[c, s], self.inflow[c, s])

    def check_against(self, model: SystemModel) -> None:
        if tuple(model.node_ids) != self.node_ids:
            raise ScenarioError(f"scenario nodes {self.node_ids} differ from system nodes {tuple(model.node_ids)}")
        tl = model.timeline
        if (self.weeks, self.hours) != (tl.weeks_count, tl.hours_per_week):
            raise ScenarioError(
                f"scenario horizon {self.weeks}x{self.hours} differs from timeline "
                f"{tl.weeks_count}x{tl.hours_per_week}"
            )


def from_chronicles(node_ids: Sequence[str], chronicles: Sequence[Chronicle], role="training") -> ScenarioSet:
    return ScenarioSet(
        tuple(node_ids),
        np.stack([c.net_demand for c in chronicles]).astype(float),
        np.stack([c.availability for c in chronicles]).astype(float),
        np.stack([c.inflow for c in chronicles]).astype(float),
        role=role,
    )


def weekly_expectation(values) -> float:
    """Expectation under the uniform weekly law (one value per chronicle)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ScenarioError("expectation of an empty sample")
    return float(arr.mean(axis=0)) if arr.ndim == 1 else arr.mean(axis=0)


def sample_product_chronicle(rng: np.random.Generator, scenarios: ScenarioSet) -> Chronicle:
    """Concatenate independently drawn weekly blocks into one year."""
    picks = rng.integers(0, scenarios.size, size=scenarios.weeks)
    weeks = np.arange(scenarios.weeks)
    return Chronicle(
        scenarios.net_demand[picks, weeks],
        scenarios.availability[picks, weeks],
        scenarios.inflow[picks, weeks],
    )


def count_product_support(scenarios_or_sizes) -> int:
    """Number of atoms of the weekly-independent product law, ``|C|**|W|``."""
    if isinstance(scenarios_or_sizes, ScenarioSet):
        c, w = scenarios_or_sizes.size, scenarios_or_sizes.weeks
    else:
        c, w = scenarios_or_sizes
    return int(c) ** int(w)


# -- CSV ----------------------------------------------------------------------

CSV_COLUMNS = ("chronicle", "node", "week", "hour", "net_demand", "availability", "inflow")


def load_chronicles(path, model: SystemModel, role: str = "training") -> ScenarioSet:
    """Read the long-format CSV into a validated :class:`ScenarioSet`."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"chronicle file not found: {path}")
    W, H = model.timeline.weeks_count, model.timeline.hours_per_week
    node_pos = {nid: i for i, nid in enumerate(model.node_ids)}
    rows: dict[str, list] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ScenarioError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            rows.setdefault(r["chronicle"], []).append(r)
    if not rows:
        raise ScenarioError(f"{path}: no chronicles")
    names = sorted(rows, key=lambda s: (len(s), s))
    data = {f: np.full((len(names), W, len(node_pos), H), np.nan) for f in FIELDS}
    for c, name in enumerate(names):
        for r in rows[name]:
            if r["node"] not in node_pos:
                raise ScenarioError(f"{path}: unknown node {r['node']!r} in chronicle {name}")
            w, h = int(r["week"]), int(r["hour"])
            if not (0 <= w < W and 0 <= h < H):
                raise ScenarioError(f"{path}: week/hour ({w}, {h}) outside the {W}x{H} horizon")
            n = node_pos[r["node"]]
            for f in FIELDS:
                data[f][c, w, n, h] = float(r[f])
    for f in FIELDS:
        holes = np.argwhere(np.isnan(data[f]))
        if holes.size:
            c, w, n, h = holes[0]
            raise ScenarioError(
                f"{path}: missing {f} for chronicle {names[c]}, node {model.node_ids[n]}, week {w}, hour {h}"
            )
    return ScenarioSet(tuple(model.node_ids), data["net_demand"], data["availability"], data["inflow"], role)


def save_chronicles(scenarios: ScenarioSet, path) -> None:
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_COLUMNS)
        C, W, N, H = scenarios.net_demand.shape
        for c in range(C):
            for n in range(N):
                for w in range(W):
                    for h in range(H):
                        out.writerow(
                            [
                                c,
                                scenarios.node_ids[n],
                                w,
                                h,
                                repr(float(scenarios.net_demand[c, w, n, h])),
                                repr(float(scenarios.availability[c, w, n, h])),
                                repr(float(scenarios.inflow[c, w, n, h])),
                            ]
                        )
