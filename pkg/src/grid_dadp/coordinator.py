"""Price decomposition: block aggregation, dual oracle and price improvement."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import SystemModel
from .nodal_sdp import DEFAULT_GRID_POINTS, ValueFunction, backward_recursion, gradient_recursion, storage_grid
from .scenarios import ScenarioSet
from .transport import TransportSolution, solve_transport, transport_gradient

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class SchemeError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockScheme:
    block_hours: int
    hours_per_week: int

    def __post_init__(self):
        if self.block_hours < 1 or self.hours_per_week % self.block_hours:
            raise SchemeError(
                f"block length {self.block_hours} h does not divide the {self.hours_per_week}-hour week"
            )

    @property
    def blocks_per_week(self) -> int:
        return self.hours_per_week // self.block_hours


def price_dimension(nodes: int, weeks: int, scheme: BlockScheme) -> int:
    return nodes * weeks * scheme.blocks_per_week


def expand_price(values, block_hours: int) -> np.ndarray:
    """Block prices ``(nodes, weeks, blocks)`` to hourly ``(nodes, weeks, hours)``."""
    return np.repeat(np.asarray(values, dtype=float), block_hours, axis=-1)


def aggregate_gradient(hourly, block_hours: int) -> np.ndarray:
    """Sum hourly entries within each block; the adjoint of :func:`expand_price`."""
    g = np.asarray(hourly, dtype=float)
    if g.shape[-1] % block_hours:
        raise SchemeError(f"{g.shape[-1]} hours cannot be split into {block_hours}-hour blocks")
    return g.reshape(*g.shape[:-1], g.shape[-1] // block_hours, block_hours).sum(axis=-1)


@dataclass(eq=False)
class PriceProcess:
    values: np.ndarray  # (nodes, weeks, blocks), EUR/MWh
    scheme: BlockScheme

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != self.scheme.blocks_per_week:
            raise SchemeError(f"price shape {self.values.shape} inconsistent with {self.scheme}")
        if not np.all(np.isfinite(self.values)):
            raise SchemeError("non-finite price")

    @classmethod
    def zeros(cls, model: SystemModel, scheme: BlockScheme) -> "PriceProcess":
        return cls(np.zeros((len(model.nodes), model.timeline.weeks_count, scheme.blocks_per_week)), scheme)

    def hourly(self) -> np.ndarray:
        return expand_price(self.values, self.scheme.block_hours)

    def __eq__(self, other):
        if not isinstance(other, PriceProcess):
            return NotImplemented
        return self.scheme == other.scheme and np.array_equal(self.values, other.values)

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "block_hours": self.scheme.block_hours,
            "hours_per_week": self.scheme.hours_per_week,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriceProcess":
        return cls(np.array(d["values"], dtype=float), BlockScheme(d["block_hours"], d["hours_per_week"]))


@dataclass(eq=False)
class OracleResult:
    value: float
    gradient: np.ndarray  # same shape as the price values
    node_values: np.ndarray
    transport_value: float
    value_functions: list = field(default_factory=list, repr=False)
    transport: Optional[TransportSolution] = field(default=None, repr=False)
    exact: bool = True  # a deterministic bound, not a Monte Carlo estimate


def default_grids(model: SystemModel, points: int = DEFAULT_GRID_POINTS) -> list[np.ndarray]:
    return [storage_grid(n, points) for n in model.nodes]


def _node_task(model, n, hourly, grid, training, block_hours):
    vf = backward_recursion(model, n, hourly[n], grid, training, block_hours=block_hours)
    gradient_recursion(vf)
    return vf


def oracle(
    model: SystemModel,
    training: ScenarioSet,
    price: PriceProcess,
    grids: Optional[Sequence[np.ndarray]] = None,
    threads: int = 1,
    initial_levels=None,
) -> OracleResult:
    """Dual value and supergradient at ``price``.

    Each node is solved independently by backward recursion; the initial levels
    must lie on the node grids (the default grids include them).
    """
    W = model.timeline.weeks_count
    scheme = price.scheme
    hourly = price.hourly()
    grids = grids if grids is not None else default_grids(model)
    x0 = model.initial_levels() if initial_levels is None else np.asarray(initial_levels, dtype=float)
    N = len(model.nodes)

    def run(n):
        try:
            return _node_task(model, n, hourly, grids[n], training, scheme.block_hours)
        except Exception as exc:  # noqa: BLE001 - re-raised with the node id
            raise OracleError(f"node {model.nodes[n].id}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vfs = list(pool.map(run, range(N)))
    else:
        vfs = [run(n) for n in range(N)]

    node_values = np.zeros(N)
    grad = np.zeros_like(price.values)
    for n, vf in enumerate(vfs):
        node_values[n] = vf.interpolate(0, x0[n])
        grad[n] = vf.gradient_at(0, x0[n]).reshape(W, scheme.blocks_per_week)
    tr = solve_transport(model, hourly)
    grad += transport_gradient(tr, scheme.block_hours)
    value = float(node_values.sum() + tr.value)
    if not np.isfinite(value):
        raise OracleError("non-finite dual value")
    return OracleResult(value, grad, node_values, tr.value, vfs, tr)


def lower_bound(result: OracleResult) -> float:
    return result.value


@dataclass
class AscentConfig:
    max_iters: int = 50
    time_limit: Optional[float] = None
    tol: float = 100.0
    relative_tol: Optional[float] = None  # if set, the threshold is relative_tol * |best value|
    memory: int = 10
    initial_step: float = 10.0  # largest price move of the first trial step, EUR/MWh
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    threads: int = 1
    checkpoint: Optional[str] = None


@dataclass
class TraceEntry:
    iteration: int
    value: float
    best_value: float
    grad_norm: float
    step: float
    backtracks: int
    oracle_calls: int
    wall_time: float


@dataclass
class AscentResult:
    price: PriceProcess
    oracle: OracleResult
    trace: list
    reason: str

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def best_value(self) -> float:
        return self.oracle.value


def _two_loop(grad, s_list, y_list):
    """L-BFGS product ``H @ grad`` for minimization."""
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_list[-1], y_list[-1]
    q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def improve_prices(
    model: SystemModel,
    training: ScenarioSet,
    scheme: BlockScheme,
    config: Optional[AscentConfig] = None,
    start: Optional[PriceProcess] = None,
    grids=None,
) -> AscentResult:
    """Limited-memory quasi-Newton ascent on the dual value.

    Stops after two consecutive iterations whose best-value improvement is
    below ``config.tol`` (or ``relative_tol * |best|`` when that is set), at the iteration or time limit, or immediately on a
    zero gradient.  Returns the best price ever evaluated.
    """
    cfg = config or AscentConfig()
    grids = grids if grids is not None else default_grids(model)
    t0 = time.perf_counter()
    shape = (len(model.nodes), model.timeline.weeks_count, scheme.blocks_per_week)
    x = (start.values if start is not None else np.zeros(shape)).ravel().copy()

    calls = 0

    def evaluate(v):
        nonlocal calls
        calls += 1
        res = oracle(model, training, PriceProcess(v.reshape(shape), scheme), grids, cfg.threads)
        if not np.isfinite(res.value):
            raise OracleError("non-finite dual value")
        return res

    cur = evaluate(x)
    best, best_x = cur, x.copy()
    s_list: list = []
    y_list: list = []
    trace: list = []
    small = 0
    reason = "iteration limit"
    for it in range(1, cfg.max_iters + 1):
        g = cur.gradient.ravel()
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            trace.append(TraceEntry(it, cur.value, best.value, 0.0, 0.0, 0, calls, time.perf_counter() - t0))
            reason = "zero gradient"
            break
        # ascent on f is descent on -f
        G = -g
        if s_list:
            d = -_two_loop(G, s_list, y_list)
            if G @ d >= 0:
                s_list.clear(), y_list.clear()
        if not s_list:
            d = -G * (cfg.initial_step / np.max(np.abs(G)))
        slope = G @ d
        t, backtracks, accepted = 1.0, 0, None
        while backtracks <= cfg.max_backtracks:
            cand = evaluate(x + t * d)
            if -cand.value <= -cur.value + cfg.armijo * t * slope:
                accepted = cand
                break
            t *= cfg.shrink
            backtracks += 1
        prev_best = best.value
        if accepted is None:
            s_list.clear(), y_list.clear()
            step = 0.0
        else:
            s_vec = t * d
            y_vec = -accepted.gradient.ravel() - G
            if s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                s_list.append(s_vec)
                y_list.append(y_vec)
                if len(s_list) > cfg.memory:
                    s_list.pop(0), y_list.pop(0)
            x = x + s_vec
            cur = accepted
            step = float(np.linalg.norm(s_vec))
            if cur.value > best.value:
                best, best_x = cur, x.copy()
        trace.append(
            TraceEntry(it, cur.value, best.value, gnorm, step, backtracks, calls, time.perf_counter() - t0)
        )
        if cfg.checkpoint:
            _write_checkpoint(cfg.checkpoint, PriceProcess(best_x.reshape(shape), scheme), trace)
        threshold = cfg.tol if cfg.relative_tol is None else cfg.relative_tol * abs(best.value)
        small = small + 1 if best.value - prev_best < threshold else 0
        if small >= 2:
            reason = "tolerance"
            break
        if cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit:
            reason = "time limit"
            break
    log.info("price improvement stopped (%s) after %d iterations, bound %.6g", reason, len(trace), best.value)
    return AscentResult(PriceProcess(best_x.reshape(shape), scheme), best, trace, reason)


def trace_to_list(trace) -> list[dict]:
    return [asdict(t) for t in trace]


def _write_checkpoint(path, price: PriceProcess, trace) -> None:
    data = {"schema_version": SCHEMA_VERSION, "price": price.to_dict(), "trace": trace_to_list(trace)}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(data))
    tmp.replace(path)
