"""Arc price value function: separable box-constrained quadratic, closed form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelError, SystemModel


@dataclass(eq=False)
class TransportSolution:
    flows: np.ndarray  # (arcs, weeks, hours)
    value: float
    weekly_values: np.ndarray  # (weeks,)
    hourly_gradient: np.ndarray  # (nodes, weeks, hours)


def _arc_params(model: SystemModel):
    gamma = np.array([a.quad_cost for a in model.arcs])
    if np.any(gamma <= 0):
        bad = [a.id for a in model.arcs if a.quad_cost <= 0]
        raise ModelError(f"non-positive quad_cost on arcs {bad}")
    fmin = np.array([a.flow_min for a in model.arcs])
    fmax = np.array([a.flow_max for a in model.arcs])
    return gamma, fmin, fmax


def optimal_flow(gamma, flow_min, flow_max, reduced_price):
    """Minimizer of ``gamma*f**2 - r*f`` over ``[flow_min, flow_max]``."""
    return np.clip(reduced_price / (2.0 * gamma), flow_min, flow_max)


def solve_transport(model: SystemModel, hourly_price) -> TransportSolution:
    """Solve ``min_f sum gamma f^2 - <A^T p, f>`` for every arc and hour.

    ``hourly_price`` has shape ``(nodes, weeks, hours)``.
    """
    p = np.asarray(hourly_price, dtype=float)
    N, W, H = p.shape
    if not model.arcs:
        return TransportSolution(np.zeros((0, W, H)), 0.0, np.zeros(W), np.zeros((N, W, H)))
    gamma, fmin, fmax = _arc_params(model)
    A = model.incidence
    r = np.einsum("na,nwh->awh", A, p)
    g = gamma[:, None, None]
    f = optimal_flow(g, fmin[:, None, None], fmax[:, None, None], r)
    contrib = g * f**2 - r * f
    weekly = contrib.sum(axis=(0, 2))
    grad = -np.einsum("na,awh->nwh", A, f)
    return TransportSolution(f, float(weekly.sum()), weekly, grad)


def transport_gradient(solution: TransportSolution, block_hours: int = 1) -> np.ndarray:
    """Gradient in block coordinates, shape ``(nodes, weeks, blocks)``."""
    N, W, H = solution.hourly_gradient.shape
    return solution.hourly_gradient.reshape(N, W, H // block_hours, block_hours).sum(axis=3)


def transport_cost_to_go(model: SystemModel, hourly_price, week: int) -> float:
    """Transport value restricted to weeks ``>= week`` (0 at the terminal week)."""
    return float(solve_transport(model, hourly_price).weekly_values[week:].sum())


def transport_constants(solution: TransportSolution) -> np.ndarray:
    """Cost-to-go constants for weeks ``0..W`` inclusive."""
    w = solution.weekly_values
    return np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
