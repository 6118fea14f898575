"""Central policies and the per-task federation round.

A federation round for task ``l`` given availability ``x``:

1. every available edge uploads ``delta_n = w_n(round start) - w_n(now)``;
2. the server sets
   ``theta' = theta - sum_n c_n^r * x_n * delta_n`` with
   ``c_n^r = N_l * c_n / x_l`` and ``c_n = K_n / sum K``;
3. ``theta'`` is broadcast to *every* edge of the task, available or not, and
   becomes each edge's new round-start reference.

Unavailable edges never upload, and whatever they trained since their last
reference is overwritten by the broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dqn import PolicyParams
from .errors import ContractViolation, DegenerateRoundError


@dataclass
class CentralPolicy:
    task_id: str
    theta: PolicyParams
    round_index: int = 1


@dataclass(frozen=True)
class LocalDelta:
    edge_id: int
    delta: np.ndarray
    k_count: int = 0


def central_weight(k_counts: Sequence[float]) -> np.ndarray:
    """Experience-proportional weights ``K_n / sum K``."""
    k = np.asarray(k_counts, dtype=np.float64)
    if np.any(k < 0):
        raise ValueError("experience counts must be non-negative")
    total = k.sum()
    if total <= 0:
        raise DegenerateRoundError("all experience counts are zero")
    return k / total


def local_gradient(w_round_start: PolicyParams, w_current: PolicyParams,
                   edge_id: int = 0, k_count: int = 0) -> LocalDelta:
    if not w_round_start.same_shape(w_current):
        raise ContractViolation("round-start and current parameters differ in shape")
    return LocalDelta(edge_id, w_round_start.flat - w_current.flat, k_count)


def aggregate(central: CentralPolicy, deltas: Sequence[LocalDelta],
              weights: Mapping[int, float], availability: Mapping[int, int],
              n_edges: int) -> CentralPolicy:
    """Availability-weighted aggregation of local deltas into the next central policy.

    ``weights`` maps edge id to ``c_n``; ``availability`` maps edge id to
    ``x_n``; ``n_edges`` is ``N_l``. Deltas must be supplied for exactly the
    available edges.
    """
    available = sorted(e for e, x in availability.items() if x)
    x_l = len(available)
    if x_l < 1:
        raise ContractViolation("aggregation needs at least one available edge")
    by_edge = {d.edge_id: d for d in deltas}
    if sorted(by_edge) != available:
        raise ContractViolation("deltas must be given for exactly the available edges")
    step = np.zeros_like(central.theta.flat)
    for edge_id in available:
        d = by_edge[edge_id].delta
        if d.shape != step.shape:
            raise ContractViolation("delta shape does not match the central policy")
        step += (n_edges * weights[edge_id] / x_l) * d
    theta = PolicyParams(central.theta.sizes, central.theta.flat - step)
    return CentralPolicy(central.task_id, theta, central.round_index + 1)


def fed_ds_round(task_id: str, availability: Mapping[int, int], edges: Sequence,
                 central: CentralPolicy) -> CentralPolicy:
    """Run one federation round for a selected task.

    ``edges`` are the task's edges; each must expose ``edge_id``,
    ``learner.params``, ``learner.buffer.round_count`` and a mutable
    ``round_start`` (the parameters at its last reference point). When no
    edge of the task has collected experience yet the weights fall back to
    uniform, since every delta is then zero as well.
    """
    edges = sorted(edges, key=lambda e: e.edge_id)
    counts = [e.learner.buffer.round_count for e in edges]
    try:
        c = central_weight(counts)
    except DegenerateRoundError:
        c = np.full(len(edges), 1.0 / len(edges))
    weights = {e.edge_id: float(w) for e, w in zip(edges, c)}
    avail = {e.edge_id: int(availability.get(e.edge_id, 0)) for e in edges}
    deltas = [local_gradient(e.round_start, e.learner.params, e.edge_id, k)
              for e, k in zip(edges, counts) if avail[e.edge_id]]
    new_central = aggregate(central, deltas, weights, avail, len(edges))
    for e in edges:
        e.learner.set_params(new_central.theta)
        e.round_start = new_central.theta.copy()
    return new_central
