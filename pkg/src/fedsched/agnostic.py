"""Edge-agnostic state and action encoding.

Each state feature's range is cut into intervals. A device's *condition* is
the tuple of interval indices of its features, and the agnostic state is a
binary occupancy tensor over all conditions: 1 where at least one device sits.
The tensor does not depend on how many devices an edge has or how they are
ordered, so every edge of a task shares one Q-network shape.

Network layout: the occupancy tensor is flattened row-major over
``(h_1, ..., h_K)``. Output index ``cell * n_combos + combo`` addresses the
agnostic action ``(condition=cell, decisions=combo)``, where decision combos
are also enumerated row-major over the decision grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import EdgeAction, task_model
from .errors import ConfigurationError, ContractViolation, StaleEncodingError

INF = math.inf


@dataclass(frozen=True)
class PartitionSpec:
    """Interval edges per feature: ``edges[k] = (lo, cut_1, ..., cut_{H-1}, hi)``.

    Intervals are half-open ``[lo, hi)`` except the last, which is closed.
    """

    edges: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.edges:
            raise ConfigurationError("partition needs at least one feature")
        for e in self.edges:
            if len(e) < 2:
                raise ConfigurationError("each feature needs at least one interval")
            if any(b <= a for a, b in zip(e, e[1:])):
                raise ConfigurationError(f"interval edges must increase strictly: {e}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    @classmethod
    def from_lists(cls, edges: Sequence[Sequence[float]]) -> "PartitionSpec":
        return cls(tuple(tuple(float(x) for x in e) for e in edges))

    def to_lists(self) -> list[list[float]]:
        return [list(e) for e in self.edges]


DEFAULT_PARTITIONS = {
    # battery (mJ), active flag, charging rate (mW)
    "A": PartitionSpec(((0.0, 10.0, 40.0, 70.0, INF), (0.0, 0.5, 1.0), (0.0, 3.0, INF))),
    # remaining buffer (samples), transmission capacity (samples)
    "B": PartitionSpec(((0.0, 30.0, 60.0, INF), (0.0, 40.0, 60.0, INF))),
    # channel gain (cuts at -98 dB and -88 dB), DoD (Mbps * slots)
    "C": PartitionSpec(((0.0, 10 ** -9.8, 10 ** -8.8, INF), (0.0, 0.5, 2.0, INF))),
}


def default_partition(task_id: str) -> PartitionSpec:
    try:
        return DEFAULT_PARTITIONS[task_id]
    except KeyError:
        raise ConfigurationError(f"unknown task {task_id!r}") from None


def partition_index(value: float, boundaries: Sequence[float]) -> int:
    """Index of the interval of ``boundaries`` that contains ``value``."""
    lo, hi = boundaries[0], boundaries[-1]
    if not lo <= value <= hi or math.isnan(value):
        raise ValueError(f"{value} outside partition range [{lo}, {hi}]")
    if value == hi:
        return len(boundaries) - 2
    return int(np.searchsorted(np.asarray(boundaries[1:-1]), value, side="right"))


def condition_indices(features: np.ndarray, spec: PartitionSpec) -> np.ndarray:
    """``(M, K)`` feature matrix -> ``(M, K)`` interval indices."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != len(spec.edges):
        raise ContractViolation(
            f"features of shape {features.shape} do not match {len(spec.edges)} partitions")
    out = np.empty(features.shape, dtype=np.int64)
    for k, e in enumerate(spec.edges):
        col = features[:, k]
        # NaN fails both comparisons, so it is rejected here as well.
        if not (col.min() >= e[0] and col.max() <= e[-1]):
            raise ValueError(f"feature {k} outside partition range [{e[0]}, {e[-1]}]")
        idx = np.searchsorted(e[1:-1], col, side="right")
        out[:, k] = np.minimum(idx, len(e) - 2)
    return out


def cell_ids(features: np.ndarray, spec: PartitionSpec) -> np.ndarray:
    """Row-major flat condition id of every device."""
    idx = condition_indices(features, spec)
    return np.ravel_multi_index(idx.T, spec.shape)


def occupancy_from_cells(cells: np.ndarray, cell_count: int) -> np.ndarray:
    occ = np.zeros(cell_count)
    occ[cells] = 1.0
    return occ


@dataclass(frozen=True)
class AgnosticAction:
    condition: tuple[int, ...]
    decisions: tuple[float, ...] = ()


def _features(edge_state) -> np.ndarray:
    if isinstance(edge_state, np.ndarray):
        return edge_state
    return task_model(edge_state.config.task_id).features(edge_state)


def encode_state(edge_state, spec: PartitionSpec) -> np.ndarray:
    """Binary occupancy tensor of shape ``spec.shape``.

    ``edge_state`` is either a task state object or its ``(M, K)`` feature
    matrix.
    """
    cells = cell_ids(_features(edge_state), spec)
    return occupancy_from_cells(cells, spec.cell_count).reshape(spec.shape)


def feasible_actions(occupancy: np.ndarray, decision_grids=()) -> set[AgnosticAction]:
    occupied = np.argwhere(np.asarray(occupancy) > 0)
    if len(occupied) == 0:
        raise ContractViolation("occupancy is all zero; an edge must have a device")
    combos = list(itertools.product(*decision_grids))
    return {AgnosticAction(tuple(int(i) for i in h), tuple(g))
            for h in occupied for g in combos}


def translate_action(action: AgnosticAction, edge_state, spec: PartitionSpec,
                     rng: np.random.Generator) -> EdgeAction:
    """Pick a device in the requested condition, uniformly among matches."""
    idx = condition_indices(_features(edge_state), spec)
    matches = np.flatnonzero(np.all(idx == np.asarray(action.condition), axis=1))
    if len(matches) == 0:
        raise StaleEncodingError(f"no device in condition {action.condition}")
    device = matches[0] if len(matches) == 1 else matches[rng.integers(len(matches))]
    return EdgeAction(int(device), tuple(action.decisions))


class ActionSpace:
    """Bijection between flat network output indices and agnostic actions."""

    def __init__(self, spec: PartitionSpec, decision_grids=()):
        self.spec = spec
        self.decision_grids = tuple(tuple(g) for g in decision_grids)
        self.combos = list(itertools.product(*self.decision_grids))
        self.n_combos = len(self.combos)
        self.n_cells = spec.cell_count
        self.size = self.n_cells * self.n_combos

    def index(self, action: AgnosticAction) -> int:
        cell = int(np.ravel_multi_index(action.condition, self.spec.shape))
        return cell * self.n_combos + self.combos.index(tuple(action.decisions))

    def action(self, index: int) -> AgnosticAction:
        cell, combo = divmod(int(index), self.n_combos)
        condition = tuple(int(i) for i in np.unravel_index(cell, self.spec.shape))
        return AgnosticAction(condition, tuple(self.combos[combo]))

    def mask(self, occupancy_flat: np.ndarray) -> np.ndarray:
        """Feasible-action mask for a flat occupancy vector."""
        return np.repeat(np.asarray(occupancy_flat) > 0, self.n_combos)
