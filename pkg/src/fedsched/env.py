"""Generic dynamic scheduling MDP contract.

Every concrete task (see :mod:`fedsched.tasks`) describes an edge as a set of
devices, each carrying ``K`` pieces of state information. An action schedules
exactly one device and fixes ``G`` auxiliary decisions drawn from finite grids.
Slots are one second long, so all rates are per-slot quantities. Tasks are
continuing: there are no terminal states.

Indices are zero-based throughout the package (device 0, interval 0, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation

# Purpose codes mixed into every derived random stream, so that streams for
# different roles never collide even when they share an edge id.
STREAM_ENV = 1
STREAM_AGENT = 2
STREAM_INIT = 3
STREAM_AVAILABILITY = 4
STREAM_CENTRAL_INIT = 5
STREAM_CALIBRATION = 6


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Return an independent PCG64 stream for ``(master_seed, *keys)``.

    The mixing function is numpy's ``SeedSequence`` with ``keys`` as the spawn
    key. A stream depends only on the seed and its own keys, so edges can be
    created, reordered, or run in parallel without changing each other.
    """
    if master_seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {master_seed}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class TaskSpec:
    """Shape of a task: ``K`` state features and ``G`` decision grids."""

    task_id: str
    state_info_count: int
    decision_grids: tuple[tuple[float, ...], ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.state_info_count < 1:
            raise ConfigurationError("a task needs at least one state feature")
        for grid in self.decision_grids:
            if len(grid) == 0:
                raise ConfigurationError("decision grids must be non-empty")

    @property
    def decision_count(self) -> int:
        return len(self.decision_grids)


@dataclass(frozen=True)
class EdgeAction:
    device: int
    decisions: tuple[float, ...] = ()


@dataclass(frozen=True)
class Transition:
    next_state: Any
    reward: float
    info: dict = field(default_factory=dict)


class TaskModel:
    """Base class for concrete tasks; subclasses register themselves by id."""

    task_id: str = ""

    def spec(self, config) -> TaskSpec:
        raise NotImplementedError

    def reset(self, config, rng: np.random.Generator):
        raise NotImplementedError

    def step(self, state, action: EdgeAction, rng: np.random.Generator) -> Transition:
        raise NotImplementedError

    def features(self, state) -> np.ndarray:
        """Return the ``(M, K)`` matrix of per-device state information."""
        raise NotImplementedError


TASK_MODELS: dict[str, TaskModel] = {}


def register_task(model_cls):
    TASK_MODELS[model_cls.task_id] = model_cls()
    return model_cls


def task_model(task_id: str) -> TaskModel:
    try:
        return TASK_MODELS[task_id]
    except KeyError:
        raise ConfigurationError(f"unknown task {task_id!r}") from None


def env_reset(config, seed: int):
    """Initial state of an edge. Same ``(config, seed)`` gives the same state."""
    return task_model(config.task_id).reset(config, np.random.default_rng(seed))


def check_action(state, action: EdgeAction) -> None:
    config = state.config
    if not 0 <= action.device < config.device_count:
        raise ContractViolation(
            f"device {action.device} out of range for {config.device_count} devices")
    spec = task_model(config.task_id).spec(config)
    if len(action.decisions) != spec.decision_count:
        raise ContractViolation(
            f"expected {spec.decision_count} decisions, got {len(action.decisions)}")
    for value, grid in zip(action.decisions, spec.decision_grids):
        if value not in grid:
            raise ContractViolation(f"decision {value!r} is not in its grid")


def env_step(state, action: EdgeAction, rng: np.random.Generator) -> Transition:
    """Advance one slot. The input state is never mutated."""
    check_action(state, action)
    return task_model(state.config.task_id).step(state, action, rng)


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Sum of ``gamma**t * r_t``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    total = 0.0
    discount = 1.0
    for r in rewards:
        total += discount * r
        discount *= gamma
    return total
