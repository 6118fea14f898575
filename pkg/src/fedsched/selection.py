"""Task selection under cloud resource limits.

Each round the server sees how many edges of every task are available and
picks which tasks federate. Capacity is three-dimensional (bandwidth, memory,
compute); a selected task with ``x_l`` available edges consumes
``x_l * (B_l, O_l, C_l)``.

The proportional-fair controller (FL-PF) keeps two non-negative prices per
task. ``lambda`` prices the log-utility of average participation through an
auxiliary target ``y``; ``mu`` enforces the minimum average participation
``X``. Each round it solves a 0/1 multidimensional knapsack with task weights
``(lambda + mu) * x`` and then takes a projected subgradient step on both
prices.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

POLICIES = ("fl-pf", "fl-greedy", "fl-rr", "bench", "no-fl")
_REL_TOL = 1e-12


@dataclass(frozen=True)
class CloudCapacity:
    bandwidth: float
    memory: float
    compute: float

    def __post_init__(self):
        if min(self.bandwidth, self.memory, self.compute) < 0:
            raise ConfigurationError("capacities must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.bandwidth, self.memory, self.compute], dtype=float)


@dataclass(frozen=True)
class TaskDemand:
    """Per-participant resource cost and minimum average participants of one task."""

    bandwidth: float = 1.0
    memory: float = 1.0
    compute: float = 1.0
    min_participants: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.bandwidth, self.memory, self.compute], dtype=float)


@dataclass
class MultiplierState:
    lam: np.ndarray
    mu: np.ndarray
    alpha: float = 0.05

    @classmethod
    def initial(cls, n_tasks: int, value: float = 1.0, alpha: float = 0.05) -> "MultiplierState":
        return cls(np.full(n_tasks, value), np.full(n_tasks, value), alpha)


def task_counts(x: np.ndarray, edge_tasks: Sequence[int], n_tasks: int) -> np.ndarray:
    """Per-task number of available edges."""
    return np.bincount(np.asarray(edge_tasks, dtype=np.int64), weights=np.asarray(x, dtype=float),
                       minlength=n_tasks).astype(np.int64)


def sample_availability(rates: Sequence[float], edge_tasks: Sequence[int],
                        rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli availability per edge at its task's rate."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0) or np.any(rates > 1):
        raise ConfigurationError("availability rates must lie in [0, 1]")
    p = rates[np.asarray(edge_tasks, dtype=np.int64)]
    return (rng.random(len(p)) < p).astype(np.int64)


# --------------------------------------------------------------------------
# multidimensional knapsack
# --------------------------------------------------------------------------

def _fits(load, caps):
    return np.all(load <= caps + _REL_TOL * np.maximum(1.0, np.abs(caps)), axis=-1)


def _better(value, members, best_value, best_members) -> bool:
    """Tie rule: higher value, then more items, then lexicographically smaller set."""
    tol = _REL_TOL * max(1.0, abs(value), abs(best_value))
    if value > best_value + tol:
        return True
    if value < best_value - tol:
        return False
    if len(members) != len(best_members):
        return len(members) > len(best_members)
    return tuple(members) < tuple(best_members)


def _enumerate(values, demands, caps):
    n = len(values)
    best_value, best_members = 0.0, ()
    chunk = 1 << min(n, 16)
    bits = np.arange(n, dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        masks = ((codes[:, None] >> bits) & 1).astype(np.float64)
        feasible = _fits(masks @ demands, caps)
        if not feasible.any():
            continue
        objective = masks @ values
        objective[~feasible] = -np.inf
        top = objective.max()
        tol = _REL_TOL * max(1.0, abs(top))
        for row in np.flatnonzero(objective >= top - tol):
            members = tuple(int(i) for i in np.flatnonzero(masks[row]))
            if _better(float(objective[row]), members, best_value, best_members):
                best_value, best_members = float(objective[row]), members
    return best_members


def _fractional_bound(values, demands, caps, load, remaining):
    """Smallest single-constraint fractional knapsack bound over the three resources."""
    best = math.inf
    for d in range(demands.shape[1]):
        room = caps[d] - load[d]
        total = 0.0
        ranked = []
        for i in remaining:
            if values[i] <= 0:
                continue
            if demands[i, d] <= 0:
                total += values[i]
            else:
                ranked.append((values[i] / demands[i, d], i))
        ranked.sort(reverse=True)
        for _, i in ranked:
            if room <= 0:
                break
            take = min(1.0, room / demands[i, d])
            total += take * values[i]
            room -= take * demands[i, d]
        best = min(best, total)
    return best


def _branch_and_bound(values, demands, caps):
    """Best-first branch and bound; keeps tied subtrees so the tie rule is exact."""
    n = len(values)
    order = list(range(n))
    best_value, best_members = 0.0, ()
    counter = itertools.count()
    root_bound = _fractional_bound(values, demands, caps, np.zeros(3), order)
    heap = [(-root_bound, next(counter), 0, (), 0.0, np.zeros(demands.shape[1]))]
    while heap:
        neg_bound, _, level, members, value, load = heapq.heappop(heap)
        tol = _REL_TOL * max(1.0, abs(best_value))
        if -neg_bound < best_value - tol:
            break
        if level == n:
            if _better(value, members, best_value, best_members):
                best_value, best_members = value, members
            continue
        item = order[level]
        rest = order[level + 1:]
        children = []
        new_load = load + demands[item]
        if _fits(new_load, caps):
            children.append((members + (item,), value + values[item], new_load))
        children.append((members, value, load))
        for m, v, ld in children:
            bound = v + _fractional_bound(values, demands, caps, ld, rest)
            if bound >= best_value - _REL_TOL * max(1.0, abs(best_value)):
                heapq.heappush(heap, (-bound, next(counter), level + 1, m, v, ld))
    return best_members


def solve_mdkp(values: Sequence[float], demands, caps, method: str = "auto") -> np.ndarray:
    """Exact 0/1 multidimensional knapsack.

    ``values``: per-item weights (>= 0); ``demands``: ``(L, 3)`` resource use of
    each item; ``caps``: the three capacities. Returns a 0/1 selection vector.
    Among optimal sets the larger one wins, then the lexicographically smaller
    index set. ``method`` is ``"enumerate"``, ``"bnb"``, or ``"auto"``
    (enumeration up to 20 items).
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    demands = np.asarray(demands, dtype=np.float64).reshape(len(values), -1)
    caps = caps.as_array() if isinstance(caps, CloudCapacity) else np.asarray(caps, dtype=np.float64)
    if np.any(demands < 0) or np.any(caps < 0):
        raise ValueError("demands and capacities must be non-negative")
    q = np.zeros(len(values), dtype=np.int64)
    if method == "auto":
        method = "enumerate" if len(values) <= 20 else "bnb"
    if method == "enumerate":
        members = _enumerate(values, demands, caps)
    elif method == "bnb":
        members = _branch_and_bound(values, demands, caps)
    else:
        raise ValueError(f"unknown method {method!r}")
    q[list(members)] = 1
    return q


# --------------------------------------------------------------------------
# proportional-fair controller
# --------------------------------------------------------------------------

def select_tasks(mult: MultiplierState, counts: Sequence[int], demands, caps) -> np.ndarray:
    """Knapsack with weights ``(lambda + mu) * x``; tasks with ``x = 0`` stay out."""
    counts = np.asarray(counts, dtype=np.int64)
    per_task = np.asarray(demands, dtype=float)
    q = np.zeros(len(counts), dtype=np.int64)
    live = np.flatnonzero(counts > 0)
    if len(live) == 0:
        return q
    weights = (mult.lam + mult.mu)[live] * counts[live]
    sub = solve_mdkp(weights, per_task[live] * counts[live, None], caps)
    q[live] = sub
    return q


def auxiliary_target(utility: tuple[str, float], lam: float, y_max: float) -> float:
    """``argmax_{0 <= y <= y_max} V(y) - lam * y``; only log utility is supported."""
    kind, weight = utility
    if kind != "log":
        raise ConfigurationError(f"unknown utility kind {kind!r}")
    if y_max <= 0:
        raise ValueError("y_max must be positive")
    if lam <= 0:
        return float(y_max)
    return float(min(weight / lam, y_max))


def update_multipliers(mult: MultiplierState, q, counts, targets, min_participants,
                       alpha: float | None = None) -> MultiplierState:
    alpha = mult.alpha if alpha is None else alpha
    if alpha <= 0:
        raise ValueError("step size must be positive")
    served = np.asarray(q, dtype=float) * np.asarray(counts, dtype=float)
    lam = np.maximum(mult.lam - alpha * (served - np.asarray(targets, dtype=float)), 0.0)
    mu = np.maximum(mult.mu - alpha * (served - np.asarray(min_participants, dtype=float)), 0.0)
    return MultiplierState(lam, mu, mult.alpha)


def _first_fit(order, counts, demands, caps) -> np.ndarray:
    q = np.zeros(len(counts), dtype=np.int64)
    load = np.zeros(3)
    for l in order:
        if counts[l] <= 0:
            continue
        need = load + counts[l] * demands[l]
        if _fits(need, caps):
            q[l] = 1
            load = need
    return q


@dataclass
class TaskSelector:
    """Round-by-round selection state for one of the five policies."""

    kind: str
    demands: np.ndarray
    caps: CloudCapacity
    min_participants: np.ndarray
    y_max: np.ndarray
    utility_weights: np.ndarray | None = None
    alpha: float = 0.05
    step_decay: bool = False
    initial_multiplier: float = 1.0
    mult: MultiplierState = field(init=False)
    pointer: int = field(init=False, default=0)
    round_index: int = field(init=False, default=1)
    last_weights: np.ndarray = field(init=False)
    last_targets: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigurationError(f"unknown selection policy {self.kind!r}")
        self.demands = np.asarray(self.demands, dtype=float).reshape(-1, 3)
        n = len(self.demands)
        self.min_participants = np.asarray(self.min_participants, dtype=float)
        self.y_max = np.asarray(self.y_max, dtype=float)
        if self.utility_weights is None:
            self.utility_weights = np.ones(n)
        self.mult = MultiplierState.initial(n, self.initial_multiplier, self.alpha)
        self.last_weights = np.zeros(n)
        self.last_targets = np.zeros(n)

    @property
    def n_tasks(self) -> int:
        return len(self.demands)

    def step_size(self) -> float:
        if self.step_decay:
            return self.alpha / math.ceil(self.round_index / 50)
        return self.alpha

    def select(self, counts) -> np.ndarray:
        counts = np.asarray(counts, dtype=np.int64)
        caps = self.caps.as_array()
        n = self.n_tasks
        self.last_weights = np.zeros(n)
        if self.kind == "fl-pf":
            self.last_weights = (self.mult.lam + self.mult.mu) * counts
            return select_tasks(self.mult, counts, self.demands, caps)
        if self.kind == "fl-greedy":
            order = sorted(range(n), key=lambda l: (-counts[l], l))
            return _first_fit(order, counts, self.demands, caps)
        if self.kind == "fl-rr":
            order = [(self.pointer + i) % n for i in range(n)]
            return _first_fit(order, counts, self.demands, caps)
        if self.kind == "bench":
            return (counts > 0).astype(np.int64)
        return np.zeros(n, dtype=np.int64)

    def end_round(self, q, counts) -> None:
        if self.kind == "fl-pf":
            targets = np.array([auxiliary_target(("log", w), lam, ym) for w, lam, ym
                                in zip(self.utility_weights, self.mult.lam, self.y_max)])
            self.last_targets = targets
            self.mult = update_multipliers(self.mult, q, counts, targets,
                                           self.min_participants, self.step_size())
        elif self.kind == "fl-rr":
            self.pointer = (self.pointer + 1) % self.n_tasks
        self.round_index += 1


def policy_select(selector: TaskSelector, counts) -> np.ndarray:
    return selector.select(counts)


def simulate_selection(kind: str, rates: Sequence[float], edges_per_task: Sequence[int],
                       demands, caps: CloudCapacity, min_participants, rounds: int,
                       seed: int, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Selection-only run without learning.

    Returns ``(counts, participants)``, both ``(rounds, L)`` arrays, where
    participants are ``q_l * x_l`` per round.
    """
    from .env import STREAM_AVAILABILITY, derive_rng

    rng = derive_rng(seed, STREAM_AVAILABILITY)
    n = len(edges_per_task)
    edge_tasks = np.repeat(np.arange(n), edges_per_task)
    selector = TaskSelector(kind, demands, caps, min_participants,
                            np.asarray(edges_per_task, dtype=float), alpha=alpha)
    all_counts = np.zeros((rounds, n), dtype=np.int64)
    participants = np.zeros((rounds, n), dtype=np.int64)
    for r in range(rounds):
        x = sample_availability(rates, edge_tasks, rng)
        counts = task_counts(x, edge_tasks, n)
        q = selector.select(counts)
        selector.end_round(q, counts)
        all_counts[r] = counts
        participants[r] = q * counts
    return all_counts, participants
