"""Per-edge deep Q-learning over agnostic states and actions.

The Q-network is a dense ReLU network implemented directly in numpy so that
its parameters live in one flat float64 vector. Federation then only has to do
vector arithmetic, and a parameter snapshot is just that vector.

Flat layout: for each layer in order, the weight matrix ``W`` of shape
``(fan_in, fan_out)`` in row-major order, followed by its bias ``b`` of length
``fan_out``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .agnostic import ActionSpace, PartitionSpec, cell_ids
from .env import EdgeAction, task_model
from .errors import ContractViolation, TrainingDivergence


class PolicyParams:
    """Weights and biases of a fully connected network, backed by one flat vector."""

    def __init__(self, sizes: Sequence[int], flat: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ContractViolation("a network needs an input and an output layer")
        n = self.param_count(self.sizes)
        if flat is None:
            flat = np.zeros(n)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ContractViolation(f"expected {n} parameters for sizes {self.sizes}, got {flat.shape}")
        self.flat = flat
        self.layers = []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            self.layers.append((w, b))

    @staticmethod
    def param_count(sizes) -> int:
        return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.sizes, self.flat.copy())

    def same_shape(self, other: "PolicyParams") -> bool:
        return self.sizes == other.sizes

    def __repr__(self):
        return f"PolicyParams(sizes={self.sizes})"


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    params = PolicyParams(sizes)
    for w, b in params.layers:
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


def save_params(path, params: PolicyParams) -> None:
    np.savez(path, sizes=np.asarray(params.sizes), flat=params.flat)


def load_params(path) -> PolicyParams:
    with np.load(path) as data:
        return PolicyParams(tuple(data["sizes"]), data["flat"].copy())


def net_forward(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    """Q-values for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise ContractViolation(f"input width {x.shape[-1]} != {params.sizes[0]}")
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(params, x):
    acts = [x]
    pre = []
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts, pre


def backprop(params: PolicyParams, x: np.ndarray, d_out: np.ndarray) -> tuple[np.ndarray, PolicyParams]:
    """Forward pass on a batch plus the gradient of ``sum(d_out * output)``.

    Returns the output and the gradient in the same flat layout as ``params``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts, pre = _forward_cache(params, x)
    grad = PolicyParams(params.sizes)
    delta = np.atleast_2d(d_out)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        gw, gb = grad.layers[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0)
    return acts[-1], grad


def select_action(q: np.ndarray, feasible: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Masked epsilon-greedy. Greedy ties go to the lowest index."""
    feasible = np.asarray(feasible, dtype=bool)
    if not feasible.any():
        raise ContractViolation("no feasible action")
    if rng.random() < epsilon:
        choices = np.flatnonzero(feasible)
        return int(choices[rng.integers(len(choices))])
    return int(np.argmax(np.where(feasible, q, -np.inf)))


@dataclass
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_masks: np.ndarray


def td_targets(target_params: PolicyParams, batch: Batch, gamma: float) -> np.ndarray:
    if gamma == 0.0:
        return batch.rewards.astype(np.float64)
    q_next = net_forward(target_params, batch.next_states)
    best = np.max(np.where(batch.next_masks, q_next, -np.inf), axis=1)
    return batch.rewards + gamma * best


def td_loss_and_grad(params, target_params, batch: Batch, gamma: float):
    y = td_targets(target_params, batch, gamma)
    n = len(batch.actions)
    rows = np.arange(n)
    q = net_forward(params, batch.states)
    err = y - q[rows, batch.actions]
    loss = float(np.mean(err ** 2))
    d_out = np.zeros_like(q)
    d_out[rows, batch.actions] = -2.0 * err / n
    _, grad = backprop(params, batch.states, d_out)
    return loss, grad


def train_step(params: PolicyParams, target_params: PolicyParams, batch: Batch,
               gamma: float, learning_rate: float) -> tuple[PolicyParams, float]:
    """One SGD step on the mean squared TD error. Returns ``(new_params, loss)``."""
    if len(batch.actions) == 0:
        raise ContractViolation("empty training batch")
    # Non-finite values are reported below with diagnostics, not as warnings.
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grad = td_loss_and_grad(params, target_params, batch, gamma)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad.flat)):
        raise TrainingDivergence(
            "non-finite TD loss",
            {"loss": loss, "max_abs_param": float(np.max(np.abs(params.flat))),
             "max_abs_reward": float(np.max(np.abs(batch.rewards)))})
    return PolicyParams(params.sizes, params.flat - learning_rate * grad.flat), loss


class ReplayBuffer:
    """Bounded FIFO of experiences with a per-round insertion counter."""

    def __init__(self, capacity: int, state_dim: int, n_combos: int = 1):
        if capacity < 1:
            raise ContractViolation("replay capacity must be positive")
        self.capacity = int(capacity)
        self.n_combos = n_combos
        self.states = np.zeros((capacity, state_dim), dtype=np.uint8)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.uint8)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.size = 0
        self._head = 0
        self.round_count = 0

    def __len__(self):
        return self.size

    def push(self, exp: Experience) -> None:
        i = self._head
        self.states[i] = exp.state
        self.actions[i] = exp.action
        self.rewards[i] = exp.reward
        self.next_states[i] = exp.next_state
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.round_count += 1

    def start_round(self) -> None:
        self.round_count = 0

    def experiences(self) -> list[Experience]:
        """Stored experiences, oldest first."""
        start = self._head if self.size == self.capacity else 0
        order = [(start + i) % self.capacity for i in range(self.size)]
        return [Experience(self.states[i].astype(float), int(self.actions[i]),
                           float(self.rewards[i]), self.next_states[i].astype(float))
                for i in order]

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draws with replacement."""
        if self.size == 0:
            raise ContractViolation("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=batch_size)
        nxt = self.next_states[idx].astype(np.float64)
        return Batch(self.states[idx].astype(np.float64), self.actions[idx],
                     self.rewards[idx], nxt, np.repeat(nxt > 0, self.n_combos, axis=1))


def replay_push(buffer: ReplayBuffer, exp: Experience) -> ReplayBuffer:
    buffer.push(exp)
    return buffer


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng) -> Batch:
    return buffer.sample(batch_size, rng)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``decay_slots``, then flat."""

    start: float = 1.0
    end: float = 0.05
    decay_slots: int = 1

    def __call__(self, slot: int) -> float:
        if slot >= self.decay_slots:
            return self.end
        return self.start + (self.end - self.start) * slot / self.decay_slots


@dataclass(frozen=True)
class DqnSettings:
    hidden: tuple[int, ...] = (300, 300, 300)
    learning_rate: float = 1e-5
    batch_size: int = 32
    train_interval: int = 50
    target_update_interval: int = 100
    gamma: float = 0.95
    replay_capacity: int = 10_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.4


def network_sizes(space: ActionSpace, hidden: Sequence[int]) -> tuple[int, ...]:
    return (space.n_cells, *hidden, space.size)


class EdgeLearner:
    """One edge's environment, DQN state, and random streams.

    ``clock`` is the global slot index of the learner's next step; it drives
    the epsilon schedule so that a late-joining edge follows the same schedule
    as everyone else. ``reward_offset``/``reward_scale`` map raw task rewards
    to the training signal ``(raw - offset) / scale``.
    """

    def __init__(self, env_config, partition: PartitionSpec, settings: DqnSettings,
                 params: PolicyParams, env_rng, agent_rng, epsilon: EpsilonSchedule,
                 reward_offset: float = 0.0, reward_scale: float = 1.0, clock: int = 0,
                 initial_state=None):
        self.config = env_config
        self.model = task_model(env_config.task_id)
        self.partition = partition
        self.settings = settings
        spec = self.model.spec(env_config)
        self.space = ActionSpace(partition, spec.decision_grids)
        if params.sizes != network_sizes(self.space, settings.hidden):
            raise ContractViolation("parameter shape does not match the task network")
        self.params = params
        self.target_params = params.copy()
        self.env_rng = env_rng
        self.agent_rng = agent_rng
        self.epsilon = epsilon
        self.reward_offset = reward_offset
        self.reward_scale = reward_scale
        self.clock = clock
        self.local_step = 0
        self.train_steps = 0
        self.target_syncs = 0
        self.last_loss = float("nan")
        self.buffer = ReplayBuffer(settings.replay_capacity, self.space.n_cells, self.space.n_combos)
        self.state = initial_state if initial_state is not None else self.model.reset(env_config, env_rng)
        self._encode()
        self.monitor: Callable | None = None

    def _encode(self):
        self._cells = cell_ids(self.model.features(self.state), self.partition)
        occ = np.zeros(self.space.n_cells)
        occ[self._cells] = 1.0
        self._occ = occ
        self._mask = np.repeat(occ > 0, self.space.n_combos)

    @property
    def occupancy(self) -> np.ndarray:
        return self._occ

    def set_params(self, params: PolicyParams) -> None:
        """Replace the online network. The target network is left untouched."""
        if not params.same_shape(self.params):
            raise ContractViolation("parameter shape mismatch")
        self.params = params.copy()

    def run_local_slots(self, slots: int) -> np.ndarray:
        """Run ``slots`` DQN iterations; return the raw per-slot rewards."""
        rewards = np.empty(slots)
        s = self.settings
        n_combos = self.space.n_combos
        combos = self.space.combos
        for i in range(slots):
            q = net_forward(self.params, self._occ)
            a = select_action(q, self._mask, self.epsilon(self.clock), self.agent_rng)
            cell, combo = divmod(a, n_combos)
            matches = np.flatnonzero(self._cells == cell)
            if len(matches) == 0:
                raise ContractViolation(f"selected unoccupied condition {cell}")
            device = matches[0] if len(matches) == 1 else matches[self.agent_rng.integers(len(matches))]
            action = EdgeAction(int(device), combos[combo])
            prev_occ, prev_mask = self._occ, self._mask
            tr = self.model.step(self.state, action, self.env_rng)
            self.state = tr.next_state
            self._encode()
            u = (tr.reward - self.reward_offset) / self.reward_scale
            self.buffer.push(Experience(prev_occ, a, u, self._occ))
            rewards[i] = tr.reward
            if self.monitor is not None:
                self.monitor(self, a, prev_mask, tr)
            self.local_step += 1
            self.clock += 1
            if self.local_step % s.train_interval == 0:
                batch = self.buffer.sample(s.batch_size, self.agent_rng)
                self.params, self.last_loss = train_step(
                    self.params, self.target_params, batch, s.gamma, s.learning_rate)
                self.train_steps += 1
            if self.local_step % s.target_update_interval == 0:
                self.target_params = self.params.copy()
                self.target_syncs += 1
        return rewards


def run_local_slots(edge: EdgeLearner, slots: int) -> np.ndarray:
    return edge.run_local_slots(slots)
