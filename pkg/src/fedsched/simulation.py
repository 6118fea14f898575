"""Round/slot driver: edge lifecycle, selection, federation, and metrics.

Each round runs, in order: due arrival events, availability sampling, task
selection, one federation round per selected task, ``slots_per_round`` local
DQN slots on every edge, and the end-of-round controller update.

Experience counts ``K_n`` used by the federation weights are the number of
transitions an edge gathered in the previous round's slot block.
"""

from __future__ import annotations

import csv
import hashlib
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dqn import EdgeLearner, EpsilonSchedule, PolicyParams, init_params, network_sizes
from .agnostic import ActionSpace
from .env import (STREAM_AGENT, STREAM_AVAILABILITY, STREAM_CENTRAL_INIT, STREAM_ENV,
                  STREAM_INIT, derive_rng, task_model)
from .federation import CentralPolicy, fed_ds_round
from .metrics import learning_speed, moving_average, normalize_reward
from .selection import TaskSelector, sample_availability, task_counts
from .tasks import load_scenario

REWARD_HEADER = ("slot", "edge_id", "task", "scenario", "raw_reward", "normalized_reward")
PARTICIPANT_HEADER = ("round", "task", "available", "selected", "participants")
SELECTION_HEADER = ("round", "task", "lambda", "mu", "weight", "selected")
SUMMARY_HEADER = ("policy", "task", "avg_participants", "avg_normalized_reward", "learning_speed")


@dataclass
class Edge:
    edge_id: int
    task: str
    scenario: str
    learner: EdgeLearner
    round_start: PolicyParams
    joined_slot: int = 0


@dataclass
class RewardBlock:
    """Raw rewards of one round: ``raw[slot, j]`` belongs to ``edge_ids[j]``."""

    start_slot: int
    edge_ids: np.ndarray
    raw: np.ndarray


@dataclass
class MetricsLog:
    policy: str
    task_ids: tuple[str, ...]
    bounds: dict[str, tuple[float, float]]
    slots_per_round: int
    speed_window: int = 5
    edges: dict[int, tuple[str, str, int]] = field(default_factory=dict)
    blocks: list[RewardBlock] = field(default_factory=list)
    participants: list[tuple] = field(default_factory=list)
    selection: list[tuple] = field(default_factory=list)
    checksums: list[tuple] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.blocks)

    def normalized(self, task: str, raw):
        lo, hi = self.bounds[task]
        return normalize_reward(raw, lo, hi)

    def task_round_rewards(self) -> np.ndarray:
        """``(rounds, L)`` mean normalized reward over each task's edges and slots."""
        out = np.full((self.rounds, len(self.task_ids)), np.nan)
        for r, block in enumerate(self.blocks):
            tasks = np.array([self.edges[e][0] for e in block.edge_ids])
            for l, tid in enumerate(self.task_ids):
                cols = tasks == tid
                if cols.any():
                    out[r, l] = float(np.mean(self.normalized(tid, block.raw[:, cols])))
        return out

    def sum_rewards(self) -> np.ndarray:
        """Per-round sum over tasks of the average normalized reward."""
        return np.nansum(self.task_round_rewards(), axis=1)

    def final_quartile_mean(self) -> float:
        s = self.sum_rewards()
        if len(s) == 0:
            return float("nan")
        return float(np.mean(s[-max(1, math.ceil(len(s) / 4)):]))

    def edge_rewards(self, edge_id: int, normalized: bool = True) -> np.ndarray:
        """Per-slot reward series of one edge from the slot it joined."""
        parts = []
        for block in self.blocks:
            hit = np.flatnonzero(block.edge_ids == edge_id)
            if len(hit):
                parts.append(block.raw[:, hit[0]])
        series = np.concatenate(parts) if parts else np.zeros(0)
        return self.normalized(self.edges[edge_id][0], series) if normalized else series

    def edge_moving_average(self, edge_id: int, window: int) -> np.ndarray:
        return moving_average(self.edge_rewards(edge_id), window)

    def participant_matrix(self) -> np.ndarray:
        """``(rounds, L)`` participants ``q_l * x_l`` of the completed rounds."""
        out = np.zeros((self.rounds, len(self.task_ids)), dtype=np.int64)
        index = {t: l for l, t in enumerate(self.task_ids)}
        for r, tid, _x, _q, p in self.participants:
            if r <= self.rounds:
                out[r - 1, index[tid]] = p
        return out

    def avg_participants(self) -> np.ndarray:
        m = self.participant_matrix()
        return m.mean(axis=0) if len(m) else np.zeros(len(self.task_ids))

    def summary(self) -> list[tuple]:
        if self.rounds == 0:
            return []
        rewards = self.task_round_rewards()
        parts = self.avg_participants()
        rows = []
        for l, tid in enumerate(self.task_ids):
            series = rewards[:, l]
            series = series[~np.isnan(series)]
            avg = float(series.mean()) if len(series) else float("nan")
            speed = learning_speed(series, self.speed_window) if len(series) else 0
            rows.append((self.policy, tid, float(parts[l]), avg, speed))
        return rows

    # -- output ------------------------------------------------------------

    def reward_rows(self):
        for block in self.blocks:
            meta = [self.edges[e] for e in block.edge_ids]
            norm = [self.normalized(m[0], block.raw[:, j]) for j, m in enumerate(meta)]
            for i in range(block.raw.shape[0]):
                slot = block.start_slot + i
                for j, e in enumerate(block.edge_ids):
                    yield (slot, int(e), meta[j][0], meta[j][1],
                           float(block.raw[i, j]), float(norm[j][i]))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "rewards.csv", REWARD_HEADER, self.reward_rows())
        _write_csv(out / "participants.csv", PARTICIPANT_HEADER, self.participants)
        _write_csv(out / "selection.csv", SELECTION_HEADER, self.selection)
        _write_csv(out / "summary.csv", SUMMARY_HEADER, self.summary())
        if self.checksums:
            _write_csv(out / "central.csv", ("round", "task", "sha256"), self.checksums)


def _write_csv(path: Path, header, rows) -> None:
    # csv formats floats with repr, which round-trips and is platform stable.
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


class InvariantMonitor:
    """Counts transitions and records any state, action, or multiplier violation."""

    def __init__(self):
        self.transitions = 0
        self.rounds = 0
        self.violations: list[str] = []
        self._lock = threading.Lock()

    def __call__(self, learner: EdgeLearner, action: int, mask: np.ndarray, tr) -> None:
        problems = []
        if not mask[action]:
            problems.append(f"infeasible action {action}")
        if not np.isfinite(tr.reward):
            problems.append("non-finite reward")
        s, cfg = tr.next_state, learner.config
        if cfg.task_id == "A" and (np.any(s.battery < 0) or np.any(s.battery > cfg.max_battery)):
            problems.append("battery out of range")
        if cfg.task_id == "B" and (np.any(s.buffer < 0) or np.any(s.buffer > cfg.max_buffer)):
            problems.append("buffer out of range")
        if cfg.task_id == "C" and np.any(s.dod < 0):
            problems.append("negative DoD")
        with self._lock:
            self.transitions += 1
            self.violations.extend(problems)

    def check_round(self, selector: TaskSelector) -> None:
        self.rounds += 1
        if np.any(selector.mult.lam < 0) or np.any(selector.mult.mu < 0):
            self.violations.append(f"negative multiplier after round {selector.round_index - 1}")


def _theta_digest(theta: PolicyParams) -> str:
    return hashlib.sha256(np.ascontiguousarray(theta.flat).tobytes()).hexdigest()


class Simulation:
    """Owns every piece of cross-edge state of one experiment."""

    def __init__(self, config: ExperimentConfig, monitor: InvariantMonitor | None = None):
        self.config = config.validate()
        self.monitor = monitor
        self.task_ids = tuple(config.tasks)
        self.edges: list[Edge] = []
        self.slot = 0
        self.round = 0
        self._pending = sorted(config.arrivals, key=lambda ev: ev.slot)
        self._epsilon = EpsilonSchedule(
            config.dqn.epsilon_start, config.dqn.epsilon_end,
            max(1, round(config.dqn.epsilon_decay_fraction * config.total_slots)))
        self._sizes = {}
        self.central: dict[str, CentralPolicy] = {}
        for l, tid in enumerate(self.task_ids):
            probe = load_scenario(tid, next(iter(config.tasks[tid].scenarios), "A"), config.scenarios)
            space = ActionSpace(config.partition(tid), task_model(tid).spec(probe).decision_grids)
            self._sizes[tid] = network_sizes(space, config.dqn.hidden)
            theta = init_params(self._sizes[tid], derive_rng(config.seed, STREAM_CENTRAL_INIT, l))
            self.central[tid] = CentralPolicy(tid, theta)
        tasks = config.tasks
        self.selector = TaskSelector(
            config.policy,
            [tasks[t].demand.as_array() for t in self.task_ids],
            config.capacity,
            [tasks[t].demand.min_participants for t in self.task_ids],
            np.ones(len(self.task_ids)),
            alpha=config.selection.alpha,
            step_decay=config.selection.step_decay,
            initial_multiplier=config.selection.initial_multiplier,
        )
        self._avail_rng = derive_rng(config.seed, STREAM_AVAILABILITY)
        self.log = MetricsLog(config.policy, self.task_ids,
                              {t: tasks[t].reward_bounds for t in self.task_ids},
                              config.slots_per_round, config.speed_window)
        for tid in self.task_ids:
            for sid, count in tasks[tid].scenarios.items():
                for _ in range(count):
                    self.spawn_edge(tid, sid)
        self._refresh_y_max()

    def _refresh_y_max(self) -> None:
        self.selector.y_max = np.array(
            [sum(e.task == t for e in self.edges) for t in self.task_ids], dtype=float)

    def spawn_edge(self, task: str, scenario: str) -> Edge:
        """Add an edge of ``task`` running ``scenario``, starting at the current slot.

        Under the federated policies the edge starts from the task's current
        central policy. Under No-FL there is no central policy service and
        the edge draws its own random initialization.
        """
        cfg = self.config
        env_config = load_scenario(task, scenario, cfg.scenarios)
        edge_id = len(self.edges)
        if cfg.policy == "no-fl":
            params = init_params(self._sizes[task], derive_rng(cfg.seed, STREAM_INIT, edge_id))
        else:
            params = self.central[task].theta.copy()
        # Training rewards are the normalized rewards shifted to [-0.5, 0.5]:
        # Q-values then start near their true scale instead of far below it.
        lo, hi = cfg.tasks[task].reward_bounds
        learner = EdgeLearner(env_config, cfg.partition(task), cfg.dqn, params,
                              derive_rng(cfg.seed, STREAM_ENV, edge_id),
                              derive_rng(cfg.seed, STREAM_AGENT, edge_id),
                              self._epsilon, reward_offset=0.5 * (lo + hi), reward_scale=hi - lo,
                              clock=self.slot)
        learner.monitor = self.monitor
        edge = Edge(edge_id, task, scenario, learner, params.copy(), self.slot)
        self.edges.append(edge)
        self.log.edges[edge_id] = (task, scenario, self.slot)
        return edge

    def _process_arrivals(self) -> None:
        spawned = False
        while self._pending and self._pending[0].slot <= self.slot:
            ev = self._pending.pop(0)
            for _ in range(ev.count):
                self.spawn_edge(ev.task, ev.scenario)
            spawned = True
        if spawned:
            self._refresh_y_max()

    def step_round(self, pool: ThreadPoolExecutor | None = None) -> None:
        cfg = self.config
        r = self.round + 1
        self._process_arrivals()
        edge_tasks = [self.task_ids.index(e.task) for e in self.edges]
        rates = [cfg.tasks[t].arrival_rate for t in self.task_ids]
        x = sample_availability(rates, edge_tasks, self._avail_rng)
        counts = task_counts(x, edge_tasks, len(self.task_ids))
        lam, mu = self.selector.mult.lam.copy(), self.selector.mult.mu.copy()
        q = self.selector.select(counts)
        for l, tid in enumerate(self.task_ids):
            self.log.participants.append((r, tid, int(counts[l]), int(q[l]), int(q[l] * counts[l])))
            self.log.selection.append((r, tid, float(lam[l]), float(mu[l]),
                                       float(self.selector.last_weights[l]), int(q[l])))
            if q[l] and counts[l]:
                members = [e for e in self.edges if e.task == tid]
                avail = {e.edge_id: int(x[e.edge_id]) for e in members}
                self.central[tid] = fed_ds_round(tid, avail, members, self.central[tid])
            if cfg.write_checksums:
                self.log.checksums.append((r, tid, _theta_digest(self.central[tid].theta)))
        for e in self.edges:
            e.learner.buffer.start_round()
        S = cfg.slots_per_round
        if pool is None:
            results = [e.learner.run_local_slots(S) for e in self.edges]
        else:
            results = list(pool.map(lambda e: e.learner.run_local_slots(S), self.edges))
        self.log.blocks.append(RewardBlock(self.slot, np.array([e.edge_id for e in self.edges]),
                                           np.column_stack(results)))
        self.selector.end_round(q, counts)
        if self.monitor is not None:
            self.monitor.check_round(self.selector)
        self.slot += S
        self.round = r

    def run(self) -> MetricsLog:
        cfg = self.config
        pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        try:
            for _ in range(cfg.rounds):
                self.step_round(pool)
        finally:
            if pool is not None:
                pool.shutdown()
            if cfg.output_dir:
                self.log.write(cfg.output_dir)
        return self.log


def run_simulation(config: ExperimentConfig, monitor: InvariantMonitor | None = None) -> MetricsLog:
    """Run a full experiment; outputs go to ``config.output_dir`` when set."""
    return Simulation(config, monitor).run()
