"""The three concrete scheduling tasks and their scenario catalog.

Task A  wireless power transfer: keep device batteries away from empty.
Task B  data gathering: drain device buffers before they overflow.
Task C  radio resource scheduling: serve rate requirements at low AP power.

Scenario parameters come from a fixed catalog (five scenarios,
``A`` to ``E``, per task). Constants the catalog leaves open (battery capacity,
Task C propagation model, power grid, power cost) are config fields with the
defaults documented on each dataclass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import ClassVar

import numpy as np

from .env import EdgeAction, TaskModel, TaskSpec, Transition, register_task
from .errors import ConfigurationError

SCENARIOS = ("A", "B", "C", "D", "E")


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _expand(groups) -> tuple[float, ...]:
    """``[(value, count), ...]`` -> flat per-device tuple."""
    out: list[float] = []
    for value, count in groups:
        out.extend([float(value)] * count)
    return tuple(out)


# --------------------------------------------------------------------------
# Task A: wireless power transfer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WptConfig:
    """Per-edge parameters of the wireless power transfer task.

    ``max_battery`` (100 mJ), ``low_battery`` (10 % of max) and ``outage_cost``
    are not in the scenario table. The charging rate each slot is drawn
    uniformly from ``charge_levels`` (mW, i.e. mJ per one-second slot), whose
    peak is the table's 5 mW.
    """

    task_id: ClassVar[str] = "A"
    scenario_id: str
    initial_battery: tuple[float, ...]
    max_battery: float = 100.0
    low_battery: float = 10.0
    outage_cost: float = 5.0
    discharge_rate: float = 1.0
    charge_levels: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    p_active_to_inactive: float = 0.5
    p_inactive_to_active: float = 0.5

    @property
    def device_count(self) -> int:
        return len(self.initial_battery)

    def validate(self):
        if self.device_count < 1:
            raise ConfigurationError("an edge needs at least one device")
        if not all(0 <= b <= self.max_battery for b in self.initial_battery):
            raise ConfigurationError("initial battery outside [0, max_battery]")
        if not self.charge_levels:
            raise ConfigurationError("charge_levels must be non-empty")


@dataclass(frozen=True)
class WptState:
    config: WptConfig
    battery: np.ndarray
    active: np.ndarray
    charge_rate: np.ndarray


def sample_active(prev: int, rng: np.random.Generator, p_ai: float = 0.5, p_ia: float = 0.5) -> int:
    """One step of the two-state active/inactive Markov chain."""
    flip = p_ai if prev else p_ia
    return 1 - prev if rng.random() < flip else prev


@register_task
class WirelessPowerTransfer(TaskModel):
    task_id = "A"
    feature_names = ("battery", "active", "charge_rate")

    def spec(self, config):
        return TaskSpec("A", 3, (), self.feature_names)

    def reset(self, config, rng):
        config.validate()
        m = config.device_count
        active = (rng.random(m) < 0.5).astype(np.int64)
        charge = rng.choice(np.asarray(config.charge_levels, dtype=float), size=m)
        return WptState(config, np.asarray(config.initial_battery, dtype=float), active, charge)

    def step(self, state, action, rng):
        cfg = state.config
        m = cfg.device_count
        scheduled = np.zeros(m)
        scheduled[action.device] = 1.0
        battery = state.battery - state.active * cfg.discharge_rate + scheduled * state.charge_rate
        battery = np.minimum(np.maximum(battery, 0.0), cfg.max_battery)
        reward = -float(np.sum(battery <= cfg.low_battery)
                        + cfg.outage_cost * np.sum(battery == 0.0))

        flip_p = np.where(state.active == 1, cfg.p_active_to_inactive, cfg.p_inactive_to_active)
        flips = rng.random(m) < flip_p
        active = np.where(flips, 1 - state.active, state.active)
        charge = rng.choice(np.asarray(cfg.charge_levels, dtype=float), size=m)
        return Transition(WptState(cfg, battery, active, charge), reward)

    def features(self, state):
        return np.column_stack((state.battery, state.active.astype(float), state.charge_rate))


# --------------------------------------------------------------------------
# Task B: data gathering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DgConfig:
    """Per-edge parameters of the data gathering task.

    Capacities are ``floor(Normal(mean, variance))`` clamped at zero; arrivals
    are Poisson. Buffers start empty.
    """

    task_id: ClassVar[str] = "B"
    scenario_id: str
    mean_capacity: tuple[float, ...]
    arrival_rate: tuple[float, ...]
    max_buffer: float = 90.0
    capacity_variance: float = 9.0

    @property
    def device_count(self) -> int:
        return len(self.mean_capacity)

    def validate(self):
        if self.device_count < 1:
            raise ConfigurationError("an edge needs at least one device")
        if len(self.arrival_rate) != self.device_count:
            raise ConfigurationError("arrival_rate and mean_capacity lengths differ")


@dataclass(frozen=True)
class DgState:
    config: DgConfig
    buffer: np.ndarray
    capacity: np.ndarray

    @property
    def remaining_buffer(self) -> np.ndarray:
        return self.config.max_buffer - self.buffer


def _sample_capacity(cfg: DgConfig, rng) -> np.ndarray:
    draw = rng.normal(np.asarray(cfg.mean_capacity), math.sqrt(cfg.capacity_variance))
    return np.maximum(np.floor(draw), 0.0)


@register_task
class DataGathering(TaskModel):
    task_id = "B"
    feature_names = ("remaining_buffer", "capacity")

    def spec(self, config):
        return TaskSpec("B", 2, (), self.feature_names)

    def reset(self, config, rng):
        config.validate()
        return DgState(config, np.zeros(config.device_count), _sample_capacity(config, rng))

    def step(self, state, action, rng):
        cfg = state.config
        m = cfg.device_count
        scheduled = np.zeros(m)
        scheduled[action.device] = 1.0
        arrivals = rng.poisson(np.asarray(cfg.arrival_rate)).astype(float)
        backlog = state.buffer + arrivals
        gathered = scheduled * np.minimum(state.capacity, backlog)
        pre = backlog - scheduled * state.capacity
        dropped = np.maximum(pre - cfg.max_buffer, 0.0)
        buffer = np.minimum(np.maximum(pre, 0.0), cfg.max_buffer)
        reward = float(gathered.sum() - dropped.sum())
        capacity = _sample_capacity(cfg, rng)
        info = {"arrivals": arrivals, "gathered": gathered, "dropped": dropped}
        return Transition(DgState(cfg, buffer, capacity), reward, info)

    def features(self, state):
        return np.column_stack((state.remaining_buffer, state.capacity))


# --------------------------------------------------------------------------
# Task C: radio resource scheduling
# --------------------------------------------------------------------------

DEFAULT_POWER_DBM = tuple(float(p) for p in range(0, 41, 5))


@dataclass(frozen=True)
class RrsConfig:
    """Per-edge parameters of the radio resource scheduling task.

    Path loss is ``pl_intercept_db + pl_slope_db * log10(d)`` with i.i.d.
    log-normal shadowing redrawn every slot. Rates are in Mbps over
    ``bandwidth_mhz``. ``power_levels`` is the transmit power grid in watts and
    ``power_cost`` (per watt) was calibrated so that the top power level costs
    about as much as the median DoD-weighted rate it earns under random
    scheduling (see :func:`calibrate_power_cost`).
    """

    task_id: ClassVar[str] = "C"
    scenario_id: str
    distance: tuple[float, ...]
    rate_requirement: tuple[float, ...]
    shadowing_db: float = 10.0
    pl_intercept_db: float = 35.0
    pl_slope_db: float = 35.0
    noise_dbm: float = -104.0
    bandwidth_mhz: float = 1.0
    power_levels: tuple[float, ...] = tuple(dbm_to_watt(p) for p in DEFAULT_POWER_DBM)
    power_cost: float = 5.04

    @property
    def device_count(self) -> int:
        return len(self.distance)

    @property
    def noise_watt(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    def path_loss_db(self) -> np.ndarray:
        return self.pl_intercept_db + self.pl_slope_db * np.log10(np.asarray(self.distance))

    def validate(self):
        if self.device_count < 1:
            raise ConfigurationError("an edge needs at least one device")
        if len(self.rate_requirement) != self.device_count:
            raise ConfigurationError("rate_requirement and distance lengths differ")
        if not self.power_levels:
            raise ConfigurationError("power_levels must be non-empty")


@dataclass(frozen=True)
class RrsState:
    config: RrsConfig
    gain: np.ndarray
    dod: np.ndarray


def _sample_gain(cfg: RrsConfig, rng) -> np.ndarray:
    shadow = rng.normal(0.0, cfg.shadowing_db, size=cfg.device_count)
    return 10.0 ** (-(cfg.path_loss_db() + shadow) / 10.0)


def shannon_rate(power: float, gain, cfg: RrsConfig):
    return cfg.bandwidth_mhz * np.log2(1.0 + power * gain / cfg.noise_watt)


@register_task
class RadioResourceScheduling(TaskModel):
    task_id = "C"
    feature_names = ("channel_gain", "dod")

    def spec(self, config):
        return TaskSpec("C", 2, (tuple(config.power_levels),), self.feature_names)

    def reset(self, config, rng):
        config.validate()
        return RrsState(config, _sample_gain(config, rng), np.zeros(config.device_count))

    def step(self, state, action, rng):
        cfg = state.config
        power = float(action.decisions[0])
        rates = np.zeros(cfg.device_count)
        rates[action.device] = shannon_rate(power, state.gain[action.device], cfg)
        reward = float(np.dot(state.dod, rates) - cfg.power_cost * power)
        dod = np.maximum(state.dod + np.asarray(cfg.rate_requirement) - rates, 0.0)
        gain = _sample_gain(cfg, rng)
        return Transition(RrsState(cfg, gain, dod), reward, {"rates": rates})

    def features(self, state):
        return np.column_stack((state.gain, state.dod))


# --------------------------------------------------------------------------
# Scenario catalog
# --------------------------------------------------------------------------

_WPT_TABLE = {"A": (7, 20), "B": (8, 30), "C": (9, 40), "D": (8, 30), "E": (8, 40)}
# per scenario: device counts at capacity 30/50/70, arrival rate
_DG_TABLE = {
    "A": ((1, 2, 1), 15), "B": ((3, 2, 2), 10), "C": ((3, 4, 3), 5),
    "D": ((2, 2, 2), 10), "E": ((3, 3, 3), 5),
}
# per scenario: device counts at 20/50/80 m, rate requirement (Mbps)
_RRS_TABLE = {
    "A": ((1, 2, 1), 1.0), "B": ((3, 3, 3), 0.5), "C": ((5, 10, 5), 0.2),
    "D": ((2, 2, 2), 0.4), "E": ((4, 4, 4), 0.3),
}

CONFIG_TYPES = {"A": WptConfig, "B": DgConfig, "C": RrsConfig}


def _table_config(task_id: str, scenario_id: str):
    if task_id == "A":
        count, battery = _WPT_TABLE[scenario_id]
        return WptConfig(scenario_id, (float(battery),) * count)
    if task_id == "B":
        counts, rate = _DG_TABLE[scenario_id]
        caps = _expand(zip((30, 50, 70), counts))
        return DgConfig(scenario_id, caps, (float(rate),) * len(caps))
    counts, req = _RRS_TABLE[scenario_id]
    dist = _expand(zip((20, 50, 80), counts))
    return RrsConfig(scenario_id, dist, (req,) * len(dist))


def make_edge_config(task_id: str, scenario_id: str, **params):
    """Build an edge config from explicit field values (for unseen scenarios)."""
    try:
        cls = CONFIG_TYPES[task_id]
    except KeyError:
        raise ConfigurationError(f"unknown task {task_id!r}") from None
    try:
        cfg = cls(scenario_id=scenario_id, **_coerce(task_id, params))
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    cfg.validate()
    return cfg


def load_scenario(task_id: str, scenario_id: str, catalog: dict | None = None, **overrides):
    """Edge config for ``(task, scenario)``.

    Built-in scenarios come from the scenario table. ``catalog`` maps
    ``task_id -> {scenario_id: {field: value}}`` and takes precedence, which is
    how config files define extra scenarios or override defaults such as the
    Task C power cost.
    """
    if task_id not in CONFIG_TYPES:
        raise ConfigurationError(f"unknown task {task_id!r}")
    custom = (catalog or {}).get(task_id, {}).get(scenario_id)
    if custom is not None:
        if scenario_id in SCENARIOS:
            cfg = replace(_table_config(task_id, scenario_id), **_coerce(task_id, custom))
        else:
            cfg = make_edge_config(task_id, scenario_id, **custom)
    elif scenario_id in SCENARIOS:
        cfg = _table_config(task_id, scenario_id)
    else:
        raise ConfigurationError(f"unknown scenario {scenario_id!r} for task {task_id}")
    if overrides:
        cfg = replace(cfg, **_coerce(task_id, overrides))
    cfg.validate()
    return cfg


def _coerce(task_id, params):
    names = {f.name for f in fields(CONFIG_TYPES[task_id])}
    unknown = set(params) - names
    if unknown:
        raise ConfigurationError(f"unknown fields for task {task_id}: {sorted(unknown)}")
    return {k: tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else v
            for k, v in params.items()}


def calibrate_power_cost(scenarios=("A", "B", "C"), slots: int = 2000, seed: int = 0) -> float:
    """Power cost per watt equal to median(served DoD * rate at top power) / top power.

    Runs a uniformly random scheduler at the top power level on each scenario
    and takes the median of the served device's DoD-weighted rate over slots
    where that product is positive.
    """
    from .env import derive_rng, STREAM_CALIBRATION

    model = RadioResourceScheduling()
    samples = []
    for i, sid in enumerate(scenarios):
        cfg = _table_config("C", sid)
        top = max(cfg.power_levels)
        rng = derive_rng(seed, STREAM_CALIBRATION, ord("C"), i)
        state = model.reset(cfg, rng)
        for _ in range(slots):
            dev = int(rng.integers(cfg.device_count))
            rate = shannon_rate(top, state.gain[dev], cfg)
            product = state.dod[dev] * rate
            if product > 0:
                samples.append(product)
            state = model.step(state, EdgeAction(dev, (top,)), rng).next_state
    top = max(_table_config("C", "A").power_levels)
    return float(np.median(samples) / top)
