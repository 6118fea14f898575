"""Reward normalization, smoothing, learning speed, and calibration runs."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .env import EdgeAction, STREAM_CALIBRATION, derive_rng, task_model
from .errors import ConfigurationError
from .tasks import load_scenario


def normalize_reward(raw, lo: float, hi: float, clamp: bool = True):
    """Affine map of ``[lo, hi]`` onto ``[0, 1]``, clamped by default."""
    if not hi > lo:
        raise ConfigurationError(f"normalization needs hi > lo, got lo={lo}, hi={hi}")
    out = (np.asarray(raw, dtype=float) - lo) / (hi - lo)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last ``min(i + 1, window)`` values."""
    if window < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(series, dtype=float)
    if len(x) == 0 or window == 1:
        return x.copy()
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def learning_speed(series: Sequence[float], window: int = 1, fraction: float = 0.9) -> int:
    """First 1-based round where the smoothed series reaches ``fraction`` of its final value.

    If the threshold is never met the run is censored and the series length is
    returned.
    """
    x = np.asarray(series, dtype=float)
    if len(x) == 0:
        raise ValueError("learning speed needs a non-empty series")
    smooth = moving_average(x, window)
    hits = np.flatnonzero(smooth >= fraction * smooth[-1])
    return int(hits[0]) + 1 if len(hits) else len(x)


def calibrate_reward_bounds(task_id: str, scenarios: Sequence[str] = ("A", "B", "C"),
                            slots: int = 5000, seed: int = 0,
                            catalog: dict | None = None) -> tuple[float, float]:
    """Min and max per-slot raw reward of a uniformly random scheduler.

    Each scenario runs one edge for ``slots`` slots, picking a device and
    every auxiliary decision uniformly at random.
    """
    model = task_model(task_id)
    lo, hi = np.inf, -np.inf
    for i, sid in enumerate(scenarios):
        cfg = load_scenario(task_id, sid, catalog)
        grids = model.spec(cfg).decision_grids
        rng = derive_rng(seed, STREAM_CALIBRATION, ord(task_id), i)
        state = model.reset(cfg, rng)
        for _ in range(slots):
            dev = int(rng.integers(cfg.device_count))
            decisions = tuple(g[int(rng.integers(len(g)))] for g in grids)
            tr = model.step(state, EdgeAction(dev, decisions), rng)
            lo, hi = min(lo, tr.reward), max(hi, tr.reward)
            state = tr.next_state
    return float(lo), float(hi)
