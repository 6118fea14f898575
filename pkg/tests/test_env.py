import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedsched.env import (EdgeAction, TaskSpec, check_action, derive_rng, discounted_return,
                          env_reset, env_step, task_model)
from fedsched.errors import ConfigurationError, ContractViolation
from fedsched.tasks import load_scenario


def test_derive_rng_is_reproducible_and_separates_keys():
    a = derive_rng(7, 1, 3).random(5)
    b = derive_rng(7, 1, 3).random(5)
    c = derive_rng(7, 1, 4).random(5)
    d = derive_rng(8, 1, 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_derive_rng_rejects_negative_seed():
    with pytest.raises(ConfigurationError):
        derive_rng(-1)


def test_task_spec_validation():
    with pytest.raises(ConfigurationError):
        TaskSpec("X", 0)
    with pytest.raises(ConfigurationError):
        TaskSpec("X", 1, ((),))
    assert TaskSpec("X", 2, ((1.0, 2.0),)).decision_count == 1


def test_unknown_task_model():
    with pytest.raises(ConfigurationError):
        task_model("Z")


@pytest.mark.parametrize("task", ["A", "B", "C"])
def test_env_reset_deterministic(task):
    cfg = load_scenario(task, "B")
    s1, s2 = env_reset(cfg, 11), env_reset(cfg, 11)
    f = task_model(task).features
    assert np.array_equal(f(s1), f(s2))


@pytest.mark.parametrize("task", ["A", "B", "C"])
def test_step_does_not_mutate_input_state(task):
    cfg = load_scenario(task, "A")
    state = env_reset(cfg, 0)
    before = task_model(task).features(state).copy()
    decisions = (cfg.power_levels[-1],) if task == "C" else ()
    env_step(state, EdgeAction(0, decisions), np.random.default_rng(0))
    assert np.array_equal(task_model(task).features(state), before)


def test_check_action_contract():
    cfg = load_scenario("C", "A")
    state = env_reset(cfg, 0)
    with pytest.raises(ContractViolation):
        check_action(state, EdgeAction(cfg.device_count, (cfg.power_levels[0],)))
    with pytest.raises(ContractViolation):
        check_action(state, EdgeAction(0, ()))
    with pytest.raises(ContractViolation):
        check_action(state, EdgeAction(0, (0.123,)))
    check_action(state, EdgeAction(0, (cfg.power_levels[0],)))


def test_discounted_return_examples():
    assert discounted_return([1, 1, 1], 0.5) == pytest.approx(1.75)
    assert discounted_return([3.0, 9.0], 0.0) == 3.0
    assert discounted_return([], 0.9) == 0.0
    with pytest.raises(ValueError):
        discounted_return([1.0], 1.0)


@given(st.lists(st.floats(-100, 100), max_size=30), st.floats(0, 0.99))
def test_discounted_return_matches_closed_form(rewards, gamma):
    expected = sum(r * gamma ** t for t, r in enumerate(rewards))
    assert discounted_return(rewards, gamma) == pytest.approx(expected, abs=1e-9)
