import math

import pytest
import yaml

from fedsched.config import (ArrivalEvent, config_from_dict, config_to_dict, desk_preset,
                             dump_config, load_config, paper_preset, preset)
from fedsched.errors import ConfigurationError


def test_paper_preset_matches_base_setup():
    cfg = paper_preset()
    assert cfg.rounds == 200 and cfg.slots_per_round == 250
    assert cfg.dqn.hidden == (300, 300, 300)
    assert cfg.dqn.learning_rate == 1e-5
    assert (cfg.dqn.batch_size, cfg.dqn.train_interval, cfg.dqn.target_update_interval) == (32, 50, 100)
    assert cfg.capacity.as_array().tolist() == [21.0] * 3
    for t in "ABC":
        assert cfg.tasks[t].scenarios == {"A": 7, "B": 7, "C": 6}
        assert cfg.tasks[t].demand.min_participants == 5
    assert [cfg.tasks[t].arrival_rate for t in "ABC"] == [0.7, 0.4, 0.4]
    assert sorted((a.task, a.scenario, a.count) for a in cfg.arrivals) == \
        sorted((t, s, 2) for t in "ABC" for s in "DE")
    assert {a.slot for a in cfg.arrivals} == {25_000}


def test_desk_preset_shape():
    cfg = desk_preset()
    assert cfg.rounds == 80 and cfg.slots_per_round == 100
    assert cfg.dqn.hidden == (64, 64)
    assert sum(sum(t.scenarios.values()) for t in cfg.tasks.values()) == 27
    assert cfg.capacity.bandwidth == pytest.approx(0.6 * 27)


def test_yaml_round_trip(tmp_path):
    cfg = desk_preset().replace(arrivals=[ArrivalEvent(4800, "B", "D", 1)],
                                scenarios={"C": {"F": {"distance": [30.0], "rate_requirement": [0.5]}}})
    path = tmp_path / "exp.yaml"
    dump_config(cfg, path)
    again = load_config(path)
    assert config_to_dict(again) == config_to_dict(cfg)
    assert math.isinf(again.partition("A").edges[0][-1])


def test_preset_key_and_overrides():
    cfg = config_from_dict({"preset": "desk", "policy": "no-fl", "rounds": 3,
                            "dqn": {"hidden": [8]}, "tasks": {"A": {"arrival_rate": 0.9}}})
    assert cfg.policy == "no-fl" and cfg.rounds == 3 and cfg.dqn.hidden == (8,)
    assert cfg.tasks["A"].arrival_rate == 0.9
    assert cfg.tasks["A"].scenarios == {"A": 3, "B": 3, "C": 3}
    assert list(cfg.tasks) == ["A"]


@pytest.mark.parametrize("data", [
    {"preset": "desk", "bogus": 1},
    {"preset": "desk", "dqn": {"lr": 0.1}},
    {"preset": "desk", "tasks": {"A": {"scenarios": {"A": 1}, "colour": "red"}}},
    {"preset": "desk", "capacity": {"disk": 3}},
    {"preset": "desk", "arrivals": [{"slot": 1, "task": "A", "scenario": "D", "when": 2}]},
    {"preset": "desk", "scenarios": {"Z": {}}},
])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigurationError):
        config_from_dict(data)


@pytest.mark.parametrize("data", [
    {"preset": "desk", "rounds": -1},
    {"preset": "desk", "slots_per_round": 0},
    {"preset": "desk", "policy": "fl-best"},
    {"preset": "desk", "tasks": {"A": {"scenarios": {"A": -1}}}},
    {"preset": "desk", "tasks": {"A": {"scenarios": {"Q": 1}}}},
    {"preset": "desk", "tasks": {"A": {"reward_bounds": [1.0, 1.0]}}},
    {"preset": "desk", "arrivals": [{"slot": 5, "task": "A", "scenario": "Q"}]},
    {"preset": "nope"},
    {"rounds": 3},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigurationError):
        config_from_dict(data)


def test_custom_scenario_usable_by_tasks():
    cfg = config_from_dict({
        "preset": "desk",
        "tasks": {"C": {"scenarios": {"F": 2}}},
        "scenarios": {"C": {"F": {"distance": [30, 60], "rate_requirement": [0.5, 0.5]}}},
    })
    assert cfg.tasks["C"].scenarios == {"F": 2}


def test_config_from_scratch():
    cfg = config_from_dict({
        "tasks": {"B": {"scenarios": {"A": 1}, "arrival_rate": 0.5, "reward_bounds": [-58, 75]}},
        "capacity": {"bandwidth": 2, "memory": 2, "compute": 2},
        "rounds": 1,
    })
    assert cfg.partition("B").shape == (3, 3)
    assert yaml.safe_load(yaml.safe_dump(config_to_dict(cfg)))["rounds"] == 1


def test_preset_lookup():
    assert preset("paper").rounds == 200
    with pytest.raises(ConfigurationError):
        preset("huge")
