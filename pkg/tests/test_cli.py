import yaml

from fedsched.cli import build_parser, main, resolve_config


def test_defaults_to_desk_preset():
    cfg = resolve_config(build_parser().parse_args([]))
    assert cfg.rounds == 80 and cfg.dqn.hidden == (64, 64)


def test_overrides_take_precedence(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"preset": "desk", "seed": 4, "rounds": 9, "policy": "bench"}))
    args = build_parser().parse_args(["--config", str(path), "--seed", "7", "--policy", "fl-rr"])
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.rounds, cfg.policy) == (7, 9, "fl-rr")


def test_config_layered_over_preset_flag(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("rounds: 5\n")
    cfg = resolve_config(build_parser().parse_args(["--config", str(path), "--preset", "paper"]))
    assert cfg.rounds == 5 and cfg.slots_per_round == 250


def test_dump_config_round_trips(capsys):
    assert main(["--preset", "paper", "--dump-config"]) == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert data["rounds"] == 200 and data["dqn"]["hidden"] == [300, 300, 300]


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("preset: desk\nwhatever: 1\n")
    assert main(["--config", str(path)]) == 2
    assert "whatever" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.yaml")]) == 2


def test_short_run_writes_outputs(tmp_path, capsys):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({
        "preset": "desk", "slots_per_round": 10, "dqn": {"hidden": [8]},
        "tasks": {"B": {"scenarios": {"A": 1, "B": 1}}},
    }))
    out = tmp_path / "run"
    assert main(["--config", str(path), "--rounds", "2", "--out", str(out), "--policy", "no-fl"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "policy,task,avg_participants,avg_normalized_reward,learning_speed"
    assert printed[1].startswith("no-fl,B,0.0,")
    assert printed[-1].startswith("final-quartile sum of normalized rewards:")
    assert sorted(p.name for p in out.iterdir()) == [
        "participants.csv", "rewards.csv", "selection.csv", "summary.csv"]
