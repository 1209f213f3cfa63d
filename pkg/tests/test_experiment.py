import csv
import io
from pathlib import Path

import pytest

from sbrl.experiment import (
    ExperimentConfig,
    RunResult,
    build_report,
    compare,
    config_from_pairs,
    dump_config,
    load_config,
    parse_config_text,
    run_training,
    train_mode,
    validate,
)
from sbrl.netsim import InvalidConfig
from sbrl.trainer import EpisodeRecord, TrainLog

MODELS = Path(__file__).resolve().parents[1] / "src" / "sbrl" / "models"


def small(**extra):
    base = dict(training__episodes=40, training__seeds=(0, 1), link__episode_length=50)
    base.update(extra)
    return ExperimentConfig().replace(**base)


def read_csv(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.training.episodes == 2000 and cfg.training.seeds == (0, 1, 2, 3, 4)
    assert cfg.penalty_config().alpha == 0.0 and cfg.penalty_config().delta == 4.5
    assert cfg.link_config().episode_length == 400
    assert cfg.training.window == 20
    validate(cfg)


def test_parse_config_text():
    cfg = parse_config_text(
        "# experiment\n"
        "link.capacity = 12\n"
        "penalty.delta=2.5\n"
        "training.seeds = 3, 4\n"
        "scenario.reset_events = KeepRate\n"
        "scenario.k = 4   # longer runs allowed\n"
    )
    assert cfg.link.capacity == 12.0
    assert cfg.penalty.delta == 2.5
    assert cfg.training.seeds == (3, 4)
    assert cfg.scenario.reset_events == ("KeepRate",)
    assert cfg.scenario.k == 4


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("link.bandwidth = 3\n", "link.bandwidth"),
        ("nosection = 3\n", "nosection"),
        ("linky.capacity = 3\n", "linky.capacity"),
        ("link.capacity = fast\n", "link.capacity"),
        ("link.capacity = 1\nlink.capacity = 2\n", "duplicate"),
        ("just words\n", "key = value"),
        ("training.episodes = nan\n", "training.episodes"),
    ],
)
def test_bad_config_names_the_key(text, fragment):
    with pytest.raises(InvalidConfig, match=fragment):
        parse_config_text(text)


def test_dump_and_reload_round_trip(tmp_path):
    cfg = small(penalty__alpha=-0.25, scenario__policy="random")
    path = tmp_path / "c.txt"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_every_dumped_key_is_accepted():
    pairs = {}
    for line in dump_config(ExperimentConfig()).splitlines():
        key, _, value = line.partition(" = ")
        pairs[key] = value
    assert config_from_pairs(pairs) == ExperimentConfig()


@pytest.mark.parametrize(
    "override",
    [
        {"training__episodes": 0},
        {"training__seeds": ()},
        {"training__seeds": (1, 1)},
        {"training__window": 0},
        {"scenario__k": 1},
        {"scenario__policy": "fastest"},
        {"scenario__kind": "magic"},
        {"link__capacity": 0.0},
        {"penalty__delta": -1.0},
        {"training__gamma": 2.0},
    ],
)
def test_validate_rejects(override):
    cfg = ExperimentConfig().replace(**override)
    with pytest.raises(InvalidConfig):
        validate(cfg)
        cfg.programs()


def test_dsl_scenario_kind():
    cfg = small(scenario__kind="dsl", scenario__path=str(MODELS / "avoid3.sbs"))
    assert [p.name for p in cfg.programs()] == ["avoid_3_IncreaseRate"]
    with pytest.raises(InvalidConfig):
        small(scenario__kind="dsl").programs()


def test_dsl_model_matches_factory_in_training():
    a = run_training(small(), "shaped", 0).log.to_csv()
    b = run_training(small(scenario__kind="dsl", scenario__path=str(MODELS / "avoid3.sbs")), "shaped", 0).log.to_csv()
    assert a == b


def test_train_mode_outputs(tmp_path):
    train_mode(small(), "baseline", tmp_path / "b")
    train_mode(small(), "shaped", tmp_path / "s")
    for mode, d in (("baseline", "b"), ("shaped", "s")):
        files = sorted(p.name for p in (tmp_path / d).iterdir())
        assert files == sorted([
            f"{mode}_seed0.csv", f"{mode}_seed1.csv",
            f"qtable_{mode}_seed0.npy", f"qtable_{mode}_seed1.npy",
            "summary.csv", "config.txt",
        ])
        summary = read_csv(tmp_path / d / "summary.csv")
        assert [r["seed"] for r in summary] == ["0", "1"]
    for seed in (0, 1):
        base = read_csv(tmp_path / "b" / f"baseline_seed{seed}.csv")
        shaped = read_csv(tmp_path / "s" / f"shaped_seed{seed}.csv")
        assert len(base) == len(shaped) == 40
        assert all(r["blocked"] == "0" for r in base)
        assert all(r["blocked"] == r["violations"] for r in shaped)
        assert any(r["blocked"] != "0" for r in shaped)
        assert [r["episode"] for r in base] == [str(i) for i in range(40)]


def test_insufficient_data(tmp_path):
    report = compare(small(training__episodes=1), tmp_path)
    assert report.insufficient_data and report.exit_code == 3
    verdict = (tmp_path / "verdict.txt").read_text()
    assert verdict.startswith("insufficient-data")
    assert verdict.rstrip().endswith("verdict: insufficient-data")
    assert (tmp_path / "compare.csv").exists()


def synthetic(mode, seed, rewards, violations):
    log = TrainLog([EpisodeRecord(i, r, r, v, 0, 100) for i, (r, v) in enumerate(zip(rewards, violations))], seed)
    return RunResult(mode, seed, log, None)


def test_report_flags_shaped_non_convergence():
    cfg = small(training__seeds=(0,), training__window=5, training__episodes=40)
    base = synthetic("baseline", 0, [float(i) for i in range(40)], [10] * 40)
    shaped = synthetic("shaped", 0, [1.0] * 40, [0] * 40)
    report = build_report(cfg, [base], [shaped])
    assert report.rows[0].shaped.convergence is None
    failed = {c.name for c in report.criteria if not c.passed}
    assert "shaped_converged" in failed and "shaped_converges_not_earlier" in failed
    assert report.exit_code == 1
    assert "NotConverged" in report.to_csv()


def test_report_passes_on_clear_win():
    cfg = small(training__seeds=(0, 1), training__window=5, training__episodes=40)
    ramp = [float(min(i, 30)) for i in range(40)]
    slow = [float(min(i, 30)) if i >= 5 else 0.0 for i in range(40)]
    report = build_report(
        cfg,
        [synthetic("baseline", s, ramp, [10] * 40) for s in (0, 1)],
        [synthetic("shaped", s, slow, [0] * 40) for s in (0, 1)],
    )
    assert report.passed and report.exit_code == 0
    assert report.rows[0].reduction == float("inf")


def test_compare_files_and_csv_shape(tmp_path):
    report = compare(small(), tmp_path)
    assert report.exit_code in (0, 1)
    rows = read_csv(tmp_path / "compare.csv")
    assert [r["seed"] for r in rows] == ["0", "1", "mean"]
    assert set(rows[0]) == {
        "seed",
        "baseline_violation_frequency",
        "shaped_violation_frequency",
        "reduction_ratio",
        "baseline_mean_candidate_reward",
        "shaped_mean_candidate_reward",
        "baseline_convergence_episode",
        "shaped_convergence_episode",
    }
    for name in ("baseline", "shaped", "compare.csv", "verdict.txt", "config.txt"):
        assert (tmp_path / name).exists()
    names = [line.split(":")[0].split(" ", 1)[1] for line in report.verdict_text().splitlines()[:-1]]
    assert names == [
        "baseline_violates",
        "violation_reduction",
        "reward_retention",
        "shaped_converges_not_earlier",
        "shaped_converged",
    ]


def test_compare_is_byte_identical(tmp_path):
    compare(small(), tmp_path / "a")
    compare(small(), tmp_path / "b")
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files and a_files
    for rel in a_files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert b"\r\n" not in (tmp_path / "a" / "compare.csv").read_bytes()
