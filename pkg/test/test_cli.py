import json
import logging
import os

import pytest

from mixflow.cli import build_parser, main, run_cli
from mixflow.config import reset_config
from mixflow.scenarios import load_spec, read_manifest
from mixflow.utils import read_csv_rows

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")


@pytest.fixture(autouse=True)
def clean_config():
    reset_config()
    yield
    reset_config()


@pytest.fixture
def small_manifest(tmp_path):
    recipes = tmp_path / "recipes.json"
    recipes.write_text(
        json.dumps(
            [{"name": "x4", "recipe": {"kind": "intersection", "legs": 4, "in_lanes": 1, "out_lanes": 1, "leg_length": 100.0}}]
        )
    )
    out = tmp_path / "scenarios"
    code = main(
        ["generate", "--out", str(out), "--recipes", str(recipes), "--demands", "1000", "2000",
         "--split-ratio", "0.5", "--episode-steps", "40"]
    )
    assert code == 0
    return out / "manifest.json"


### usage errors ###
@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["train", "--bogus"],
        ["explode"],
        ["train", "--steps", "0", "--scenarios", "scenarios/manifest.json"],
        ["train", "--episodes", "-1", "--scenarios", "scenarios/manifest.json"],
        ["generate"],
        ["generate", "--out", "x", "--demands", "6000"],
        ["eval", "--set", "nonsense=1", "--manifest", "m.json"],
        ["eval", "--set", "no-equals-sign", "--manifest", "m.json"],
        ["replay", "--report", "raw.csv"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_error_line_names_the_error(capsys):
    assert main(["train", "--steps", "0", "--scenarios", "m.json"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("mixflow: error: ValidationError: --steps")


def test_missing_file_exits_1(tmp_path, capsys):
    code = main(["convert", "--osm", str(tmp_path / "missing.osm"), "--node", "1", "--out", str(tmp_path / "o.json")])
    assert code == 1
    assert "FileNotFoundError" in capsys.readouterr().err


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for name in ("generate", "convert", "train", "eval", "replay"):
        assert name in text


### generate ###
def test_generate_default_corpus(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path)]) == 0
    entries = read_manifest(str(tmp_path / "manifest.json"))
    assert len(entries) == 48
    assert all(spec.tl_program is not None for _, spec in entries)
    assert "48 scenarios (38 train / 10 test)" in capsys.readouterr().out


def test_generate_with_seed_and_no_tl(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--seed", "4", "--no-tl", "--demands", "400"]) == 0
    entries = read_manifest(str(tmp_path / "manifest.json"))
    assert len(entries) == 12
    assert all(spec.tl_program is None for _, spec in entries)


def test_small_manifest(small_manifest):
    entries = read_manifest(str(small_manifest))
    assert sorted(s.name for _, s in entries) == ["x4_d1000", "x4_d2000"]
    assert all(s.episode_steps == 40 for _, s in entries)


### convert ###
def test_convert_golden_crossing(tmp_path, capsys):
    out = tmp_path / "crossing.scenario.json"
    code = main(["convert", "--osm", os.path.join(GOLDEN, "crossing.osm"), "--node", "100", "--out", str(out),
                 "--demand", "800"])
    assert code == 0
    spec = load_spec(str(out))
    assert spec.osm["node"] == "100"
    assert spec.demand == 800.0
    assert spec.tl_program is not None
    assert "12 connectors" in capsys.readouterr().out


def test_convert_unknown_node(tmp_path):
    code = main(["convert", "--osm", os.path.join(GOLDEN, "crossing.osm"), "--node", "999", "--out",
                 str(tmp_path / "x.json")])
    assert code == 2


### train / eval / replay ###
@pytest.mark.timeout(300)
def test_train_eval_replay(tmp_path, small_manifest):
    run = tmp_path / "run"
    code = main(
        ["train", "--scenarios", str(small_manifest), "--split", "test", "--episodes", "1", "--steps", "40",
         "--set", "warmup=10", "--set", "batch_size=4", "--set", "hidden_layers=[8]", "--set", "P_rv=[1.0]",
         "--out", str(run)]
    )
    assert code == 0
    assert len(read_csv_rows(str(run / "training_log.csv"))) == 1
    ckpt = run / "checkpoints" / "final.mxfw"
    assert ckpt.exists()

    results = tmp_path / "results"
    code = main(
        ["eval", "--manifest", str(small_manifest), "--controller", "notl", "policy", "--checkpoint", str(ckpt),
         "--set", "hidden_layers=[8]", "--p-rv", "1.0", "--seeds", "1", "--steps", "25", "--out", str(results)]
    )
    assert code == 0
    rows = read_csv_rows(str(results / "raw.csv"))
    assert len(rows) == 2 * 2
    assert {r["status"] for r in rows} == {"ok"}

    code = main(["replay", "--report", str(results / "raw.csv"), "--row", "1", "--out", str(tmp_path / "traj.csv")])
    assert code == 0
    assert (tmp_path / "traj.csv").exists()

    # replay reads the hyperparameters the eval ran with, never --set
    os.remove(results / "hyper.json")
    code = main(["replay", "--report", str(results / "raw.csv"), "--row", "1", "--out", str(tmp_path / "t2.csv")])
    assert code == 2


def test_eval_policy_without_checkpoint(small_manifest, tmp_path):
    code = main(["eval", "--manifest", str(small_manifest), "--controller", "policy", "--steps", "5",
                 "--out", str(tmp_path)])
    assert code == 2


def test_config_file_supplies_seed(small_manifest, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 11, "seeds": 1}))
    results = tmp_path / "results"
    code = main(["eval", "--config", str(cfg), "--manifest", str(small_manifest), "--steps", "5", "--out", str(results)])
    assert code == 0
    rows = read_csv_rows(str(results / "raw.csv"))
    assert len(rows) == 2


@pytest.mark.timeout(300)
def test_train_calibrate_wait(tmp_path, small_manifest):
    run = tmp_path / "run"
    code = main(
        ["train", "--scenarios", str(small_manifest), "--split", "test", "--episodes", "1", "--steps", "40",
         "--calibrate-wait", "--set", "calibration_seeds=1", "--set", "warmup=10", "--set", "batch_size=4",
         "--set", "hidden_layers=[8]", "--set", "P_rv=[1.0]", "--out", str(run)]
    )
    assert code == 0
    rows = read_csv_rows(str(run / "wait_bounds.csv"))
    assert len(rows) == 1
    assert float(rows[0]["W_l"]) <= float(rows[0]["W_h"])


### entry point ###
def test_run_cli_keeps_package_logging(monkeypatch, tmp_path, small_manifest):
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    monkeypatch.setattr("sys.argv", ["mixflow", "eval", "--manifest", str(small_manifest), "--steps", "5",
                                     "--seeds", "1", "--out", str(tmp_path / "results")])
    with pytest.raises(SystemExit) as info:
        run_cli()
    assert info.value.code == 0
    assert root.handlers == handlers
    assert root.level == level
