import os

import numpy as np
import pandas as pd
import pytest

from mixflow.checkpoint import save_checkpoint
from mixflow.config import hyperparameters
from mixflow.controllers import NoTLController
from mixflow.errors import ConfigurationError, ValidationError
from mixflow.evaluation import (
    RAW_HEADER,
    aggregate,
    calibrate_wait_bounds,
    make_controller,
    load_sweep_hyper,
    read_raw,
    replay,
    report_from_state,
    report_row,
    run_episode,
    summarize,
    sweep,
)
from mixflow.network import Route
from mixflow.sac import SacParams
from mixflow.scenarios import (
    STATIC_TL,
    ScenarioSpec,
    build_graph,
    generate_manifest,
    read_manifest,
    write_manifest,
)
from mixflow.sim import HV, SimState, VehicleState
from mixflow.utils import derive_seed, read_csv_rows, rng_stream

X4 = {"kind": "intersection", "legs": 4, "in_lanes": 1, "out_lanes": 1, "leg_length": 100.0}
R3 = {"kind": "roundabout", "legs": 3, "ring_lanes": 1, "radius": 15.0, "leg_length": 100.0}


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenarios")
    train, test = generate_manifest(
        [{"name": "x4", "recipe": X4}, {"name": "r3", "recipe": R3}],
        [1000],
        split_ratio=1.0,
        episode_steps=50,
        tl_program=STATIC_TL,
    )
    return write_manifest(str(out), train, test)


@pytest.fixture(scope="module")
def swept(manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    result = sweep(
        read_manifest(manifest), ["notl", "tl"], p_grid=[0.5, 1.0], seeds=2, steps=50, out_dir=str(out)
    )
    return result, out


### metrics ###
def test_report_from_state_hand_computed():
    state = SimState.create(3)
    state.exited_total = 12
    state.spawned_total = 15
    state.collisions_total = 2
    state.finished_waits = [2.0, 4.0]
    state.vehicles["veh000001"] = VehicleState("veh000001", HV, Route(("a",)), 0, "a_0", 0.0, 0.0, wait=6.0)
    r = report_from_state(state, 100, "s", "notl", 0.5, 1000.0, wait_trace=[1.0, 3.0])
    assert r.throughput_rate == pytest.approx(0.12)
    assert r.throughput_e3 == pytest.approx(120.0)
    assert r.avg_wait == pytest.approx(4.0)
    assert r.avg_wait_time_averaged == pytest.approx(2.0)
    assert r.collisions_total == 2
    assert r.vehicles_live_end == 1
    assert r.seed == 3
    fields = report_row(r)
    assert fields["throughput_rate"] == repr(r.throughput_rate)


def test_zero_demand_episode():
    spec = ScenarioSpec(name="x4", demand=1000.0, recipe=dict(X4))
    r = run_episode(spec, NoTLController(), seed=0, steps=30, demand=0.0)
    assert r.throughput_rate == 0.0
    assert r.avg_wait == 0.0
    assert r.vehicles_spawned == 0
    with pytest.raises(ValidationError):
        run_episode(spec, NoTLController(), seed=0, steps=0)


def test_episode_is_deterministic():
    spec = ScenarioSpec(name="x4", demand=3000.0, recipe=dict(X4))
    a = run_episode(spec, NoTLController(), seed=7, steps=80)
    b = run_episode(spec, NoTLController(), seed=7, steps=80)
    assert a == b
    assert a.vehicles_spawned > 0


### controllers ###
def test_make_controller_errors():
    spec = ScenarioSpec(name="x4", demand=1000.0, recipe=dict(X4))
    g = build_graph(spec)
    hyper = hyperparameters()
    with pytest.raises(ConfigurationError):
        make_controller("tl", spec, g, hyper)
    with pytest.raises(ConfigurationError):
        make_controller("policy", spec, g, hyper)
    with pytest.raises(ConfigurationError):
        make_controller("greedy", spec, g, hyper)
    small = SacParams.init(20, [4], rng_stream(0, "init")).actor
    with pytest.raises(ConfigurationError):
        make_controller("policy", spec, g, hyper, actor=small)


### sweep ###
def test_sweep_rows(swept):
    result, out = swept
    raw = result.raw
    assert list(raw.columns) == list(RAW_HEADER)
    assert len(raw) == 2 * 2 * 2 * 2
    assert (raw["status"] == "ok").all()
    assert list(raw["episode"]) == list(range(16))
    for name in ("raw", "aggregate", "summary"):
        assert os.path.exists(out / f"{name}.csv")
    print("[SUCCESS] 16 episodes evaluated")


def test_seeds_shared_across_controllers(swept):
    raw = swept[0].raw
    for scenario, part in raw.groupby("scenario"):
        by_ctl = {c: sorted(set(p["seed"])) for c, p in part.groupby("controller")}
        assert by_ctl["notl"] == by_ctl["tl"]
        assert by_ctl["notl"] == sorted({derive_seed(0, f"{scenario}:{k}") for k in range(2)})


def test_aggregate_and_summary_shapes(swept):
    result, _ = swept
    assert len(result.aggregate) == 2 * 2 * 2
    assert (result.aggregate["n"] == 2).all()
    assert set(result.summary["subset"]) == {"all", "intersection", "roundabout"}
    all_rows = result.summary[result.summary["subset"] == "all"]
    assert (all_rows["n"] == 4).all()
    assert len(result.summary) == 3 * 2 * 2


def test_re_aggregation_from_raw_csv(swept):
    result, out = swept
    raw = read_raw(str(out / "raw.csv"))
    pd.testing.assert_frame_equal(aggregate(raw), result.aggregate, check_dtype=False)
    pd.testing.assert_frame_equal(summarize(raw), result.summary, check_dtype=False)


def test_summary_mean_matches_raw(swept):
    result, _ = swept
    raw = result.raw
    part = raw[(raw["topology"] == "roundabout") & (raw["controller"] == "tl") & (raw["P_rv"] == 1.0)]
    row = result.summary[
        (result.summary["subset"] == "roundabout")
        & (result.summary["controller"] == "tl")
        & (result.summary["P_rv"] == 1.0)
    ].iloc[0]
    assert row["avg_wait_mean"] == pytest.approx(part["avg_wait"].mean())
    assert row["avg_wait_std"] == pytest.approx(part["avg_wait"].std(ddof=1))


def test_failed_episodes_are_recorded(tmp_path):
    spec = ScenarioSpec(name="x4_nosignal", demand=1000.0, recipe=dict(X4))
    entries = [({"name": spec.name, "path": str(tmp_path / "x4.scenario.json"), "split": "test"}, spec)]
    result = sweep(entries, ["notl", "tl"], seeds=1, steps=20)
    statuses = dict(zip(result.raw["controller"], result.raw["status"]))
    assert statuses == {"notl": "ok", "tl": "failed: ConfigurationError"}
    assert np.isnan(result.raw.loc[result.raw["controller"] == "tl", "avg_wait"]).all()
    assert set(result.aggregate["controller"]) == {"notl"}


def test_sweep_argument_errors(manifest):
    entries = read_manifest(manifest)
    with pytest.raises(ConfigurationError):
        sweep(entries, ["policy"], seeds=1, steps=10)
    with pytest.raises(ConfigurationError):
        sweep(entries, ["fixed"], seeds=1, steps=10)
    with pytest.raises(ValidationError):
        sweep(entries, ["notl"], seeds=0, steps=10)
    with pytest.raises(ValidationError):
        sweep([], ["notl"])


def test_policy_sweep_records_checkpoint(manifest, tmp_path):
    ckpt = str(tmp_path / "policy.mxfw")
    save_checkpoint(ckpt, SacParams.init(60, [8], rng_stream(0, "init")))
    result = sweep(read_manifest(manifest), ["policy"], p_grid=[1.0], seeds=1, steps=30, threads=2, checkpoint=ckpt)
    assert (result.raw["status"] == "ok").all()
    assert (result.raw["checkpoint"] == ckpt).all()


### replay ###
def test_replay_reproduces_metrics(swept, tmp_path):
    _, out = swept
    raw = read_raw(str(out / "raw.csv"))
    row = 5
    traj = tmp_path / "replay.csv"
    report = replay(str(out / "raw.csv"), row, str(traj))
    rec = raw.iloc[row]
    assert report.scenario == rec["scenario"]
    assert report.throughput_rate == rec["throughput_rate"]
    assert report.avg_wait == rec["avg_wait"]
    assert report.collisions_total == rec["collisions_total"]
    assert traj.exists()
    steps = {r["step"] for r in read_csv_rows(str(traj))}
    assert steps <= {str(s) for s in range(1, 51)}


def test_replay_uses_the_sweep_hyperparameters(manifest, tmp_path):
    hyper = hyperparameters({"dt": 0.5, "d_f": 40.0})
    out = tmp_path / "eval"
    result = sweep(
        read_manifest(manifest), ["notl", "tl"], p_grid=[0.5], seeds=1, steps=40, out_dir=str(out), hyper=hyper
    )
    assert load_sweep_hyper(str(out / "raw.csv")) == hyper
    raw = read_raw(str(out / "raw.csv"))
    for row in range(len(raw)):
        report = replay(str(out / "raw.csv"), row, str(tmp_path / f"traj{row}.csv"))
        rec = raw.iloc[row]
        assert report.throughput_rate == rec["throughput_rate"]
        assert report.avg_wait == rec["avg_wait"]
        assert report.collisions_total == rec["collisions_total"]
        assert report.vehicles_spawned == rec["vehicles_spawned"]
    assert len(raw) == len(result.raw)

    os.remove(out / "hyper.json")
    with pytest.raises(ConfigurationError):
        replay(str(out / "raw.csv"), 0, str(tmp_path / "r.csv"))
    (out / "hyper.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        replay(str(out / "raw.csv"), 0, str(tmp_path / "r.csv"))


def test_replay_row_out_of_range(swept, tmp_path):
    _, out = swept
    with pytest.raises(ValidationError):
        replay(str(out / "raw.csv"), 16, str(tmp_path / "r.csv"))
    with pytest.raises(ValidationError):
        replay(str(out / "raw.csv"), -1, str(tmp_path / "r.csv"))


### waiting-band calibration ###
def test_calibration_from_traffic_light_runs():
    spec = ScenarioSpec(name="x4_d3000", demand=3000.0, recipe=dict(X4), tl_program=dict(STATIC_TL))
    hyper = hyperparameters({"calibration_seeds": 2})
    bounds = calibrate_wait_bounds([spec, spec], hyper, seed=4, steps=150)
    assert list(bounds) == ["x4_d3000"]
    b = bounds["x4_d3000"]
    assert b.source == "tl"
    assert 0.0 <= b.W_l <= b.W_h
    assert b.W_h > 0.0
    seeds = [derive_seed(4, f"calibrate:x4_d3000:{k}") for k in range(2)]
    g = build_graph(spec)
    waits = [
        run_episode(spec, make_controller("tl", spec, g, hyper), s, 150, g, hyper, p_rv=0.0).avg_wait_time_averaged
        for s in seeds
    ]
    assert (b.W_l, b.W_h) == (min(waits), max(waits))
    assert b.row()[0] == "x4_d3000" and b.row()[3] == "tl"


def test_calibration_keeps_configured_band_without_signals():
    spec = ScenarioSpec(name="x4_nosignal", demand=1000.0, recipe=dict(X4))
    hyper = hyperparameters({"W_l": 12.0, "W_h": 18.0, "calibration_seeds": 1})
    b = calibrate_wait_bounds([spec], hyper, steps=20)["x4_nosignal"]
    assert (b.W_l, b.W_h, b.source) == (12.0, 18.0, "default")
    quiet = ScenarioSpec(name="x4_quiet", demand=0.0, recipe=dict(X4), tl_program=dict(STATIC_TL))
    b = calibrate_wait_bounds([quiet], hyper, steps=20)["x4_quiet"]
    assert (b.W_l, b.W_h, b.source) == (12.0, 18.0, "default")


### acceptance ###
@pytest.mark.slow
@pytest.mark.timeout(1800)
def test_signalized_crossing_has_no_collisions():
    spec = ScenarioSpec(
        name="x4_2x2_d400",
        demand=400.0,
        recipe={"kind": "intersection", "legs": 4, "in_lanes": 2, "out_lanes": 2, "leg_length": 200.0},
        tl_program=dict(STATIC_TL),
    )
    g = build_graph(spec)
    hyper = hyperparameters()
    for k in range(3):
        ctl = make_controller("tl", spec, g, hyper)
        r = run_episode(spec, ctl, seed=derive_seed(0, f"{spec.name}:{k}"), steps=3000, g=g, p_rv=0.0)
        assert r.collisions_total == 0
        assert r.vehicles_exited > 0
