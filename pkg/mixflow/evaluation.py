"""
mixflow.evaluation

Episode runner, metrics and penetration/demand sweeps.

Usage:
    from mixflow.evaluation import sweep
    from mixflow.scenarios import read_manifest

    entries = read_manifest('scenarios/manifest.json', split='test')
    result = sweep(entries, ['notl', 'tl'], p_grid=[0.4, 0.7, 1.0], seeds=5,
                   out_dir='results/demo')
    print(result.summary)

Outputs under out_dir: raw.csv (one row per episode), aggregate.csv (mean and
std per scenario, controller and P_rv), summary.csv (the same over the whole
set and the intersection and roundabout subsets), optional SVG plots and
per-episode trajectory CSVs.
"""
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mixflow.checkpoint import load_checkpoint
from mixflow.config import dumps_hyper, hyper_from_document, hyperparameters
from mixflow.controllers import DETERMINISTIC, Controller, NoTLController, PolicyController, TLController
from mixflow.decorators import log_exceptions, measure_time
from mixflow.errors import ConfigurationError, MixflowError, ValidationError
from mixflow.mdp import ObsConfig, mean_wait
from mixflow.network.graph import NetworkGraph
from mixflow.scenarios import ScenarioSpec, build_graph, load_spec, resolve_program
from mixflow.sim import SimConfig, SimState, Simulator, TrajectoryWriter, kinematics
from mixflow.utils import derive_seed, env_threads, format_float, read_csv_rows

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    _HAS_MPL = True
except ImportError:
    _HAS_MPL = False

logger = logging.getLogger(__name__)

CONTROLLERS = ("notl", "tl", "policy")
SUBSETS = ("all", "intersection", "roundabout")
METRICS = ("throughput_rate", "throughput_e3", "avg_wait", "avg_wait_time_averaged", "collisions_total")
RAW_HEADER = (
    "episode",
    "scenario",
    "scenario_path",
    "topology",
    "controller",
    "checkpoint",
    "P_rv",
    "seed",
    "steps",
    "demand",
    "throughput_rate",
    "throughput_e3",
    "avg_wait",
    "avg_wait_time_averaged",
    "collisions_total",
    "vehicles_spawned",
    "vehicles_exited",
    "status",
)
STATUS_OK = "ok"
# resolved hyperparameters of a sweep, next to its raw.csv
HYPER_NAME = "hyper.json"


@dataclass
class MetricsReport:
    scenario: str
    controller: str
    p_rv: float
    seed: int
    steps: int
    demand: float
    throughput_rate: float
    avg_wait: float
    avg_wait_time_averaged: float
    collisions_total: int
    vehicles_spawned: int
    vehicles_exited: int
    vehicles_live_end: int
    topology: str = "intersection"

    @property
    def throughput_e3(self) -> float:
        return self.throughput_rate * 1e3


def report_from_state(
    state: SimState,
    steps: int,
    scenario: str,
    controller: str,
    p_rv: float,
    demand: float,
    wait_trace: Sequence[float] = (),
    topology: str = "intersection",
) -> MetricsReport:
    """
    Metrics of a finished episode. avg_wait averages final waits over every
    spawned vehicle, live ones included; the time-averaged variant averages
    the per-step live mean.
    """
    waits = list(state.finished_waits) + [v.wait for v in state.vehicles.values()]
    return MetricsReport(
        scenario=scenario,
        controller=controller,
        p_rv=p_rv,
        seed=state.seed,
        steps=steps,
        demand=demand,
        throughput_rate=state.exited_total / steps if steps else 0.0,
        avg_wait=float(np.mean(waits)) if waits else 0.0,
        avg_wait_time_averaged=float(np.mean(wait_trace)) if len(wait_trace) else 0.0,
        collisions_total=state.collisions_total,
        vehicles_spawned=state.spawned_total,
        vehicles_exited=state.exited_total,
        vehicles_live_end=len(state.vehicles),
        topology=topology,
    )


# -----------------------------
# Controllers
# -----------------------------


def make_controller(
    name: str,
    spec: ScenarioSpec,
    g: NetworkGraph,
    hyper: Mapping,
    actor=None,
    mode: str = DETERMINISTIC,
) -> Controller:
    """A fresh controller for one episode; raises ConfigurationError on a spec mismatch."""
    if name == "notl":
        return NoTLController()
    if name == "tl":
        program = resolve_program(spec, g)
        if program is None:
            raise ConfigurationError(f"Scenario {spec.name} has no traffic-light program")
        return TLController(program, g)
    if name == "policy":
        if actor is None:
            raise ConfigurationError("The policy controller needs a checkpoint")
        obs_cfg = ObsConfig.from_hyper(hyper)
        if actor.sizes[0] != obs_cfg.size:
            raise ConfigurationError(
                f"Checkpoint expects {actor.sizes[0]} inputs, observations have {obs_cfg.size}"
            )
        return PolicyController(
            actor, obs_cfg, float(hyper["a_max"]), mode,
            control_zone_radius=float(hyper["control_zone_radius"]),
        )
    raise ConfigurationError(f"Unknown controller {name!r}; expected one of {', '.join(CONTROLLERS)}")


# -----------------------------
# Episodes
# -----------------------------


def run_episode(
    spec: ScenarioSpec,
    controller: Controller,
    seed: int,
    steps: int = 3000,
    g: Optional[NetworkGraph] = None,
    hyper: Optional[Mapping] = None,
    p_rv: Optional[float] = None,
    demand: Optional[float] = None,
    base_dir: str = ".",
    trajectory: Optional[str] = None,
) -> MetricsReport:
    """One deterministic episode of `steps` steps; metrics per MetricsReport."""
    if steps < 1:
        raise ValidationError("steps", "must be >= 1")
    hyper = hyper or hyperparameters()
    if g is None:
        g = build_graph(spec, base_dir)
    p_rv = spec.p_rv if p_rv is None else p_rv
    demand = spec.demand if demand is None else demand
    sim = Simulator(g, SimConfig.from_hyper(hyper, demand, p_rv), gate=controller.gate)
    state = SimState.create(seed)
    trace: List[float] = []
    writer = TrajectoryWriter(trajectory) if trajectory else None
    needs_snapshot = isinstance(controller, PolicyController)
    try:
        for _ in range(steps):
            snap = kinematics(state, g) if needs_snapshot else None
            state, _ = sim.step(state, controller.commands(state, g, snap))
            trace.append(mean_wait(state))
            if writer:
                writer.write(state)
    finally:
        if writer:
            writer.close()
    report = report_from_state(state, steps, spec.name, controller.name, p_rv, demand, trace, spec.topology)
    logger.debug(
        f"[EVAL] {spec.name} {controller.name} P_rv={p_rv:g} seed={seed}: "
        f"throughput={report.throughput_rate:.4f} wait={report.avg_wait:.2f} collisions={report.collisions_total}"
    )
    return report


# -----------------------------
# Waiting-time calibration
# -----------------------------


@dataclass(frozen=True)
class WaitBounds:
    scenario: str
    W_l: float
    W_h: float
    source: str

    def row(self) -> List[str]:
        return [self.scenario, format_float(self.W_l), format_float(self.W_h), self.source]


WAIT_BOUNDS_HEADER = ("scenario", "W_l", "W_h", "source")


def calibrate_wait_bounds(
    specs: Sequence[ScenarioSpec],
    hyper: Mapping,
    seed: int = 0,
    steps: Optional[int] = None,
    base_dir: str = ".",
    graphs: Optional[Dict[str, NetworkGraph]] = None,
) -> Dict[str, WaitBounds]:
    """
    Per-scenario waiting band for the reward: every scenario runs
    calibration_seeds episodes under its traffic-light program with HVs only,
    and W_l/W_h are the smallest and largest time-averaged mean wait seen.
    Scenarios without a program, or where nobody waited, keep hyper's band.
    """
    steps = int(steps if steps is not None else hyper["episode_steps"])
    graphs = graphs if graphs is not None else {}
    out: Dict[str, WaitBounds] = {}
    for spec in specs:
        if spec.name in out:
            continue
        fallback = WaitBounds(spec.name, float(hyper["W_l"]), float(hyper["W_h"]), "default")
        if spec.name not in graphs:
            graphs[spec.name] = build_graph(spec, base_dir)
        g = graphs[spec.name]
        waits = []
        try:
            for k in range(int(hyper["calibration_seeds"])):
                ctl = make_controller("tl", spec, g, hyper)
                report = run_episode(
                    spec, ctl, derive_seed(seed, f"calibrate:{spec.name}:{k}"), steps, g, hyper, p_rv=0.0
                )
                waits.append(report.avg_wait_time_averaged)
        except ConfigurationError as e:
            logger.warning(f"[EVAL] {spec.name}: no traffic-light calibration ({e}); keeping W_l/W_h")
            out[spec.name] = fallback
            continue
        if max(waits) <= 0.0:
            logger.warning(f"[EVAL] {spec.name}: no waiting under traffic lights; keeping W_l/W_h")
            out[spec.name] = fallback
            continue
        out[spec.name] = WaitBounds(spec.name, float(min(waits)), float(max(waits)), "tl")
        logger.info(f"[EVAL] {spec.name}: W_l={min(waits):.2f} W_h={max(waits):.2f}")
    return out


# -----------------------------
# Sweeps
# -----------------------------


@dataclass(frozen=True)
class Job:
    episode: int
    spec: ScenarioSpec
    scenario_path: str
    controller: str
    p_rv: float
    seed: int


@dataclass
class SweepResult:
    raw: pd.DataFrame
    aggregate: pd.DataFrame
    summary: pd.DataFrame
    paths: Dict[str, str]


def _raw_row(job: Job, report: Optional[MetricsReport], steps: int, demand: float, checkpoint: str, status: str) -> Dict[str, Any]:
    row = {
        "episode": job.episode,
        "scenario": job.spec.name,
        "scenario_path": job.scenario_path,
        "topology": job.spec.topology,
        "controller": job.controller,
        "checkpoint": checkpoint,
        "P_rv": job.p_rv,
        "seed": job.seed,
        "steps": steps,
        "demand": demand,
        "status": status,
    }
    if report is None:
        row.update({k: math.nan for k in METRICS})
        row.update(vehicles_spawned=-1, vehicles_exited=-1)
    else:
        row.update(
            throughput_rate=report.throughput_rate,
            throughput_e3=report.throughput_e3,
            avg_wait=report.avg_wait,
            avg_wait_time_averaged=report.avg_wait_time_averaged,
            collisions_total=report.collisions_total,
            vehicles_spawned=report.vehicles_spawned,
            vehicles_exited=report.vehicles_exited,
        )
    return row


def _fold(df: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    ok = df[df["status"] == STATUS_OK].astype({m: float for m in METRICS})
    grouped = ok.groupby(keys, sort=True)
    means = grouped[list(METRICS)].mean().add_suffix("_mean")
    stds = grouped[list(METRICS)].std(ddof=1).fillna(0.0).add_suffix("_std")
    return grouped.size().to_frame("n").join(means).join(stds).reset_index()


def aggregate(raw: pd.DataFrame) -> pd.DataFrame:
    """Mean and std over seeds per (scenario, topology, controller, P_rv)."""
    return _fold(raw, ["scenario", "topology", "controller", "P_rv"])


def summarize(raw: pd.DataFrame) -> pd.DataFrame:
    """Mean and std over episodes per (subset, controller, P_rv)."""
    frames = []
    for subset in SUBSETS:
        part = raw if subset == "all" else raw[raw["topology"] == subset]
        if part.empty:
            continue
        table = _fold(part, ["controller", "P_rv"])
        if table.empty:
            continue
        table.insert(0, "subset", subset)
        frames.append(table)
    if not frames:
        return pd.DataFrame(columns=["subset", "controller", "P_rv", "n"])
    return pd.concat(frames, ignore_index=True)


def read_raw(path: str) -> pd.DataFrame:
    """raw.csv with floats read back bit-exactly."""
    df = pd.read_csv(path, float_precision="round_trip", dtype={"checkpoint": str})
    return df.fillna({"checkpoint": ""})


def plot_sweep(summary: pd.DataFrame, out_dir: str) -> List[str]:
    """Throughput and wait against P_rv per controller (whole set) as SVG line charts."""
    if not _HAS_MPL:
        logger.warning("[EVAL] matplotlib is not installed; skipping plots")
        return []
    rows = summary[summary["subset"] == "all"]
    written = []
    for metric, label in (("throughput_rate", "throughput (veh/step)"), ("avg_wait", "average wait (s)")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, part in rows.groupby("controller", sort=True):
            part = part.sort_values("P_rv")
            ax.errorbar(part["P_rv"], part[f"{metric}_mean"], yerr=part[f"{metric}_std"], marker="o", label=name)
        ax.set_xlabel("P_rv")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{metric}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written


def _write_frame(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


@measure_time("[EVAL]")
@log_exceptions("[EVAL]")
def sweep(
    entries: Sequence[Tuple[Mapping[str, str], ScenarioSpec]],
    controllers: Sequence[str],
    p_grid: Optional[Sequence[float]] = None,
    seeds: int = 5,
    steps: int = 3000,
    out_dir: Optional[str] = None,
    hyper: Optional[Mapping] = None,
    master_seed: int = 0,
    threads: Optional[int] = None,
    checkpoint: Optional[str] = None,
    demand_override: Optional[float] = None,
    trajectories: bool = False,
    plots: bool = False,
) -> SweepResult:
    """
    Every (scenario, controller, P_rv, seed) episode, run on a thread pool.
    Failed episodes are kept in raw.csv with their error as status and
    excluded from the aggregates.
    """
    if not entries:
        raise ValidationError("manifest", "no scenarios to evaluate")
    if seeds < 1:
        raise ValidationError("seeds", "must be >= 1")
    hyper = hyper or hyperparameters()
    unknown = [c for c in controllers if c not in CONTROLLERS]
    if unknown or not controllers:
        raise ConfigurationError(f"Unknown controller(s) {unknown or controllers}; expected {', '.join(CONTROLLERS)}")
    actor = load_checkpoint(checkpoint).actor if checkpoint else None
    if "policy" in controllers and actor is None:
        raise ConfigurationError("The policy controller needs --checkpoint")
    threads = env_threads(threads or int(hyper.get("threads", 1)))

    jobs: List[Job] = []
    for entry, spec in entries:
        for ctl in controllers:
            for p in (p_grid if p_grid else [spec.p_rv]):
                for k in range(seeds):
                    seed = derive_seed(master_seed, f"{spec.name}:{k}")
                    jobs.append(Job(len(jobs), spec, entry["path"], ctl, float(p), seed))

    graphs: Dict[str, NetworkGraph] = {}
    for entry, spec in entries:
        if spec.name not in graphs:
            graphs[spec.name] = build_graph(spec, os.path.dirname(entry["path"]))

    traj_dir = os.path.join(out_dir, "trajectories") if out_dir and trajectories else None

    def work(job: Job) -> Dict[str, Any]:
        demand = job.spec.demand if demand_override is None else float(demand_override)
        ckpt = checkpoint if job.controller == "policy" else ""
        try:
            g = graphs[job.spec.name]
            ctl = make_controller(job.controller, job.spec, g, hyper, actor)
            traj = os.path.join(traj_dir, f"episode_{job.episode:05d}.csv") if traj_dir else None
            report = run_episode(job.spec, ctl, job.seed, steps, g, hyper, job.p_rv, demand, trajectory=traj)
            return _raw_row(job, report, steps, demand, ckpt or "", STATUS_OK)
        except MixflowError as e:
            logger.warning(f"[EVAL] Episode {job.episode} ({job.spec.name}, {job.controller}) failed: {e}")
            return _raw_row(job, None, steps, demand, ckpt or "", f"failed: {type(e).__name__}")

    logger.info(f"[EVAL] {len(jobs)} episode(s) on {threads} thread(s)")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    raw = pd.DataFrame(rows, columns=list(RAW_HEADER))
    agg = aggregate(raw)
    summary = summarize(raw)
    paths: Dict[str, str] = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, f"{name}.csv") for name in ("raw", "aggregate", "summary")}
        _write_frame(raw, paths["raw"])
        _write_frame(agg, paths["aggregate"])
        _write_frame(summary, paths["summary"])
        paths["hyper"] = os.path.join(out_dir, HYPER_NAME)
        with open(paths["hyper"], "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps_hyper(hyper))
        if plots:
            for p in plot_sweep(summary, out_dir):
                paths[os.path.splitext(os.path.basename(p))[0]] = p
        logger.info(f"[EVAL] Results written to {out_dir}")
    return SweepResult(raw, agg, summary, paths)


# -----------------------------
# Replay
# -----------------------------


def load_sweep_hyper(report_path: str) -> Dict[str, Any]:
    """Hyperparameters a raw.csv was produced with, from its hyper.json."""
    path = os.path.join(os.path.dirname(report_path), HYPER_NAME)
    if not os.path.isfile(path):
        raise ConfigurationError(f"{path} is missing; cannot reproduce episodes of {report_path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    return hyper_from_document(doc)


def replay(report_path: str, row: int, out_path: str) -> MetricsReport:
    """
    Re-run the episode recorded on data row `row` (0-based) of a raw.csv with
    the sweep's own hyperparameters, writing its trajectory.
    """
    rows = read_csv_rows(report_path)
    if not 0 <= row < len(rows):
        raise ValidationError("row", f"{report_path} has {len(rows)} episode row(s), got {row}")
    rec = rows[row]
    if rec["status"] != STATUS_OK:
        raise ValidationError("row", f"episode {rec['episode']} did not complete ({rec['status']})")
    hyper = load_sweep_hyper(report_path)
    path = rec["scenario_path"]
    if not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(os.path.dirname(report_path), path)
    spec = load_spec(path)
    g = build_graph(spec, os.path.dirname(path))
    actor = load_checkpoint(rec["checkpoint"]).actor if rec["checkpoint"] else None
    ctl = make_controller(rec["controller"], spec, g, hyper, actor)
    logger.info(f"[EVAL] Replaying episode {rec['episode']} of {report_path}")
    return run_episode(
        spec,
        ctl,
        int(rec["seed"]),
        int(rec["steps"]),
        g,
        hyper,
        float(rec["P_rv"]),
        float(rec["demand"]),
        trajectory=out_path,
    )


def report_row(report: MetricsReport) -> Dict[str, str]:
    """Report as text fields, floats repr-exact."""
    out = {}
    for k, v in asdict(report).items():
        out[k] = format_float(v) if isinstance(v, float) else str(v)
    out["throughput_e3"] = format_float(report.throughput_e3)
    return out
