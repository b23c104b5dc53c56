# mixflow/cli.py

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence

from mixflow.config import hyperparameters, load_config, merge_with_args, parse_override, reset_config
from mixflow.errors import (
    ConfigurationError,
    MixflowError,
    SchemaError,
    UnsupportedVersionError,
    ValidationError,
)
from mixflow.evaluation import CONTROLLERS, replay, sweep
from mixflow.network import convert as convert_osm, parse_osm
from mixflow.scenarios import (
    DEFAULT_DEMANDS,
    DEFAULT_RECIPES,
    STATIC_TL,
    ScenarioSpec,
    build_graph,
    generate_manifest,
    read_manifest,
    save_spec,
    write_manifest,
)
from mixflow.training import train

logger = logging.getLogger("mixflow.cli")

USAGE_ERRORS = (ValidationError, ConfigurationError, SchemaError, UnsupportedVersionError)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="JSON or YAML config file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override any hyperparameter (repeatable)",
    )
    common.add_argument("--seed", type=int, help="Master seed for every random stream")
    common.add_argument("--threads", type=int, help="Concurrent episodes")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="mixflow", description="mixflow: mixed-traffic junction simulation and SAC training"
    )
    subparsers = parser.add_subparsers(dest="command", help="Sub-command help")

    # --------------------------
    # generate
    # --------------------------
    gen = subparsers.add_parser("generate", parents=[common], help="Write scenario files and manifest.json")
    gen.add_argument("--out", type=str, help="Output directory")
    gen.add_argument("--recipes", type=str, help="JSON list of {name, recipe|osm|graph} (default: built-in corpus)")
    gen.add_argument("--demands", type=float, nargs="+", help="Demands in veh/hr")
    gen.add_argument("--split-ratio", type=float, help="Share of scenarios in the train split")
    gen.add_argument("--episode-steps", type=int, help="Episode length stored in each scenario")
    gen.add_argument("--no-tl", action="store_true", help="Do not attach the static signal program")

    # --------------------------
    # convert
    # --------------------------
    conv = subparsers.add_parser("convert", parents=[common], help="Convert an OSM junction into a scenario")
    conv.add_argument("--osm", type=str, required=True, help="OSM XML file")
    conv.add_argument("--node", type=str, required=True, help="Junction node id")
    conv.add_argument("--radius", type=float, help="Clip radius in meters")
    conv.add_argument("--out", type=str, required=True, help="Scenario file to write")
    conv.add_argument("--demand", type=float, help="Demand in veh/hr")
    conv.add_argument("--name", type=str, help="Scenario name")

    # --------------------------
    # train
    # --------------------------
    tr = subparsers.add_parser("train", parents=[common], help="Train the shared policy")
    tr.add_argument("--scenarios", type=str, help="manifest.json")
    tr.add_argument("--split", type=str, help="Manifest split to train on (default: train)")
    tr.add_argument("--episodes", type=int, help="Episodes to run")
    tr.add_argument("--steps", type=int, help="Steps per episode")
    tr.add_argument("--max-scenarios", type=int, help="Use only the first N scenarios")
    tr.add_argument(
        "--calibrate-wait", dest="calibrate_wait", action="store_true", default=None,
        help="Derive each scenario's W_l/W_h from traffic-light runs first",
    )
    tr.add_argument("--out", type=str, help="Output directory")

    # --------------------------
    # eval
    # --------------------------
    ev = subparsers.add_parser("eval", parents=[common], help="Sweep controllers over a manifest")
    ev.add_argument("--manifest", type=str, help="manifest.json")
    ev.add_argument("--split", type=str, help="Only this manifest split")
    ev.add_argument("--controller", type=str, nargs="+", choices=CONTROLLERS, help="Controllers to compare")
    ev.add_argument("--checkpoint", type=str, help="Checkpoint for the policy controller")
    ev.add_argument("--p-rv", dest="p_rv", type=float, nargs="+", help="Penetration rates")
    ev.add_argument("--seeds", type=int, help="Seeds per configuration")
    ev.add_argument("--steps", type=int, help="Steps per episode")
    ev.add_argument("--demand", type=float, help="Replace every scenario's demand")
    ev.add_argument("--trajectories", action="store_true", help="Write per-episode trajectory CSVs")
    ev.add_argument("--plots", action="store_true", help="Write SVG plots")
    ev.add_argument("--out", type=str, help="Output directory")

    # --------------------------
    # replay
    # --------------------------
    rp = subparsers.add_parser("replay", parents=[common], help="Re-run one episode of a raw.csv")
    rp.add_argument("--report", type=str, required=True, help="raw.csv of a sweep")
    rp.add_argument("--row", type=int, required=True, help="Data row (0-based)")
    rp.add_argument("--out", type=str, help="Trajectory CSV to write")

    return parser


def _hyper(opts: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    overrides = dict(parse_override(text) for text in opts.get("overrides") or [])
    for key in ("seed", "threads"):
        if opts.get(key) is not None:
            overrides[key] = opts[key]
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    return hyperparameters(overrides)


def _require(opts: Dict[str, Any], key: str, flag: str) -> Any:
    if opts.get(key) is None:
        raise ValidationError(flag, "is required")
    return opts[key]


# --------------------------
# Subcommands
# --------------------------


def cmd_generate(opts: Dict[str, Any]) -> None:
    hyper = _hyper(opts)
    out = _require(opts, "out", "--out")
    if opts.get("recipes"):
        with open(opts["recipes"], "r", encoding="utf-8") as f:
            recipes = json.load(f)
        if not isinstance(recipes, list):
            raise SchemaError("$", "recipes file must hold a JSON list")
    else:
        recipes = [dict(r) for r in DEFAULT_RECIPES]
    train_m, test_m = generate_manifest(
        recipes,
        opts.get("demands") or list(DEFAULT_DEMANDS),
        split_ratio=opts["split_ratio"] if opts.get("split_ratio") is not None else 0.8,
        master_seed=hyper["seed"],
        episode_steps=opts.get("episode_steps") or hyper["eval_steps"],
        tl_program=None if opts.get("no_tl") else STATIC_TL,
    )
    path = write_manifest(out, train_m, test_m)
    print(f"Wrote {len(train_m) + len(test_m)} scenarios ({len(train_m)} train / {len(test_m)} test): {path}")


def cmd_convert(opts: Dict[str, Any]) -> None:
    hyper = _hyper(opts)
    out = opts["out"]
    radius = opts["radius"] if opts.get("radius") is not None else 250.0
    with open(opts["osm"], "r", encoding="utf-8") as f:
        g = convert_osm(parse_osm(f.read()), str(opts["node"]), radius)
    base = os.path.dirname(os.path.abspath(out))
    stem = os.path.splitext(os.path.basename(opts["osm"]))[0]
    spec = ScenarioSpec(
        name=opts.get("name") or f"{stem}_{opts['node']}",
        demand=opts["demand"] if opts.get("demand") is not None else 1000.0,
        episode_steps=hyper["eval_steps"],
        seed=hyper["seed"],
        osm={
            "path": os.path.relpath(os.path.abspath(opts["osm"]), base),
            "node": str(opts["node"]),
            "radius": float(radius),
        },
        tl_program=dict(STATIC_TL) if g.signal_nodes else None,
        topology=g.topology,
    )
    # resolving the source again proves the document is self-contained
    build_graph(spec, base)
    save_spec(out, spec)
    print(
        f"Converted {g.topology} at node {opts['node']}: {len(g.nodes)} nodes, "
        f"{len(g.edges)} edges, {len(g.connectors)} connectors -> {out}"
    )


def cmd_train(opts: Dict[str, Any]) -> None:
    steps = opts.get("steps")
    if steps is not None and steps < 1:
        raise ValidationError("--steps", f"must be >= 1, got {steps}")
    episodes = opts["episodes"] if opts.get("episodes") is not None else 1
    if episodes < 0:
        raise ValidationError("--episodes", "must be >= 0")
    hyper = _hyper(opts, {"episode_steps": steps, "calibrate_wait": opts.get("calibrate_wait")})
    manifest = _require(opts, "scenarios", "--scenarios")
    entries = read_manifest(manifest, split=opts.get("split") or "train")
    if not entries:
        raise ValidationError("--scenarios", f"no scenarios in split {opts.get('split') or 'train'!r}")
    out = opts.get("out") or os.path.join("runs", "train")
    result = train(
        [spec for _, spec in entries],
        hyper,
        seed=hyper["seed"],
        episodes=episodes,
        out_dir=out,
        base_dir=os.path.dirname(os.path.abspath(manifest)),
        max_scenarios=opts.get("max_scenarios"),
        progress=True,
    )
    print(f"Trained {len(result.log)} episode(s), {result.updates} update(s); outputs in {out}")


def cmd_eval(opts: Dict[str, Any]) -> None:
    hyper = _hyper(opts, {"seeds": opts.get("seeds"), "eval_steps": opts.get("steps")})
    if hyper["eval_steps"] < 1:
        raise ValidationError("--steps", "must be >= 1")
    manifest = _require(opts, "manifest", "--manifest")
    entries = read_manifest(manifest, split=opts.get("split"))
    out = opts.get("out") or os.path.join("results", "eval")
    result = sweep(
        entries,
        opts.get("controller") or ["notl"],
        p_grid=opts.get("p_rv"),
        seeds=hyper["seeds"],
        steps=hyper["eval_steps"],
        out_dir=out,
        hyper=hyper,
        master_seed=hyper["seed"],
        threads=hyper["threads"],
        checkpoint=opts.get("checkpoint"),
        demand_override=opts.get("demand"),
        trajectories=bool(opts.get("trajectories")),
        plots=bool(opts.get("plots")),
    )
    failed = int((result.raw["status"] != "ok").sum())
    print(f"Evaluated {len(result.raw)} episode(s), {failed} failed; summary: {result.paths.get('summary')}")


def cmd_replay(opts: Dict[str, Any]) -> None:
    out = opts.get("out") or os.path.join(os.path.dirname(opts["report"]), f"replay_{opts['row']:05d}.csv")
    report = replay(opts["report"], opts["row"], out)
    print(
        f"Replayed {report.scenario} ({report.controller}, seed {report.seed}): "
        f"throughput={report.throughput_rate!r} avg_wait={report.avg_wait!r} -> {out}"
    )


COMMANDS = {
    "generate": cmd_generate,
    "convert": cmd_convert,
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
}


def error_line(e: BaseException) -> str:
    return f"mixflow: error: {type(e).__name__}: {e}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not args.command:
        parser.print_help()
        return 2

    opts = vars(args)
    if opts.get("verbose"):
        logging.getLogger("mixflow").setLevel(logging.DEBUG)
    try:
        reset_config()
        if opts.get("config"):
            load_config(opts["config"])
        # flag > config file > default
        opts = merge_with_args(opts)
        COMMANDS[args.command](opts)
    except USAGE_ERRORS as e:
        print(error_line(e), file=sys.stderr)
        return 2
    except (MixflowError, OSError, ImportError) as e:
        logger.debug("[CLI] command failed", exc_info=True)
        print(error_line(e), file=sys.stderr)
        return 1
    return 0


def run_cli():
    sys.exit(main())


if __name__ == "__main__":
    run_cli()
