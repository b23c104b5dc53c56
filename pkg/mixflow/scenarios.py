"""
mixflow.scenarios

Scenario documents, manifests and train/test splits.

Usage:
    from mixflow.scenarios import generate_manifest, write_manifest, read_manifest
    recipes = [{"name": "x4_2x2", "recipe": {"kind": "intersection", "legs": 4,
                "in_lanes": 2, "out_lanes": 2, "leg_length": 200.0}}]
    train, test = generate_manifest(recipes, [400, 1000], split_ratio=0.5, master_seed=0)
    write_manifest('scenarios', train, test)
    for entry, spec in read_manifest('scenarios/manifest.json', split='train'):
        ...

A scenario document is UTF-8 JSON with a fixed field order:
format_version, name, metadata, network, demand, p_rv, episode_steps, seed
and an optional tl_program. The network holds exactly one of recipe, osm
(a path relative to the document plus node id and clip radius) or graph.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from mixflow.controllers import TlProgram, default_str_program, program_from_dict
from mixflow.decorators import ensure_document
from mixflow.errors import SchemaError, UnsupportedVersionError, ValidationError
from mixflow.network import build_from_recipe, convert, graph_from_dict, parse_osm
from mixflow.network.graph import NetworkGraph
from mixflow.utils import derive_seed, stable_hash

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEMAND_RANGE = (400.0, 5000.0)
TOPOLOGIES = ("intersection", "roundabout")
SPLITS = ("train", "test")
NETWORK_SOURCES = ("recipe", "osm", "graph")
SCENARIO_SUFFIX = ".scenario.json"
MANIFEST_NAME = "manifest.json"
DEFAULT_DEMANDS = (400.0, 1000.0, 3000.0, 5000.0)
STATIC_TL = {"type": "static", "green": 30.0, "yellow": 3.0, "all_red": 2.0}


def _x(legs: int, in_lanes: int, out_lanes: int) -> Dict[str, Any]:
    return {
        "name": f"x{legs}_{in_lanes}x{out_lanes}",
        "recipe": {"kind": "intersection", "legs": legs, "in_lanes": in_lanes,
                   "out_lanes": out_lanes, "leg_length": 200.0},
    }


def _r(legs: int, ring_lanes: int, radius: float) -> Dict[str, Any]:
    return {
        "name": f"r{legs}_{ring_lanes}ring",
        "recipe": {"kind": "roundabout", "legs": legs, "ring_lanes": ring_lanes,
                   "radius": radius, "leg_length": 200.0},
    }


# shipped corpus: 3/4/5-leg intersections and roundabouts, two variants each
DEFAULT_RECIPES = (
    _x(3, 1, 1), _x(3, 2, 2), _x(4, 1, 1), _x(4, 2, 2), _x(5, 1, 1), _x(5, 2, 1),
    _r(3, 1, 15.0), _r(3, 2, 20.0), _r(4, 1, 15.0), _r(4, 2, 20.0), _r(5, 1, 20.0), _r(5, 2, 25.0),
)


@dataclass
class ScenarioSpec:
    name: str
    demand: float
    p_rv: float = 1.0
    episode_steps: int = 3000
    seed: int = 0
    recipe: Optional[Dict[str, Any]] = None
    osm: Optional[Dict[str, Any]] = None
    graph: Optional[Dict[str, Any]] = None
    tl_program: Optional[Dict[str, Any]] = None
    country: str = ""
    topology: str = "intersection"
    format_version: int = FORMAT_VERSION

    @property
    def sources(self) -> List[str]:
        return [s for s in NETWORK_SOURCES if getattr(self, s) is not None]


@dataclass
class Manifest:
    split: str
    specs: List[ScenarioSpec] = field(default_factory=list)

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.specs]

    def __len__(self):
        return len(self.specs)


# -----------------------------
# Validation
# -----------------------------


def validate_spec(spec: ScenarioSpec) -> None:
    """Check every ScenarioSpec invariant."""
    if spec.format_version != FORMAT_VERSION:
        raise UnsupportedVersionError(spec.format_version)
    if not spec.name:
        raise SchemaError("name", "must be a non-empty string")
    if len(spec.sources) != 1:
        raise SchemaError(
            "network", f"exactly one of recipe, osm, graph is required, got {spec.sources or 'none'}"
        )
    lo, hi = DEMAND_RANGE
    if not lo <= spec.demand <= hi:
        raise ValidationError("demand", f"must lie in [{lo:g}, {hi:g}] veh/hr, got {spec.demand:g}")
    if not 0.0 <= spec.p_rv <= 1.0:
        raise ValidationError("p_rv", f"must lie in [0, 1], got {spec.p_rv:g}")
    if spec.episode_steps < 1:
        raise ValidationError("episode_steps", "must be >= 1")
    if spec.topology not in TOPOLOGIES:
        raise ValidationError("metadata.topology", f"must be one of {', '.join(TOPOLOGIES)}")


# -----------------------------
# Documents
# -----------------------------


def spec_to_dict(spec: ScenarioSpec) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "format_version": spec.format_version,
        "name": spec.name,
        "metadata": {"country": spec.country, "topology": spec.topology},
        "network": {s: getattr(spec, s) for s in spec.sources},
        "demand": float(spec.demand),
        "p_rv": float(spec.p_rv),
        "episode_steps": int(spec.episode_steps),
        "seed": int(spec.seed),
    }
    if spec.tl_program is not None:
        doc["tl_program"] = spec.tl_program
    return doc


def _field(doc: Mapping, key: str, kind, path: str = "", required: bool = True, default=None):
    where = f"{path}.{key}" if path else key
    if key not in doc:
        if required:
            raise SchemaError(where, "missing field")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise SchemaError(where, f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


@ensure_document
def spec_from_dict(doc: Dict[str, Any]) -> ScenarioSpec:
    """Rebuild a ScenarioSpec; schema violations name the offending field path."""
    version = _field(doc, "format_version", int)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version)
    meta = _field(doc, "metadata", dict, required=False, default={})
    network = _field(doc, "network", dict)
    unknown = sorted(k for k in network if k not in NETWORK_SOURCES)
    if unknown:
        raise SchemaError(f"network.{unknown[0]}", "unknown network source")
    for source in NETWORK_SOURCES:
        if source in network:
            _field(network, source, dict, "network")
    tl = _field(doc, "tl_program", dict, required=False)
    spec = ScenarioSpec(
        name=_field(doc, "name", str),
        demand=_field(doc, "demand", float),
        p_rv=_field(doc, "p_rv", float, required=False, default=1.0),
        episode_steps=_field(doc, "episode_steps", int, required=False, default=3000),
        seed=_field(doc, "seed", int, required=False, default=0),
        recipe=network.get("recipe"),
        osm=network.get("osm"),
        graph=network.get("graph"),
        tl_program=tl,
        country=_field(meta, "country", str, "metadata", required=False, default=""),
        topology=_field(meta, "topology", str, "metadata", required=False, default="intersection"),
        format_version=version,
    )
    validate_spec(spec)
    return spec


def dumps_spec(spec: ScenarioSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, ensure_ascii=False) + "\n"


def save_spec(path: str, spec: ScenarioSpec) -> None:
    validate_spec(spec)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_spec(spec))


def load_spec(path: str) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as f:
        return spec_from_dict(f.read())


# -----------------------------
# Networks and signal programs
# -----------------------------


def build_graph(spec: ScenarioSpec, base_dir: str = ".") -> NetworkGraph:
    """Materialize the scenario's network source."""
    if spec.recipe is not None:
        return build_from_recipe(spec.recipe)
    if spec.osm is not None:
        ref = spec.osm
        for key in ("path", "node"):
            if key not in ref:
                raise SchemaError(f"network.osm.{key}", "missing field")
        path = ref["path"] if os.path.isabs(ref["path"]) else os.path.join(base_dir, ref["path"])
        with open(path, "r", encoding="utf-8") as f:
            doc = parse_osm(f.read())
        return convert(doc, str(ref["node"]), float(ref.get("radius", 250.0)))
    if spec.graph is not None:
        return graph_from_dict(spec.graph)
    raise SchemaError("network", "no network source")


def resolve_program(spec: ScenarioSpec, g: NetworkGraph) -> Optional[TlProgram]:
    """The scenario's traffic-light program, expanding {"type": "static"} to the default STR program."""
    tl = spec.tl_program
    if tl is None:
        return None
    if tl.get("type") == "static":
        return default_str_program(
            g,
            float(tl.get("green", 30.0)),
            float(tl.get("yellow", 3.0)),
            float(tl.get("all_red", 2.0)),
        )
    try:
        program = program_from_dict(tl)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError("tl_program", f"malformed program: {e}")
    program.validate(g)
    return program


# -----------------------------
# Manifests
# -----------------------------


def _check_demands(demands: Sequence[float]) -> List[float]:
    lo, hi = DEMAND_RANGE
    out = []
    for d in demands:
        if not lo <= float(d) <= hi:
            raise ValidationError("demands", f"{d} veh/hr is outside [{lo:g}, {hi:g}]")
        out.append(float(d))
    return out


def scenario_name(recipe_name: str, demand: float) -> str:
    return f"{recipe_name}_d{int(demand) if float(demand).is_integer() else demand}"


def generate_manifest(
    recipes: Sequence[Mapping[str, Any]],
    demands: Union[Sequence[float], Mapping[str, Sequence[float]]],
    split_ratio: float = 0.8,
    master_seed: int = 0,
    episode_steps: int = 3000,
    p_rv: float = 1.0,
    tl_program: Optional[Dict[str, Any]] = None,
) -> Tuple[Manifest, Manifest]:
    """
    Cross product of recipes and demands, split by hash ordering.

    Each recipe is {"name", "recipe" | "osm" | "graph", optional "country",
    optional "topology"}. `demands` is one list for all recipes or a mapping
    topology -> list.
    """
    if not recipes:
        raise ValidationError("recipes", "at least one recipe is required")
    if not 0.0 <= split_ratio <= 1.0:
        raise ValidationError("split_ratio", f"must lie in [0, 1], got {split_ratio}")

    specs: List[ScenarioSpec] = []
    for i, r in enumerate(recipes):
        if "name" not in r:
            raise SchemaError(f"recipes[{i}].name", "missing field")
        sources = {s: dict(r[s]) for s in NETWORK_SOURCES if s in r}
        topology = r.get("topology") or (r.get("recipe") or {}).get("kind", "intersection")
        grid = demands.get(topology, ()) if isinstance(demands, Mapping) else demands
        for d in _check_demands(grid):
            name = scenario_name(r["name"], d)
            spec = ScenarioSpec(
                name=name,
                demand=d,
                p_rv=p_rv,
                episode_steps=episode_steps,
                seed=derive_seed(master_seed, name),
                tl_program=dict(tl_program) if tl_program else None,
                country=r.get("country", ""),
                topology=topology,
                **sources,
            )
            validate_spec(spec)
            specs.append(spec)

    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("recipes", "recipe names must be unique")
    ordered = sorted(specs, key=lambda s: (stable_hash(f"{master_seed}:{s.name}"), s.name))
    n_train = int(round(len(ordered) * split_ratio))
    train = Manifest("train", sorted(ordered[:n_train], key=lambda s: s.name))
    test = Manifest("test", sorted(ordered[n_train:], key=lambda s: s.name))
    logger.info(f"[SCENARIO] {len(specs)} scenarios: {len(train)} train / {len(test)} test")
    return train, test


def manifest_document(train: Manifest, test: Manifest) -> Dict[str, Any]:
    overlap = set(train.names) & set(test.names)
    if overlap:
        raise ValidationError("manifest", f"scenarios in both splits: {', '.join(sorted(overlap))}")
    entries = [
        {"name": s.name, "path": s.name + SCENARIO_SUFFIX, "split": m.split}
        for m in (train, test)
        for s in m.specs
    ]
    entries.sort(key=lambda e: e["name"])
    return {"format_version": FORMAT_VERSION, "scenarios": entries}


def write_manifest(out_dir: str, train: Manifest, test: Manifest) -> str:
    """Write every spec plus manifest.json into out_dir; returns the manifest path."""
    doc = manifest_document(train, test)
    os.makedirs(out_dir, exist_ok=True)
    for m in (train, test):
        for spec in m.specs:
            save_spec(os.path.join(out_dir, spec.name + SCENARIO_SUFFIX), spec)
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(doc, indent=2) + "\n")
    return path


def read_manifest_document(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise SchemaError("$", "manifest must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version)
    entries = doc.get("scenarios")
    if not isinstance(entries, list):
        raise SchemaError("scenarios", "expected a list")
    for i, e in enumerate(entries):
        for key in ("name", "path", "split"):
            if not isinstance(e, dict) or not isinstance(e.get(key), str):
                raise SchemaError(f"scenarios[{i}].{key}", "missing or not a string")
        if e["split"] not in SPLITS:
            raise SchemaError(f"scenarios[{i}].split", f"must be one of {', '.join(SPLITS)}")
    names = [e["name"] for e in entries]
    if len(set(names)) != len(names):
        raise SchemaError("scenarios", "duplicate scenario names")
    return entries


def read_manifest(path: str, split: Optional[str] = None) -> List[Tuple[Dict[str, str], ScenarioSpec]]:
    """(entry, spec) pairs listed in a manifest, optionally restricted to one split."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for entry in read_manifest_document(path):
        if split is not None and entry["split"] != split:
            continue
        spec = load_spec(os.path.join(base, entry["path"]))
        out.append((dict(entry, path=os.path.join(base, entry["path"])), spec))
    return out
