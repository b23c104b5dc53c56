# mixflow/__init__.py

"""
mixflow
-----------
Mixed-traffic junction control with robot vehicles.

Features:
- Procedural intersections and roundabouts, OSM junction import
- Deterministic microscopic simulation (IDM car following)
- Per-vehicle observations and a shared global reward
- Soft Actor-Critic with prioritized replay, pure numpy
- Traffic-light and no-light baselines, penetration sweeps
- Command-line interface
"""

__version__ = "0.1.0"
__license__ = "MIT"

import logging


def configure_logging(level=logging.INFO, fmt=None):
    """Configure mixflow logging globally."""
    if fmt is None:
        fmt = "[%(levelname)s][%(name)s] %(message)s"
    logging.basicConfig(level=level, format=fmt, force=True)


# Set default logging config on import
configure_logging()

from .errors import (
    MixflowError,
    ValidationError,
    ConfigurationError,
    SchemaError,
    UnsupportedVersionError,
    NoRouteError,
    TopologyError,
    OsmParseError,
    OsmReferenceError,
    StaleCommandError,
    UnknownVehicleError,
    TrainingDivergenceError,
    CheckpointFormatError,
)
from .config import hyperparameters, load_config, get_config, set_config
from .network import (
    NetworkGraph,
    build_intersection,
    build_roundabout,
    build_from_recipe,
    shortest_route,
    parse_osm,
    serialize_osm,
    convert,
)
from .sim import IdmParams, SimConfig, SimState, Simulator, idm_acceleration, step, spawn_arrivals, lane_change_decide
from .mdp import ObsConfig, RewardWeights, observe, reward
from .controllers import (
    TlProgram,
    NoTLController,
    TLController,
    PolicyController,
    default_str_program,
    tl_gate,
    policy_act,
)
from .replay import PrioritizedReplayBuffer
from .sac import SAC, SacParams, sample_action
from .checkpoint import save_checkpoint, load_checkpoint
from .env import MixedTrafficEnv, SpeedTrackingEnv
from .scenarios import ScenarioSpec, Manifest, generate_manifest, load_spec, save_spec, read_manifest
from .training import train
from .evaluation import MetricsReport, run_episode, sweep, replay

__all__ = [
    "configure_logging",
    # Errors
    "MixflowError",
    "ValidationError",
    "ConfigurationError",
    "SchemaError",
    "UnsupportedVersionError",
    "NoRouteError",
    "TopologyError",
    "OsmParseError",
    "OsmReferenceError",
    "StaleCommandError",
    "UnknownVehicleError",
    "TrainingDivergenceError",
    "CheckpointFormatError",
    # Config
    "hyperparameters",
    "load_config",
    "get_config",
    "set_config",
    # Network
    "NetworkGraph",
    "build_intersection",
    "build_roundabout",
    "build_from_recipe",
    "shortest_route",
    "parse_osm",
    "serialize_osm",
    "convert",
    # Simulation
    "IdmParams",
    "SimConfig",
    "SimState",
    "Simulator",
    "idm_acceleration",
    "step",
    "spawn_arrivals",
    "lane_change_decide",
    # MDP
    "ObsConfig",
    "RewardWeights",
    "observe",
    "reward",
    # Controllers
    "TlProgram",
    "NoTLController",
    "TLController",
    "PolicyController",
    "default_str_program",
    "tl_gate",
    "policy_act",
    # Learning
    "PrioritizedReplayBuffer",
    "SAC",
    "SacParams",
    "sample_action",
    "save_checkpoint",
    "load_checkpoint",
    "MixedTrafficEnv",
    "SpeedTrackingEnv",
    "train",
    # Scenarios and evaluation
    "ScenarioSpec",
    "Manifest",
    "generate_manifest",
    "load_spec",
    "save_spec",
    "read_manifest",
    "MetricsReport",
    "run_episode",
    "sweep",
    "replay",
]
