"""Green datacenter job scheduling with heuristic, offline, online and offline+online agents."""

from .agents import (
    AgentConfig,
    BCAgent,
    OfflineOnlineAgent,
    OfflineRLAgent,
    OnlineRLAgent,
    Policy,
    load_policy,
    save_policy,
)
from .dataset import Dataset, ReplayBuffer, collect_rollouts, mix_datasets
from .evaluation import EvalReport, action_agreement, evaluate
from .experiments import ExperimentSpec, load_spec, run_experiment
from .heuristics import HeuristicKind, heuristic_controller, select_action
from .sim import GreenDatacenterEnv, SimConfig, encode_observation, reset, step

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "BCAgent",
    "OfflineRLAgent",
    "OnlineRLAgent",
    "OfflineOnlineAgent",
    "Policy",
    "load_policy",
    "save_policy",
    "Dataset",
    "ReplayBuffer",
    "collect_rollouts",
    "mix_datasets",
    "EvalReport",
    "evaluate",
    "action_agreement",
    "ExperimentSpec",
    "load_spec",
    "run_experiment",
    "HeuristicKind",
    "heuristic_controller",
    "select_action",
    "GreenDatacenterEnv",
    "SimConfig",
    "encode_observation",
    "reset",
    "step",
]
