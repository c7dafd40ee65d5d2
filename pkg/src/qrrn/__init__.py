"""Distributional RL route planning on stochastic road networks."""

from .env import EnvConfig, RoadEnv
from .learner import Agent, AgentConfig
from .policies import ExecPolicy
from .roadnet import GraphMap, ScenarioParams, generate_scenario, parse_map
from .trainer import RunConfig, evaluate, run_trials, train_one

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "EnvConfig", "ExecPolicy", "GraphMap",
    "RoadEnv", "RunConfig", "ScenarioParams", "evaluate",
    "generate_scenario", "parse_map", "run_trials", "train_one",
    "__version__",
]
