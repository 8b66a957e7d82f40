"""Adaptive episode-length value decomposition for cooperative multi-agent RL."""

from .aela import AelaController, recommend_window
from .envs import ChainEnv, ChainEnvConfig, MppConfig, MppEnv, make_env
from .harness import ExperimentConfig, RunLog, evaluate, load_config, run_parallel, run_training
from .learners import Learner, ReplayBuffer, TrainerConfig

__all__ = [
    "AelaController",
    "ChainEnv",
    "ChainEnvConfig",
    "ExperimentConfig",
    "Learner",
    "MppConfig",
    "MppEnv",
    "ReplayBuffer",
    "RunLog",
    "TrainerConfig",
    "evaluate",
    "load_config",
    "make_env",
    "recommend_window",
    "run_parallel",
    "run_training",
]

__version__ = "0.1.0"
