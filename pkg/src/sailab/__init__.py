"""Self-imitation via advantage learning: tabular oracles, gridworlds, replay and agents."""

from .agents import (Agent, AgentConfig, LossVariant, QFunction, al_modified_reward, compute_update,
                     sail_modified_reward, strsil_modified_reward, td_target)
from .config import ConfigError, EnvSpec, RunConfig, load_config, parse_config
from .envs import KeyDoorTreasureEnv, SparseChain, StickyWrapper, make_env
from .mdp import TabularMdp, al_fixed_point, parse_mdp, value_iteration
from .metrics import mean_action_gap, mean_relative_improvement, normalized_median
from .replay import ReplayBuffer, TransitionRecord
from .training import RunResult, train_seed

__version__ = "0.1.0"

__all__ = [
    "Agent", "AgentConfig", "ConfigError", "EnvSpec", "KeyDoorTreasureEnv", "LossVariant", "QFunction",
    "ReplayBuffer", "RunConfig", "RunResult", "SparseChain", "StickyWrapper", "TabularMdp", "TransitionRecord",
    "al_fixed_point", "al_modified_reward", "compute_update", "load_config", "make_env", "mean_action_gap",
    "mean_relative_improvement", "normalized_median", "parse_config", "parse_mdp", "sail_modified_reward",
    "strsil_modified_reward", "td_target", "train_seed", "value_iteration",
]
