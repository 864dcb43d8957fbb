"""Learning agents and heuristic baselines behind one policy interface."""
from equitriage.agents.dqn import DQNConfig, dqn_train
from equitriage.agents.heuristics import HEURISTIC_KINDS, heuristic_policy
from equitriage.agents.mlp import MLP, Adam
from equitriage.agents.policy import Discretizer, Policy
from equitriage.agents.reinforce import ReinforceConfig, discounted_returns, reinforce_train
from equitriage.agents.replay import ReplayBuffer
from equitriage.agents.schedule import EpsilonSchedule
from equitriage.agents.tabular import behavioral_clone, tabular_q_train, tabular_q_update

__all__ = [
    "Adam", "DQNConfig", "Discretizer", "EpsilonSchedule", "HEURISTIC_KINDS", "MLP", "Policy",
    "ReinforceConfig", "ReplayBuffer", "behavioral_clone", "discounted_returns", "dqn_train",
    "heuristic_policy", "reinforce_train", "tabular_q_train", "tabular_q_update",
]
