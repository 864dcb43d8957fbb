"""Synthetic complaint-stream environments."""
from equitriage.envs.base import ComplaintEnv, EpisodeLog, OutcomeRecord, Transition, run_episode, summarize
from equitriage.envs.boiler import BOILER_ACTIONS, BoilerEnv
from equitriage.envs.city import CityConfig, generate_city
from equitriage.envs.scaffold import SCAFFOLD_ACTIONS, ScaffoldEnv

ENV_KINDS = {"boiler": BoilerEnv, "scaffold": ScaffoldEnv}

__all__ = [
    "BOILER_ACTIONS", "SCAFFOLD_ACTIONS", "BoilerEnv", "CityConfig", "ComplaintEnv", "ENV_KINDS",
    "EpisodeLog", "OutcomeRecord", "ScaffoldEnv", "Transition", "generate_city", "run_episode", "summarize",
]
