"""totelearn: imitation and multi-agent PPO policies for the toteflow
decision environment, driven entirely through its wire protocol and files."""

__version__ = "0.1.0"

from .models import (
    CandidateScorer,
    CoordinationHead,
    PolicyConfig,
    RecurrentCritic,
    gae_targets,
    imitation_loss,
    policy_forward,
    ppo_surrogate,
)
from .imitation import ImitationBundle, ImitationPolicy, average_gap, evaluate_gap, train
from .mappo import AgentBundle, ImpactModel, MappoParams, collect_episode, local_reward
from . import mappo, pipeline, wire

__all__ = [
    "AgentBundle",
    "CandidateScorer",
    "CoordinationHead",
    "ImitationBundle",
    "ImitationPolicy",
    "ImpactModel",
    "MappoParams",
    "PolicyConfig",
    "RecurrentCritic",
    "average_gap",
    "collect_episode",
    "evaluate_gap",
    "gae_targets",
    "imitation_loss",
    "local_reward",
    "mappo",
    "pipeline",
    "policy_forward",
    "ppo_surrogate",
    "train",
    "wire",
]
