"""Graph convolutional memory for partially observable RL.

An episodic knowledge-graph memory operator with pluggable topological
priors, MLP/LSTM baselines behind the same interface, two desk-scale
POMDP environments, and PPO/A2C training on a small tape-based autodiff
engine.
"""

__version__ = "0.1.0"

from .baselines import LSTMMemory, MLPMemory, baseline_param_count
from .envs import CardGameEnv, CartpoleEnv, StepResult
from .gcm import GCM, GCMConfig, MemoryModule, gcm_param_count, gnn_forward
from .graph import (
    And,
    Empty,
    Identity,
    LatentSim,
    MemoryState,
    Observation,
    Or,
    Prior,
    Spatial,
    Temporal,
    eval_prior,
    export_edge_list,
    insert_observation,
    neighborhood,
)
from .optim import ParameterStore, load_checkpoint, optimizer_step, save_checkpoint
from .rl import (
    PolicyModel,
    TrainConfig,
    Trajectory,
    a2c_update,
    collect_rollouts,
    compute_gae,
    evaluate,
    ppo_update,
)
from .tensor import Tape, Tensor, backward, softmax_logits_ops

__all__ = [
    "GCM",
    "GCMConfig",
    "MemoryModule",
    "gcm_param_count",
    "gnn_forward",
    "LSTMMemory",
    "MLPMemory",
    "baseline_param_count",
    "CardGameEnv",
    "CartpoleEnv",
    "StepResult",
    "And",
    "Empty",
    "Identity",
    "LatentSim",
    "MemoryState",
    "Observation",
    "Or",
    "Prior",
    "Spatial",
    "Temporal",
    "eval_prior",
    "export_edge_list",
    "insert_observation",
    "neighborhood",
    "ParameterStore",
    "load_checkpoint",
    "optimizer_step",
    "save_checkpoint",
    "PolicyModel",
    "TrainConfig",
    "Trajectory",
    "a2c_update",
    "collect_rollouts",
    "compute_gae",
    "evaluate",
    "ppo_update",
    "Tape",
    "Tensor",
    "backward",
    "softmax_logits_ops",
]
