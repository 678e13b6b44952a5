"""Discrete-action soft actor-critic on numpy, with an exact tabular max-entropy oracle."""
from .agent import AgentConfig, SACDiscrete, TargetUpdate
from .envs import Env, MdpSpec, make_bandit, make_chain, make_gridworld, make_random_mdp, make_two_state
from .oracle import exact_policy_evaluation, soft_policy_iteration, soft_value_iteration
from .replay import ReplayBuffer, Transition
from .runner import RunConfig, Trainer, compare_to_oracle, compute_entropy_target, evaluate, run_training

__version__ = "0.1.0"
