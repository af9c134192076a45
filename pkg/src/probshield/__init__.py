"""Probabilistic shielding for tabular constrained MDPs."""
from .augment import AugAction, AugEnv, AugState, aug_step, augment
from .cmdp import Cmdp, MemorylessPolicy, env_factory, exact_eval, make_chain, make_loop, make_m1, make_random
from .critic import CostLearnConfig, QTable, cost_value_iteration, perturb, q_learning_cost
from .oracle import brute_force_oracle
from .projection import project
from .shield import ProposedDistribution, ShieldedDistribution, is_shielded, mix_with_noise, shield
from .train import TabularAugPolicy, TrainConfig, hybrid_schedule, shielded_q_train
from .verify import (CheckReport, McEstimate, check_noise, check_optimality, check_preservation,
                     check_safety, mc_estimate)

__all__ = [
    "AugAction", "AugEnv", "AugState", "aug_step", "augment",
    "Cmdp", "MemorylessPolicy", "env_factory", "exact_eval", "make_chain", "make_loop", "make_m1",
    "make_random",
    "CostLearnConfig", "QTable", "cost_value_iteration", "perturb", "q_learning_cost",
    "brute_force_oracle", "project",
    "ProposedDistribution", "ShieldedDistribution", "is_shielded", "mix_with_noise", "shield",
    "TabularAugPolicy", "TrainConfig", "hybrid_schedule", "shielded_q_train",
    "CheckReport", "McEstimate", "check_noise", "check_optimality", "check_preservation",
    "check_safety", "mc_estimate",
]
