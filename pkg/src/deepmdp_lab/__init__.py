"""Exact certification of DeepMDP latent-model bounds on finite MDPs, plus a small DeepMDP trainer."""

__version__ = "0.1.0"

from .bisim import bisim_metric, bisim_partition
from .bounds import (
    certify_bisim_chain,
    certify_global_value_diff,
    certify_lipschitz_value,
    certify_local_value_diff,
    certify_representation,
    certify_suboptimality,
    construct_deep_policy,
)
from .certificate import Certificate
from .latent import LatentModel, global_losses, local_losses
from .mdp_core import FiniteMdp, Policy, policy_evaluation, stationary_distribution, value_iteration
from .prob_metrics import DiscreteDistribution, MetricKind, MetricSpace, distance, wasserstein1
