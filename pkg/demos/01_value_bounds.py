"""
How tight are the value-difference bounds?
==========================================

A latent model that is an exact quotient of the MDP has zero losses, and every
bound collapses to 0 <= 0. Perturbing the MDP away from the model makes the
losses grow, and the certified right-hand sides grow with them.
"""
import numpy as np

from deepmdp_lab.bounds import certify_global_value_diff, certify_representation, certify_suboptimality
from deepmdp_lab.envs import lipschitz_instance
from deepmdp_lab.latent import global_losses

###############################################################################
# One instance per perturbation size: six states, four latent points in the
# unit square, two actions, discount 0.9.

print(f"{'eps':>5} {'L_R':>8} {'L_P':>8} {'|Q - Qbar|':>11} {'bound':>8} {'subopt':>8} {'bound':>8}")
for eps in (0.0, 0.02, 0.05, 0.1, 0.2):
    inst = lipschitz_instance(3, perturbation=eps)
    losses = global_losses(inst.mdp, inst.model, "w")
    value = certify_global_value_diff(inst.mdp, inst.model, inst.policy, "w")
    subopt = certify_suboptimality(inst.mdp, inst.model, "w")
    print(f"{eps:5.2f} {losses.reward_loss:8.4f} {losses.transition_loss:8.4f} "
          f"{value.lhs:11.4f} {value.rhs:8.4f} {subopt.lhs:8.4f} {subopt.rhs:8.4f}")

###############################################################################
# The representation bound says states mapped close together have close
# values. Its left-hand side is the worst excess of a value gap over
# ``K_V`` times the latent distance, so it is negative when there is room.

inst = lipschitz_instance(3, perturbation=0.1)
for mode in ("global", "local"):
    cert = certify_representation(inst.mdp, inst.model, inst.policy, "w", mode)
    print(f"representation ({mode}): {cert.lhs:.4f} <= {cert.rhs:.4f}  witness {cert.witness}")

###############################################################################
# Total variation needs a sup-norm on values instead of a Lipschitz norm.
# Both routes bound the same left-hand side.

tv = certify_global_value_diff(inst.mdp, inst.model, inst.policy, "tv")
w = certify_global_value_diff(inst.mdp, inst.model, inst.policy, "w")
print(f"W route: {w.lhs:.4f} <= {w.rhs:.4f}    TV route: {tv.lhs:.4f} <= {tv.rhs:.4f}")
assert np.isclose(w.lhs, tv.lhs)
