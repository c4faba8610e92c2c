"""
Building a latent policy from a bisimulation-smooth one
=======================================================

A policy that is K-Lipschitz in the bisimulation metric can be approximated
by a policy defined on latent points. For each action we take the midpoint
of the smallest and largest CK-Lipschitz extensions from the anchors
``phi(s)``. The sup gap on states is at most ``max(K, 1) eps / 2``.
"""
import numpy as np

from deepmdp_lab.bisim import bisim_metric
from deepmdp_lab.bounds import construct_deep_policy
from deepmdp_lab.envs import lipschitz_bisim_policy, lipschitz_instance

inst = lipschitz_instance(5, perturbation=0.1)
res = bisim_metric(inst.mdp, tol=1e-12)
rng = np.random.default_rng(0)

###############################################################################
# Slopes below and above one. For ``K > 1`` the extensions can sit further
# from the policy than ``eps / 2``, which is why the bound uses ``max(K, 1)``.

for slope in (0.5, 5.0, 30.0):
    policy, K = lipschitz_bisim_policy(rng, res.metric.d, inst.mdp.n_actions, slope)
    out = construct_deep_policy(inst.mdp, inst.model, policy, K, res)
    gap, lip = out.certificate.parts
    print(f"K={K:.3f}  eps={out.eps:.4f}  gap {gap.lhs:.4f} <= {gap.rhs:.4f}  "
          f"Lipschitz {lip.lhs:.3f} <= {lip.rhs:.3f}  non-stochastic rows {out.nonstochastic_rows}")
