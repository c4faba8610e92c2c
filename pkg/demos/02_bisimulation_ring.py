"""
Four copies of one ring
=======================

The four-track ring-world has four disconnected copies of the same track.
States at the same phase on different tracks are bisimilar: the metric puts
them at distance zero and the partition merges them.
"""
import numpy as np

from deepmdp_lab.bisim import bisim_metric, bisim_partition, value_bisim_bound_check
from deepmdp_lab.envs import ringworld

world = ringworld(8, n_tracks=4, gamma=0.9, warp=0.5)
res = bisim_metric(world.mdp, tol=1e-12)
part = bisim_partition(world.mdp)
print(f"{world.n_states} states, {part.n_blocks} bisimulation classes, "
      f"{res.iterations} iterations, residual {res.residual:.1e}")

###############################################################################
# Distances from phase 0 on track 0 to every phase of every track.

d = res.metric.d
row = world.state_index(0, 0)
table = np.array([[d[row, world.state_index(t, p)] for p in range(8)] for t in range(4)])
np.set_printoptions(precision=3, suppress=True)
print(table)

###############################################################################
# The metric bounds optimal value differences: ``|V*(s) - V*(t)| <= d(s, t) / (1 - gamma)``.

cert = value_bisim_bound_check(world.mdp, res)
print(f"value bound, tightest pair {cert.witness}: {cert.lhs:.4f} <= {cert.rhs:.4f}")
