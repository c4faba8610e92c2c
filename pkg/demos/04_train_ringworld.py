"""
Training a DeepMDP on the four-track ring
=========================================

The encoder sees 16x16 pictures of four ring tracks. Nothing tells it that
the tracks are copies of each other, but the reward and transition losses
only care about behaviour, so bisimilar states end up on the same latent
point. Pass a smaller step count as the first argument for a quick run.
"""
import sys

import numpy as np

from deepmdp_lab.cli import DEFAULTS
from deepmdp_lab.envs import RingWorldEnv, ringworld, ringworld_dataset
from deepmdp_lab.train import TrainConfig, certify_snapped_gap, snap_model, train_deepmdp

spec = DEFAULTS["train"]
world = ringworld(spec["n_phases"], spec["n_tracks"], 0.9, spec["warp"])
env = RingWorldEnv(world, spec["resolution"])
data = ringworld_dataset(world, spec["n_samples"], seed=1, resolution=spec["resolution"])
steps = int(sys.argv[1]) if len(sys.argv) > 1 else spec["config"]["steps"]
config = TrainConfig(**{**spec["config"], "steps": steps}, seed=1)
model, trace = train_deepmdp(data, config)

###############################################################################
# The reward loss sits on a plateau early on, then drops.

for frac in (0.1, 0.25, 0.5, 1.0):
    print(f"{int(frac * 100):3d}% of training: reward loss {trace.window_mean('reward_loss', frac):.4f}, "
          f"transition loss {trace.window_mean('transition_loss', frac):.4f}")

###############################################################################
# Latent distances between the same phase on different tracks, against
# distances between different phases.

z = model.encode(env.observations)
same = [np.linalg.norm(z[world.state_index(0, p)] - z[world.state_index(t, p)])
        for p in range(world.n_phases) for t in range(1, world.n_tracks)]
diff = [np.linalg.norm(z[world.state_index(0, p)] - z[world.state_index(0, q)])
        for p in range(world.n_phases) for q in range(p + 1, world.n_phases)]
print(f"mean latent distance: bisimilar {np.mean(same):.4f}, different phase {np.mean(diff):.4f}")

###############################################################################
# Snap the visited latents to a finite model and certify the open-loop value gap.

cert = certify_snapped_gap(env, world.mdp, snap_model(model, env.observations), model, 200, 100, seed=1)
print(f"value gap {cert.lhs:.4f} <= certified {cert.rhs:.4f}")
print("\n".join(cert.notes))
