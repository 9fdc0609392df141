"""
Spaced reverse diffusion with a perfect denoiser
================================================

With a stand-in network that returns the exact noise, the reverse chain lands
back on the clean image. This isolates the sampler from any training error and
shows how the learned-variance step behaves on a strided timestep grid.
"""

import numpy as np

from mrfdiff.diffusion import linear_schedule, p_step, q_sample, spaced_timesteps
from mrfdiff.sample import OracleDenoiser, plan_tiles, sample_channels

sched = linear_schedule(1000, 1e-4, 0.02)
rng = np.random.default_rng(0)
x0 = rng.uniform(-1, 1, (10, 32, 32))

# %%
# Forward corruption
# ------------------

for t in (1, 100, 500, 1000):
    xt = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    corr = np.corrcoef(xt.ravel(), x0.ravel())[0, 1]
    print("t=%4d  alpha_bar=%.5f  corr(x_t, x_0)=%.3f" % (t, sched.alpha_bar_at(t), corr))

# %%
# Reverse chains
# --------------
#
# Full-length chain with z = 0, then the 50-step spaced chain.

for K in (1000, 50, 10):
    x = rng.standard_normal(x0.shape)
    for t, t_next in spaced_timesteps(1000, K):
        ab = sched.alpha_bar_at(t)
        eps = (x - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
        x = p_step(x, eps, np.zeros_like(x), t, t_next, np.zeros_like(x), sched)
    print("K=%4d  relative error %.2e" % (K, np.linalg.norm(x - x0) / np.linalg.norm(x0)))

# %%
# Patch tiling
# ------------
#
# The same oracle run through the patch sampler, 16x16 patches at stride 8.

plan = plan_tiles(32, 32, 16, 8)
out = sample_channels(x0, OracleDenoiser(sched), 50, plan, seed=0)
print("patches:", len(plan.offsets), " coverage range:", plan.counts.min(), "-", plan.counts.max())
print("tiled relative error %.2e" % (np.linalg.norm(out - x0) / np.linalg.norm(x0)))
