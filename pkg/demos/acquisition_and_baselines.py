"""
Undersampled acquisition, gridding and LRTV
===========================================

A synthetic brain phantom is turned into an image timeseries, sampled with a
different variable-density k-space mask per frame on four coils, truncated
from 1000 to 200 frames, and reconstructed two ways.
"""

import numpy as np

from mrfdiff import acquire, epg, phantom
from mrfdiff.baselines import LrtvConfig, lrtv, svdmrf
from mrfdiff.match import dict_match
from mrfdiff.metrics import mape, nrmse
from mrfdiff.subspace import compress, compute_basis

rng = np.random.default_rng(0)

# %%
# Phantom and reference timeseries
# --------------------------------

q = phantom.make_phantom(phantom.default_spec(64))
seq = epg.default_sequence(1000)
x_full = phantom.qmaps_to_tsmi(q, seq)
print("head voxels:", int(q.head_mask.sum()), " brain voxels:", int(q.brain_mask.sum()))

# %%
# Operator checks
# ---------------
#
# The adjoint identity <Ax, y> = <x, A^H y> holds to rounding error.

d200 = epg.build_dictionary(n_t1=40, n_t2=40, seq=epg.truncate_sequence(seq, 200))
basis = compute_basis(d200, 5)
coils = acquire.make_coils(64, 4, seed=0)
pattern = acquire.make_sampling("vd", 64, 1000, 40, seed=0)
short_pattern = pattern.truncate(200)
x = rng.standard_normal((64, 64, 5)) + 1j * rng.standard_normal((64, 64, 5))
ax = acquire.forward(x, basis, coils, short_pattern)
y = acquire.KSpace(rng.standard_normal(ax.data.shape) + 1j * rng.standard_normal(ax.data.shape), short_pattern, coils)
gap = abs(np.vdot(y.data, ax.data) - np.vdot(acquire.adjoint(y, basis), x))
print("adjoint gap: %.2e" % (gap / (np.linalg.norm(x) * np.linalg.norm(y.data))))

# %%
# Simulated scan
# --------------
#
# Sample all 1000 frames, add complex noise at 5% of the k-space RMS, then keep
# the first 200 frames.

y_full = acquire.forward_full(x_full, coils, pattern)
sigma = 0.05 * np.sqrt(np.mean(np.abs(y_full.data) ** 2))
y_full = acquire.add_noise(y_full, sigma, seed=1)
y = acquire.truncate_kspace(y_full, 200)
x_ref = compress(x_full[..., :200], basis)

# %%
# Reconstructions
# ---------------

x_grid = svdmrf(y, basis)
x_cs = lrtv(y, basis, LrtvConfig(tv_weight=3e-4, max_iters=60))
for name, xr in (("gridding", x_grid), ("LRTV", x_cs)):
    m = dict_match(xr, d200, basis, mask=q.head_mask)
    print("%-9s TSMI NRMSE %.3f  T1 MAPE %5.1f%%  T2 MAPE %5.1f%%" % (
        name, nrmse(xr, x_ref, q.brain_mask), mape(m.t1, q.t1, q.brain_mask), mape(m.t2, q.t2, q.brain_mask)))
