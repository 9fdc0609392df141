"""
Fingerprints, dictionaries and the temporal subspace
====================================================

Simulate FISP fingerprints with the Extended Phase Graph model, check one of
them against a brute-force isochromat simulation, build a small dictionary and
look at how much of it survives compression to five temporal channels.
"""

import numpy as np

from mrfdiff import epg
from mrfdiff.subspace import compress, compute_basis, decompress

# %%
# Sequence
# --------
#
# TR/TE/TI = 10/1.908/18 ms with an inversion prepulse. The flip schedule is the
# built-in stand-in (two sinusoidal lobes between 10 and 70 degrees).

seq = epg.default_sequence(1000)
print("frames:", seq.length, " flip range: %.1f-%.1f deg" % (seq.flip_angles.min(), seq.flip_angles.max()))

# %%
# A single fingerprint
# --------------------

wm = epg.epg_fisp(0.8, 0.07, seq).signal
csf = epg.epg_fisp(4.0, 1.8, seq).signal
print("white matter |signal| at frames 0, 100, 500:", np.round(np.abs(wm[[0, 100, 500]]), 4))
print("csf          |signal| at frames 0, 100, 500:", np.round(np.abs(csf[[0, 100, 500]]), 4))

# %%
# Cross-check against isochromats
# -------------------------------
#
# Averaging many spins dephased uniformly over one cycle reproduces the
# configuration-state result. Only the first 50 frames keep this quick.

short = epg.truncate_sequence(seq, 50)
phases = 2 * np.pi * np.arange(400) / 400
m = np.zeros((400, 3))
m[:, 2] = 1.0
t1, t2 = 1.0, 0.1
tr, te, ti = short.tr * 1e-3, short.te * 1e-3, short.ti * 1e-3
m[:, 2] = 1 - 2 * np.exp(-ti / t1)
iso = np.zeros(50, complex)
for f, a in enumerate(np.deg2rad(short.flip_angles)):
    c, s = np.cos(a), np.sin(a)
    my, mz = m[:, 1].copy(), m[:, 2].copy()
    m[:, 1], m[:, 2] = c * my - s * mz, s * my + c * mz
    iso[f] = np.mean(m[:, 0] + 1j * m[:, 1]) * np.exp(-te / t2)
    e2, e1 = np.exp(-tr / t2), np.exp(-tr / t1)
    m[:, 0] *= e2
    m[:, 1] *= e2
    m[:, 2] = m[:, 2] * e1 + 1 - e1
    cp, sp = np.cos(phases), np.sin(phases)
    m[:, 0], m[:, 1] = cp * m[:, 0] - sp * m[:, 1], sp * m[:, 0] + cp * m[:, 1]
ref = epg.epg_fisp(t1, t2, short).signal
print("EPG vs isochromat relative error: %.2e" % (np.linalg.norm(ref - iso) / np.linalg.norm(iso)))

# %%
# Dictionary and subspace
# -----------------------

d = epg.build_dictionary(n_t1=40, n_t2=40, seq=epg.truncate_sequence(seq, 200))
basis = compute_basis(d, 5)
print("atoms:", len(d), " energy kept by 5 channels: %.5f" % basis.energy_fraction())
err = np.linalg.norm(d.atoms - decompress(compress(d.atoms, basis), basis)) / np.linalg.norm(d.atoms)
print("relative compression error: %.3e" % err)
print("singular values:", np.round(basis.singular_values[:8], 3))
