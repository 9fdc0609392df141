"""Voxel-wise dictionary matching in the compressed domain."""

from dataclasses import dataclass

import numpy as np


@dataclass
class MatchResult:
    t1: np.ndarray
    t2: np.ndarray
    rho: np.ndarray
    index: np.ndarray  # -1 for background
    correlation: np.ndarray


def compressed_atoms(d, basis):
    if d.length != basis.source_l:
        raise ValueError(f"dictionary length {d.length} != basis length {basis.source_l}")
    return d.atoms @ basis.V


def match_signals(x, atoms, tau=0.0, chunk=4096):
    """Normalized-correlation argmax of each row of ``x`` against ``atoms``.

    Returns (index, rho, correlation); rows with norm < tau (or zero) get index -1.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != atoms.shape[1]:
        raise ValueError(f"signal length {x.shape[-1]} != atom length {atoms.shape[1]}")
    if atoms.shape[0] == 0:
        raise ValueError("empty dictionary")
    anorm = np.linalg.norm(atoms, axis=1)
    unit = atoms.conj() / anorm[:, None]
    n = x.shape[0]
    idx = np.full(n, -1)
    rho = np.zeros(n, complex)
    corr = np.zeros(n)
    xnorm = np.linalg.norm(x, axis=1)
    fg = np.flatnonzero((xnorm >= tau) & (xnorm > 0))
    for a in range(0, fg.size, chunk):
        sel = fg[a:a + chunk]
        ip = x[sel] @ unit.T  # <x, d_i> / |d_i|
        best = np.argmax(np.abs(ip), axis=1)
        idx[sel] = best
        rho[sel] = ip[np.arange(sel.size), best] / anorm[best]
        corr[sel] = np.minimum(np.abs(ip[np.arange(sel.size), best]) / xnorm[sel], 1.0)
    return idx, rho, corr


def dict_match(x, d, basis, tau=0.0, mask=None):
    """Match a compressed (H, W, s) timeseries; returns T1/T2 (s), complex rho, index and correlation maps."""
    x = np.asarray(x)
    if x.shape[-1] != basis.s:
        raise ValueError(f"TSMI has {x.shape[-1]} channels, basis rank is {basis.s}")
    shape = x.shape[:-1]
    flat = x.reshape(-1, basis.s)
    if mask is not None:
        flat = np.where(np.asarray(mask).reshape(-1, 1), flat, 0)
    idx, rho, corr = match_signals(flat, compressed_atoms(d, basis), tau)
    fg = idx >= 0
    t1 = np.zeros(idx.size)
    t2 = np.zeros(idx.size)
    t1[fg] = d.grid[idx[fg], 0]
    t2[fg] = d.grid[idx[fg], 1]
    r = lambda a: a.reshape(shape)
    return MatchResult(r(t1), r(t2), r(rho), r(idx), r(corr))


def save_match(prefix, m):
    from .tensorio import write_tensor
    write_tensor(f"{prefix}_t1.qmrf", m.t1, kind="match_t1", units="s")
    write_tensor(f"{prefix}_t2.qmrf", m.t2, kind="match_t2", units="s")
    write_tensor(f"{prefix}_rho.qmrf", m.rho.astype(np.complex64), kind="match_rho")
    write_tensor(f"{prefix}_index.qmrf", m.index, kind="match_index")
    write_tensor(f"{prefix}_corr.qmrf", m.correlation, kind="match_correlation")
