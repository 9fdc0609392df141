"""SVD temporal compression of dictionaries and image timeseries."""

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensorio import read_tensor, write_tensor


@dataclass(frozen=True)
class SubspaceBasis:
    V: np.ndarray  # (l, s) orthonormal columns
    singular_values: np.ndarray
    source_l: int
    s: int
    grid_hash: str = ""

    def energy_fraction(self):
        sv2 = self.singular_values ** 2
        return float(sv2[: self.s].sum() / sv2.sum())


def grid_hash(grid):
    return hashlib.sha256(np.ascontiguousarray(grid, dtype="<f8").tobytes()).hexdigest()[:16]


def _fix_phase(V):
    idx = np.argmax(np.abs(V), axis=0)
    ph = V[idx, np.arange(V.shape[1])]
    return V * (np.conj(ph) / np.abs(ph))[None, :]


def compute_basis(d, s=5):
    """Top-``s`` right singular vectors of the atom matrix (atoms as rows).

    Each column is rotated so its largest-magnitude entry is real and positive.
    """
    atoms = np.asarray(d.atoms, dtype=complex)
    n, l = atoms.shape
    if not 1 <= s <= min(n, l):
        raise ValueError(f"rank s={s} outside [1, {min(n, l)}]")
    if not np.all(np.isfinite(atoms)):
        raise ValueError("dictionary contains non-finite entries")
    _, sv, vh = np.linalg.svd(atoms, full_matrices=False)
    V = _fix_phase(vh[:s].conj().T)
    return SubspaceBasis(V, sv, l, s, grid_hash(d.grid))


def compress(x_full, basis):
    """x = x_full V, time on the last axis."""
    x_full = np.asarray(x_full)
    if x_full.shape[-1] != basis.source_l:
        raise ValueError(f"time dimension {x_full.shape[-1]} != basis length {basis.source_l}")
    return x_full @ basis.V


def decompress(x, basis):
    """x_full = x V^H, channels on the last axis."""
    x = np.asarray(x)
    if x.shape[-1] != basis.s:
        raise ValueError(f"channel dimension {x.shape[-1]} != basis rank {basis.s}")
    return x @ basis.V.conj().T


def save_basis(path, basis):
    write_tensor(path, basis.V.astype(np.complex64), kind="subspace_basis", source_l=basis.source_l,
                 s=basis.s, grid_hash=basis.grid_hash,
                 singular_values=[float(v) for v in basis.singular_values])


def load_basis(path):
    V, meta = read_tensor(path, with_meta=True)
    return SubspaceBasis(V.astype(complex), np.asarray(meta["singular_values"]), int(meta["source_l"]),
                         int(meta["s"]), meta.get("grid_hash", ""))
