"""FISP fingerprint simulation with the Extended Phase Graph formalism.

States are kept as three arrays over configuration orders k = 0..K-1:
``fp`` holds F+_k, ``fm`` holds conj(F-_k) and ``z`` holds Z_k. RF pulses rotate
about the x axis, so excitation from equilibrium gives a purely imaginary
transverse signal (-i sin alpha). Times in SequenceParams are milliseconds,
relaxation times everywhere else are seconds.
"""

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_T1_RANGE = (0.01, 6.0)
DEFAULT_T2_RANGE = (0.004, 4.0)
ORDER_CAP = 101


@dataclass(frozen=True)
class SequenceParams:
    flip_angles: np.ndarray  # degrees
    tr: float = 10.0
    te: float = 1.908
    ti: float = 18.0
    inversion: bool = True

    def __post_init__(self):
        fa = np.asarray(self.flip_angles, dtype=float).ravel()
        object.__setattr__(self, "flip_angles", fa)
        if fa.size < 1:
            raise ValueError("sequence needs at least one pulse")
        if not (self.tr > self.te >= 0):
            raise ValueError(f"need TR > TE >= 0, got TR={self.tr}, TE={self.te}")
        if self.ti < 0:
            raise ValueError("TI must be non-negative")
        if np.any(fa < 0) or np.any(fa > 180) or not np.all(np.isfinite(fa)):
            raise ValueError("flip angles must lie in [0, 180] degrees")

    @property
    def length(self):
        return self.flip_angles.size

    def to_meta(self):
        return {"flip_angles": self.flip_angles.tolist(), "tr": self.tr, "te": self.te,
                "ti": self.ti, "inversion": bool(self.inversion)}

    @classmethod
    def from_meta(cls, meta):
        return cls(np.asarray(meta["flip_angles"]), meta["tr"], meta["te"], meta["ti"],
                   bool(meta["inversion"]))


@dataclass(frozen=True)
class Fingerprint:
    signal: np.ndarray
    t1: float
    t2: float


@dataclass(frozen=True)
class Dictionary:
    atoms: np.ndarray  # (n_atoms, l) complex
    grid: np.ndarray  # (n_atoms, 2) seconds, columns T1, T2
    sequence: SequenceParams = field(repr=False)

    def __post_init__(self):
        if self.atoms.shape[0] != self.grid.shape[0]:
            raise ValueError("atoms and grid row counts differ")

    @property
    def length(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]


def default_flip_schedule(l=1000, low=10.0, high=70.0):
    """Stand-in flip-angle train: two half-sine lobes rising from `low` to `high`.

    Not a published schedule; use :func:`load_flip_schedule` for a real one.
    """
    n1 = l // 2
    lobes = []
    for n in (n1, l - n1):
        if n:
            lobes.append(low + (high - low) * np.sin(np.pi * (np.arange(n) + 0.5) / n))
    return np.concatenate(lobes)


def default_sequence(l=1000):
    return SequenceParams(default_flip_schedule(l))


def load_flip_schedule(path):
    with open(path) as f:
        vals = [float(line) for line in f if line.strip() and not line.lstrip().startswith("#")]
    return np.asarray(vals)


def save_flip_schedule(path, angles):
    with open(path, "w") as f:
        for a in np.asarray(angles, dtype=float):
            f.write(f"{float(a)!r}\n")


def _n_states(l, max_order):
    n = min(l + 1, ORDER_CAP) if max_order is None else int(max_order)
    if n < 2:
        raise ValueError(f"EPG order bound must be >= 2, got {n}")
    return n


def epg_fisp_batch(t1, t2, seq, max_order=None):
    """Simulate fingerprints for arrays of (t1, t2) in seconds; returns (n, l) complex."""
    t1 = np.atleast_1d(np.asarray(t1, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    t1, t2 = np.broadcast_arrays(t1, t2)
    if np.any(t1 <= 0) or np.any(t2 <= 0) or not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
        raise ValueError("relaxation times must be positive and finite")
    n, l = t1.size, seq.length
    K = _n_states(l, max_order)
    tr, te, ti = seq.tr * 1e-3, seq.te * 1e-3, seq.ti * 1e-3
    e1 = np.exp(-tr / t1)[:, None]
    e2 = np.exp(-tr / t2)[:, None]
    e2te = np.exp(-te / t2)

    fp = np.zeros((n, K), complex)
    fm = np.zeros((n, K), complex)
    z = np.zeros((n, K), complex)
    z[:, 0] = 1.0
    if seq.inversion:
        z[:, 0] = 1.0 - 2.0 * np.exp(-ti / t1)

    out = np.empty((n, l), complex)
    alphas = np.deg2rad(seq.flip_angles)
    for j, a in enumerate(alphas):
        c2, s2 = np.cos(a / 2) ** 2, np.sin(a / 2) ** 2
        ca, sa = np.cos(a), np.sin(a)
        fp, fm, z = (c2 * fp + s2 * fm - 1j * sa * z,
                     s2 * fp + c2 * fm + 1j * sa * z,
                     -0.5j * sa * fp + 0.5j * sa * fm + ca * z)
        out[:, j] = fp[:, 0] * e2te
        fp *= e2
        fm *= e2
        z *= e1
        z[:, 0] += (1.0 - e1[:, 0])
        # unit dephasing: F_k -> F_{k+1}
        fp = np.concatenate([np.conj(fm[:, 1:2]), fp[:, :-1]], axis=1)
        fm = np.concatenate([fm[:, 1:], np.zeros((n, 1), complex)], axis=1)
        fm[:, 0] = np.conj(fp[:, 0])
    return out


def epg_fisp(t1, t2, seq, max_order=None):
    sig = epg_fisp_batch([t1], [t2], seq, max_order)[0]
    return Fingerprint(sig, float(t1), float(t2))


def log_grid(lo, hi, n):
    if n < 1:
        raise ValueError("grid needs at least one point")
    if not (0 < lo) or (n > 1 and lo >= hi):
        raise ValueError(f"degenerate range [{lo}, {hi}] for {n} points")
    if n == 1:
        return np.array([float(lo)])
    return np.geomspace(lo, hi, n)


def build_dictionary(t1_range=DEFAULT_T1_RANGE, t2_range=DEFAULT_T2_RANGE, n_t1=40, n_t2=40,
                     seq=None, filter_t2_gt_t1=True, max_order=None):
    """Simulate atoms over a logarithmic (T1, T2) grid.

    With ``filter_t2_gt_t1`` pairs where T2 exceeds T1 are dropped.
    """
    seq = default_sequence() if seq is None else seq
    t1s = log_grid(*t1_range, n_t1)
    t2s = log_grid(*t2_range, n_t2)
    T1, T2 = np.meshgrid(t1s, t2s, indexing="ij")
    grid = np.stack([T1.ravel(), T2.ravel()], axis=1)
    if filter_t2_gt_t1:
        grid = grid[grid[:, 1] <= grid[:, 0]]
    if len(grid) == 0:
        raise ValueError("dictionary grid is empty after filtering")
    atoms = epg_fisp_batch(grid[:, 0], grid[:, 1], seq, max_order)
    return Dictionary(atoms, grid, seq)


def truncate_sequence(obj, l_new):
    """Keep the first ``l_new`` timepoints of a Dictionary, Fingerprint or SequenceParams."""
    if isinstance(obj, SequenceParams):
        l = obj.length
    elif isinstance(obj, Dictionary):
        l = obj.length
    else:
        l = obj.signal.shape[-1]
    if not 1 <= l_new <= l:
        raise ValueError(f"l_new={l_new} outside [1, {l}]")
    if isinstance(obj, SequenceParams):
        return replace(obj, flip_angles=obj.flip_angles[:l_new])
    if isinstance(obj, Dictionary):
        return Dictionary(obj.atoms[:, :l_new].copy(), obj.grid.copy(),
                          truncate_sequence(obj.sequence, l_new))
    return Fingerprint(obj.signal[:l_new].copy(), obj.t1, obj.t2)


def save_dictionary(prefix, d):
    from .tensorio import write_tensor
    write_tensor(f"{prefix}_atoms.qmrf", d.atoms, kind="dictionary_atoms", sequence=d.sequence.to_meta())
    write_tensor(f"{prefix}_grid.qmrf", d.grid, kind="dictionary_grid", columns=["t1_s", "t2_s"])


def load_dictionary(prefix):
    from .tensorio import read_tensor
    atoms, meta = read_tensor(f"{prefix}_atoms.qmrf", with_meta=True)
    grid = read_tensor(f"{prefix}_grid.qmrf")
    return Dictionary(atoms.astype(complex), grid, SequenceParams.from_meta(meta["sequence"]))
